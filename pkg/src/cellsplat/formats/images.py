"""PNG input and output for float HxWx3 images in [0, 1]."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import FormatError, MissingFileError

IMAGE_SUFFIXES = {".png"}


def read_image(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"no image at {path}")
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except OSError as exc:
        raise FormatError(f"{path}: unreadable image ({exc})") from None
    return arr / 255.0


def write_image(img: np.ndarray, path) -> Path:
    """Clamps to [0, 1] and quantizes to 8 bits."""
    path = Path(path)
    arr = np.clip(np.asarray(img, float), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), "RGB").save(path)
    return path
