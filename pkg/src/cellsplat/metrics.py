"""Image metrics and per-image colour correction."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from .appearance.losses import LossConfig, ssim
from .errors import ShapeMismatchError, FormatError
from .formats.images import IMAGE_SUFFIXES, read_image

PSNR_CAP = 100.0
MSE_FLOOR = 1e-10

CorrectionModel = Literal["affine", "gain"]


def _check(a, b):
    if np.shape(a) != np.shape(b):
        raise ShapeMismatchError(f"image shapes differ: {np.shape(a)} vs {np.shape(b)}")


def mse(a: np.ndarray, b: np.ndarray) -> float:
    _check(a, b)
    return float(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB for data in [0, 1], capped at 100 dB."""
    e = mse(a, b)
    if e < MSE_FLOOR:
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / e))


@dataclass(frozen=True)
class ColorCorrection:
    gain: tuple[float, float, float]
    bias: tuple[float, float, float]

    def __post_init__(self):
        if not np.all(np.isfinite(self.gain + self.bias)):
            raise ValueError("colour correction must be finite")


def fit_color_correction(render: np.ndarray, gt: np.ndarray, model: CorrectionModel = "affine") -> ColorCorrection:
    """Per-channel least-squares fit of ``gain * render + bias`` to ``gt``.

    A constant render channel has no usable gain: it gets gain 0 and bias
    mean(gt) in the affine model (gain 0, bias 0 in the gain-only model).
    """
    _check(render, gt)
    r = np.asarray(render, float).reshape(-1, render.shape[-1])
    g = np.asarray(gt, float).reshape(-1, gt.shape[-1])
    gains, biases = [], []
    for c in range(r.shape[1]):
        x, y = r[:, c], g[:, c]
        if model == "affine":
            xc = x - x.mean()
            var = float(xc @ xc)
            if var <= 1e-12 * max(1.0, float(x @ x)):
                gains.append(0.0)
                biases.append(float(y.mean()))
            else:
                k = float(xc @ (y - y.mean())) / var
                gains.append(k)
                biases.append(float(y.mean() - k * x.mean()))
        elif model == "gain":
            xx = float(x @ x)
            gains.append(float(x @ y) / xx if xx > 0 else 0.0)
            biases.append(0.0)
        else:
            raise ValueError(f"unknown correction model {model!r}")
    return ColorCorrection(tuple(gains), tuple(biases))


def apply_color_correction(render: np.ndarray, cc: ColorCorrection) -> np.ndarray:
    return np.asarray(render, float) * np.asarray(cc.gain) + np.asarray(cc.bias)


def image_metrics(render, gt, correct: bool = True, model: CorrectionModel = "affine") -> dict:
    """PSNR and SSIM of ``render`` against ``gt``, after optional colour correction."""
    _check(render, gt)
    out = {}
    if correct:
        cc = fit_color_correction(render, gt, model)
        render = apply_color_correction(render, cc)
        out["gain"], out["bias"] = list(cc.gain), list(cc.bias)
    out["mse"] = mse(render, gt)
    out["psnr"] = psnr(render, gt)
    out["ssim"] = ssim(np.asarray(render, float), np.asarray(gt, float), LossConfig())
    return out


def evaluate_directories(renders_dir, gt_dir, correct: bool = True, model: CorrectionModel = "affine") -> dict:
    """Metrics for every image name present in both directories."""
    renders_dir, gt_dir = Path(renders_dir), Path(gt_dir)
    for d in (renders_dir, gt_dir):
        if not d.is_dir():
            raise FormatError(f"{d} is not a directory")
    names = sorted(p.name for p in renders_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    paired = [n for n in names if (gt_dir / n).exists()]
    if not paired:
        raise FormatError(f"no image names shared by {renders_dir} and {gt_dir}")
    rows = []
    for name in paired:
        m = image_metrics(read_image(renders_dir / name), read_image(gt_dir / name), correct, model)
        rows.append({"image": name, **m})
    mean = {k: float(np.mean([r[k] for r in rows])) for k in ("mse", "psnr", "ssim")}
    return {"images": rows, "mean": mean, "color_correction": model if correct else None}
