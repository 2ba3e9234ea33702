"""The appearance CNN and the pixel-wise transform it drives.

A rendered image is downsampled 32x, every pixel gets the view's appearance
embedding appended, and the CNN upsamples that back to a full-resolution
transformation map::

    conv3x3 (3+E -> 256)
    4 x [pixel shuffle x2, conv3x3 (C/4 -> C/2), ReLU]     256 -> 128 -> 64 -> 32 -> 16
    bilinear resize to the render size
    conv3x3 (16 -> 16), ReLU, conv3x3 (16 -> out)

``out`` is 3 (multiply), 6 (multiply + add) or 4 (multiply + gamma).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from ..errors import ShapeMismatchError
from .layers import (
    conv3x3,
    conv3x3_backward,
    pixel_shuffle,
    pixel_shuffle_backward,
    relu,
    relu_backward,
    resize_bilinear,
    resize_bilinear_backward,
)

TransformMode = Literal["multiply", "multiply_add", "multiply_gamma"]
OUT_CHANNELS = {"multiply": 3, "multiply_add": 6, "multiply_gamma": 4}
DOWNSAMPLE = 32
EMBEDDING_DIM = 64
HEAD_CHANNELS = 256
N_BLOCKS = 4
# softplus(GAMMA_IDENTITY) == 1
GAMMA_IDENTITY = float(np.log(np.e - 1.0))
GAMMA_FLOOR = 1e-6

LAYERS = ["head"] + [f"block{k}" for k in range(1, N_BLOCKS + 1)] + ["tail1", "tail2"]


def layer_shapes(in_channels: int, out_channels: int) -> dict[str, tuple[int, int]]:
    shapes = {"head": (in_channels, HEAD_CHANNELS)}
    c = HEAD_CHANNELS
    for k in range(1, N_BLOCKS + 1):
        shapes[f"block{k}"] = (c // 4, c // 2)
        c //= 2
    shapes["tail1"] = (c, c)
    shapes["tail2"] = (c, out_channels)
    return shapes


@dataclass
class CnnParams:
    """Weights ``(3, 3, C_in, C_out)`` and biases per layer, keyed ``<layer>_w`` / ``<layer>_b``."""

    mode: TransformMode
    embedding_dim: int
    tensors: dict[str, np.ndarray]
    identity_offset: bool = True

    def __post_init__(self):
        if self.mode not in OUT_CHANNELS:
            raise ValueError(f"unknown transform mode {self.mode!r}")
        shapes = layer_shapes(3 + self.embedding_dim, OUT_CHANNELS[self.mode])
        for name, (cin, cout) in shapes.items():
            w, b = self.tensors[f"{name}_w"], self.tensors[f"{name}_b"]
            if w.shape != (3, 3, cin, cout) or b.shape != (cout,):
                raise ShapeMismatchError(f"{name}: got {w.shape}/{b.shape}, expected (3, 3, {cin}, {cout})")

    @property
    def out_channels(self) -> int:
        return OUT_CHANNELS[self.mode]

    def offset(self) -> np.ndarray:
        """Constant added to the last conv so a zero network gives the identity transform."""
        off = np.zeros(self.out_channels)
        if self.identity_offset:
            off[:3] = 1.0
            if self.mode == "multiply_gamma":
                off[3] = GAMMA_IDENTITY
        return off

    def copy(self) -> "CnnParams":
        return CnnParams(self.mode, self.embedding_dim,
                         {k: v.copy() for k, v in self.tensors.items()}, self.identity_offset)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}


def init_params(
    mode: TransformMode = "multiply",
    embedding_dim: int = EMBEDDING_DIM,
    seed: int = 0,
    zero_last: bool = True,
    identity_offset: bool = True,
) -> CnnParams:
    """Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    With ``zero_last`` and ``identity_offset`` the initial map is exactly the
    identity transform.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, (cin, cout) in layer_shapes(3 + embedding_dim, OUT_CHANNELS[mode]).items():
        bound = 1.0 / np.sqrt(9 * cin)
        if name == "tail2" and zero_last:
            tensors[f"{name}_w"] = np.zeros((3, 3, cin, cout))
            tensors[f"{name}_b"] = np.zeros(cout)
        else:
            tensors[f"{name}_w"] = rng.uniform(-bound, bound, size=(3, 3, cin, cout))
            tensors[f"{name}_b"] = rng.uniform(-bound, bound, size=cout)
    return CnnParams(mode, embedding_dim, tensors, identity_offset)


# ---------------------------------------------------------------------------
# input preparation


def padded_size(n: int, factor: int = DOWNSAMPLE) -> int:
    return -(-n // factor) * factor


def reflect_pad(img: np.ndarray, factor: int = DOWNSAMPLE) -> np.ndarray:
    h, w = img.shape[:2]
    ph, pw = padded_size(h, factor) - h, padded_size(w, factor) - w
    if ph == 0 and pw == 0:
        return img
    return np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="reflect")


def reflect_pad_backward(g: np.ndarray, hw: tuple[int, int]) -> np.ndarray:
    """Fold gradients of the padded image back onto the original pixels."""
    h, w = hw
    if g.shape[:2] == (h, w):
        return g
    rows = np.pad(np.arange(h), (0, g.shape[0] - h), mode="reflect")
    cols = np.pad(np.arange(w), (0, g.shape[1] - w), mode="reflect")
    out = np.zeros((h, w, g.shape[2]))
    np.add.at(out, (rows[:, None], cols[None, :]), g)
    return out


def downsample(img: np.ndarray, factor: int = DOWNSAMPLE) -> np.ndarray:
    """Area-average pooling by ``factor``; sizes that don't divide are reflect-padded first."""
    img = np.asarray(img, dtype=float)
    if img.size == 0:
        raise ShapeMismatchError("cannot downsample an empty image")
    img = reflect_pad(img, factor)
    h, w, c = img.shape
    return img.reshape(h // factor, factor, w // factor, factor, c).mean(axis=(1, 3))


def downsample_backward(g: np.ndarray, factor: int = DOWNSAMPLE) -> np.ndarray:
    """Gradient w.r.t. the (padded) input of :func:`downsample`."""
    return np.repeat(np.repeat(g, factor, axis=0), factor, axis=1) / (factor * factor)


def concat_embedding(img_small: np.ndarray, emb: np.ndarray) -> np.ndarray:
    if img_small.shape[2] != 3:
        raise ShapeMismatchError(f"expected a 3-channel image, got {img_small.shape[2]}")
    emb = np.asarray(emb, dtype=float).reshape(-1)
    tiled = np.broadcast_to(emb, img_small.shape[:2] + emb.shape)
    return np.concatenate([img_small, tiled], axis=2)


# ---------------------------------------------------------------------------
# CNN


@dataclass
class ForwardCache:
    d: np.ndarray
    pre: dict[str, np.ndarray] = field(default_factory=dict)  # conv inputs
    act: dict[str, np.ndarray] = field(default_factory=dict)  # conv outputs before ReLU
    grad_act: dict[str, np.ndarray] = field(default_factory=dict)  # d loss / d conv output, set by backward
    small_hw: tuple[int, int] = (0, 0)


def cnn_forward(
    d: np.ndarray,
    params: CnnParams,
    out_hw: Optional[tuple[int, int]] = None,
    cache: Optional[ForwardCache] = None,
) -> np.ndarray:
    """Transformation map for the embedded low-resolution input ``d``.

    ``out_hw`` defaults to 32x the input size, i.e. the render resolution.
    """
    if d.shape[2] != 3 + params.embedding_dim:
        raise ShapeMismatchError(
            f"input has {d.shape[2]} channels, expected {3 + params.embedding_dim}"
        )
    if out_hw is None:
        out_hw = (d.shape[0] * DOWNSAMPLE, d.shape[1] * DOWNSAMPLE)
    t = params.tensors
    if cache is not None:
        cache.d = d
    a = conv3x3(d, t["head_w"], t["head_b"])
    for k in range(1, N_BLOCKS + 1):
        name = f"block{k}"
        p = pixel_shuffle(a)
        z = conv3x3(p, t[f"{name}_w"], t[f"{name}_b"])
        if cache is not None:
            cache.pre[name], cache.act[name] = p, z
        a = relu(z)
    if cache is not None:
        cache.small_hw = a.shape[:2]
    r = resize_bilinear(a, out_hw)
    z = conv3x3(r, t["tail1_w"], t["tail1_b"])
    a = relu(z)
    m = conv3x3(a, t["tail2_w"], t["tail2_b"]) + params.offset()
    if cache is not None:
        cache.pre["tail1"], cache.act["tail1"] = r, z
        cache.pre["tail2"] = a
    return m


def cnn_backward(cache: ForwardCache, params: CnnParams, upstream: np.ndarray):
    """Reverse pass: returns ``(grads, grad_d)`` for upstream gradient on the map."""
    t = params.tensors
    grads: dict[str, np.ndarray] = {}
    cache.grad_act["tail2"] = upstream
    g, grads["tail2_w"], grads["tail2_b"] = conv3x3_backward(cache.pre["tail2"], t["tail2_w"], upstream)
    g = cache.grad_act["tail1"] = relu_backward(cache.act["tail1"], g)
    g, grads["tail1_w"], grads["tail1_b"] = conv3x3_backward(cache.pre["tail1"], t["tail1_w"], g)
    g = resize_bilinear_backward(g, cache.small_hw)
    for k in range(N_BLOCKS, 0, -1):
        name = f"block{k}"
        g = cache.grad_act[name] = relu_backward(cache.act[name], g)
        g, grads[f"{name}_w"], grads[f"{name}_b"] = conv3x3_backward(cache.pre[name], t[f"{name}_w"], g)
        g = pixel_shuffle_backward(g)
    cache.grad_act["head"] = g
    g, grads["head_w"], grads["head_b"] = conv3x3_backward(cache.d, t["head_w"], g)
    return grads, g


def cnn_gradients(d: np.ndarray, params: CnnParams, upstream: np.ndarray, out_hw=None) -> dict[str, np.ndarray]:
    """Parameter gradients of ``sum(upstream * cnn_forward(d))``."""
    cache = ForwardCache(d)
    m = cnn_forward(d, params, out_hw, cache)
    if upstream.shape != m.shape:
        raise ShapeMismatchError(f"upstream {upstream.shape} does not match map {m.shape}")
    grads, _ = cnn_backward(cache, params, upstream)
    return grads


# ---------------------------------------------------------------------------
# transforms


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def apply_transform(render: np.ndarray, tmap: np.ndarray, mode: TransformMode) -> np.ndarray:
    """Adjusted image from a render and its transformation map (never clamped).

    The gamma variant raises ``max(render * map[..., :3], 1e-6)`` to the
    power ``softplus(map[..., 3])``.
    """
    if render.shape[:2] != tmap.shape[:2]:
        raise ShapeMismatchError(f"render {render.shape[:2]} vs map {tmap.shape[:2]}")
    if tmap.shape[2] != OUT_CHANNELS[mode]:
        raise ShapeMismatchError(f"{mode} needs {OUT_CHANNELS[mode]} map channels, got {tmap.shape[2]}")
    scaled = render * tmap[..., :3]
    if mode == "multiply":
        return scaled
    if mode == "multiply_add":
        return scaled + tmap[..., 3:6]
    base = np.maximum(scaled, GAMMA_FLOOR)
    return base ** _softplus(tmap[..., 3:4])


def apply_transform_backward(render, tmap, mode: TransformMode, g):
    """Returns ``(grad_render, grad_map)``."""
    gm = np.zeros_like(tmap)
    if mode in ("multiply", "multiply_add"):
        gm[..., :3] = g * render
        gr = g * tmap[..., :3]
        if mode == "multiply_add":
            gm[..., 3:6] = g
        return gr, gm
    scaled = render * tmap[..., :3]
    base = np.maximum(scaled, GAMMA_FLOOR)
    gamma = _softplus(tmap[..., 3:4])
    out = base ** gamma
    g_scaled = g * gamma * base ** (gamma - 1.0) * (scaled > GAMMA_FLOOR)
    gm[..., :3] = g_scaled * render
    gm[..., 3] = (g * out * np.log(base)).sum(axis=2) * _sigmoid(tmap[..., 3])
    return g_scaled * tmap[..., :3], gm


# ---------------------------------------------------------------------------
# render -> map


def predict_map(render: np.ndarray, emb: np.ndarray, params: CnnParams, cache: Optional[ForwardCache] = None):
    """Transformation map at the render's resolution.

    Renders whose sides are not multiples of 32 are reflect-padded, mapped at
    the padded size and cropped back.
    """
    h, w = render.shape[:2]
    d = concat_embedding(downsample(render), emb)
    m = cnn_forward(d, params, (padded_size(h), padded_size(w)), cache)
    return m[:h, :w]


def predict_map_backward(cache: ForwardCache, params: CnnParams, g_map: np.ndarray):
    """``(param_grads, embedding_grad)`` given the gradient on the cropped map.

    Renders are treated as constants, so no gradient flows into them.
    """
    ph, pw = cache.pre["tail1"].shape[:2]
    h, w = g_map.shape[:2]
    if (h, w) != (ph, pw):
        g_map = np.pad(g_map, ((0, ph - h), (0, pw - w), (0, 0)))
    grads, g_d = cnn_backward(cache, params, g_map)
    return grads, g_d[..., 3:].sum(axis=(0, 1))
