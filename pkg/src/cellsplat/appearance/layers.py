"""Forward and reverse-mode kernels for the appearance CNN.

Everything works on single images in HWC layout (float64). Convolution
weights are stored as ``(3, 3, C_in, C_out)``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatchError


def _windows(x: np.ndarray) -> np.ndarray:
    """3x3 neighbourhoods of a zero-padded image, shape (H, W, C, 3, 3)."""
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    return sliding_window_view(xp, (3, 3), axis=(0, 1))


def conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """'Same' 3x3 cross-correlation with zero padding."""
    if x.shape[2] != w.shape[2]:
        raise ShapeMismatchError(f"conv expects {w.shape[2]} input channels, got {x.shape[2]}")
    out = np.tensordot(_windows(x), w, axes=([3, 4, 2], [0, 1, 2]))
    return out + b


def conv3x3_backward(x: np.ndarray, w: np.ndarray, gy: np.ndarray):
    """Gradients of :func:`conv3x3` w.r.t. input, weight and bias."""
    gw = np.tensordot(_windows(x), gy, axes=([0, 1], [0, 1])).transpose(1, 2, 0, 3)
    gb = gy.sum(axis=(0, 1))
    gx = np.tensordot(_windows(gy), w[::-1, ::-1], axes=([3, 4, 2], [0, 1, 3]))
    return gx, gw, gb


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    # subgradient 0 at exactly 0
    return gy * (x > 0)


def pixel_shuffle(x: np.ndarray, r: int = 2) -> np.ndarray:
    """(H, W, C*r*r) -> (H*r, W*r, C); channel ``c*r*r + i*r + j`` lands at offset (i, j)."""
    h, w, c = x.shape
    if c % (r * r):
        raise ShapeMismatchError(f"pixel shuffle needs channels divisible by {r * r}, got {c}")
    co = c // (r * r)
    return x.reshape(h, w, co, r, r).transpose(0, 3, 1, 4, 2).reshape(h * r, w * r, co)


def pixel_shuffle_backward(gy: np.ndarray, r: int = 2) -> np.ndarray:
    hr, wr, co = gy.shape
    h, w = hr // r, wr // r
    return gy.reshape(h, r, w, r, co).transpose(0, 2, 4, 1, 3).reshape(h, w, co * r * r)


@lru_cache(maxsize=64)
def bilinear_matrix(n_out: int, n_in: int) -> np.ndarray:
    """1-D linear interpolation operator with half-pixel centers (align_corners=False)."""
    A = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        A[o, i0] += 1.0 - lam
        A[o, i1] += lam
    A.setflags(write=False)
    return A


def resize_bilinear(x: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    Ay = bilinear_matrix(out_hw[0], x.shape[0])
    Ax = bilinear_matrix(out_hw[1], x.shape[1])
    return np.einsum("ah,hwc,bw->abc", Ay, x, Ax, optimize=True)


def resize_bilinear_backward(gy: np.ndarray, in_hw: tuple[int, int]) -> np.ndarray:
    Ay = bilinear_matrix(gy.shape[0], in_hw[0])
    Ax = bilinear_matrix(gy.shape[1], in_hw[1])
    return np.einsum("ah,abc,bw->hwc", Ay, gy, Ax, optimize=True)
