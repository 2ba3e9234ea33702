"""L1, SSIM and the decoupled appearance loss, each with its exact gradient."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..errors import ShapeMismatchError

K1, K2 = 0.01, 0.03
C1, C2 = K1**2, K2**2


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.2
    ssim_window: int = 11
    ssim_sigma: float = 1.5

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ValueError(f"ssim_window must be a positive odd integer, got {self.ssim_window}")
        if self.ssim_sigma <= 0:
            raise ValueError(f"ssim_sigma must be positive, got {self.ssim_sigma}")


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")


@lru_cache(maxsize=32)
def _valid_filter(n: int, window: int, sigma: float) -> np.ndarray:
    """Toeplitz matrix applying the normalized 1-D Gaussian at every full-window offset."""
    if n < window:
        raise ShapeMismatchError(f"image side {n} is smaller than the SSIM window {window}")
    x = np.arange(window) - window // 2
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    g /= g.sum()
    K = np.zeros((n - window + 1, n))
    for i in range(n - window + 1):
        K[i, i : i + window] = g
    K.setflags(write=False)
    return K


def _blur(x, Kh, Kw):
    return np.einsum("ah,hwc,bw->abc", Kh, x, Kw, optimize=True)


def _blur_adjoint(y, Kh, Kw):
    return np.einsum("ah,abc,bw->hwc", Kh, y, Kw, optimize=True)


def _ssim_terms(a, b, cfg: LossConfig):
    Kh = _valid_filter(a.shape[0], cfg.ssim_window, cfg.ssim_sigma)
    Kw = _valid_filter(a.shape[1], cfg.ssim_window, cfg.ssim_sigma)
    ma, mb = _blur(a, Kh, Kw), _blur(b, Kh, Kw)
    maa, mbb, mab = _blur(a * a, Kh, Kw), _blur(b * b, Kh, Kw), _blur(a * b, Kh, Kw)
    A1 = 2.0 * ma * mb + C1
    A2 = 2.0 * (mab - ma * mb) + C2
    B1 = ma * ma + mb * mb + C1
    B2 = (maa - ma * ma) + (mbb - mb * mb) + C2
    S = (A1 * A2) / (B1 * B2)
    return S, (Kh, Kw, ma, mb, A1, A2, B1, B2)


def ssim(a: np.ndarray, b: np.ndarray, cfg: LossConfig = LossConfig()) -> float:
    """Mean SSIM over every full 11x11 Gaussian window and channel (dynamic range 1).

    Windows never extend past the image border, so constant images give the
    closed-form value exactly.
    """
    _check_pair(a, b)
    S, _ = _ssim_terms(np.asarray(a, float), np.asarray(b, float), cfg)
    return float(S.mean())


def ssim_grad(a: np.ndarray, b: np.ndarray, cfg: LossConfig = LossConfig()):
    """``(ssim(a, b), d ssim / d a)``."""
    _check_pair(a, b)
    a, b = np.asarray(a, float), np.asarray(b, float)
    S, (Kh, Kw, ma, mb, A1, A2, B1, B2) = _ssim_terms(a, b, cfg)
    s = S / S.size
    g_ma = s * (2 * mb / A1 - 2 * mb / A2 - 2 * ma / B1 + 2 * ma / B2)
    g_maa = -s / B2
    g_mab = 2 * s / A2
    grad = _blur_adjoint(g_ma, Kh, Kw) + 2 * a * _blur_adjoint(g_maa, Kh, Kw) + b * _blur_adjoint(g_mab, Kh, Kw)
    return float(S.mean()), grad


def d_ssim(a: np.ndarray, b: np.ndarray, cfg: LossConfig = LossConfig()) -> float:
    return 1.0 - ssim(a, b, cfg)


def l1(a: np.ndarray, b: np.ndarray) -> float:
    _check_pair(a, b)
    return float(np.abs(a - b).mean())


def l1_grad(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # sign(0) = 0
    return np.sign(a - b) / a.size


def loss_plain(render, gt, cfg: LossConfig = LossConfig()) -> float:
    """The usual splatting objective: (1 - lam) L1(render, gt) + lam D-SSIM(render, gt)."""
    return (1.0 - cfg.lam) * l1(render, gt) + cfg.lam * d_ssim(render, gt, cfg)


def loss_decoupled(render, adjusted, gt, cfg: LossConfig = LossConfig()):
    """(1 - lam) L1(adjusted, gt) + lam D-SSIM(render, gt).

    Returns ``(loss, grad_render, grad_adjusted)``. The structural term sees
    only the raw render; the appearance-adjusted image only enters L1.
    """
    _check_pair(render, gt)
    _check_pair(adjusted, gt)
    render, adjusted, gt = (np.asarray(x, float) for x in (render, adjusted, gt))
    s, gs = ssim_grad(render, gt, cfg)
    loss = (1.0 - cfg.lam) * l1(adjusted, gt) + cfg.lam * (1.0 - s)
    return loss, -cfg.lam * gs, (1.0 - cfg.lam) * l1_grad(adjusted, gt)
