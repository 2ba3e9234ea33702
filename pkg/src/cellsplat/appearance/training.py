"""Desk-scale appearance training with renders held fixed."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..errors import FormatError, ShapeMismatchError
from .losses import LossConfig, d_ssim, loss_decoupled
from .network import (
    EMBEDDING_DIM,
    OUT_CHANNELS,
    CnnParams,
    ForwardCache,
    TransformMode,
    apply_transform,
    apply_transform_backward,
    init_params,
    predict_map,
    predict_map_backward,
)

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class Adam:
    """Adam over a dict of arrays, updated in place."""

    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TraceRow:
    step: int
    loss: float
    l1: float
    dssim: float
    # per-view mean of the predicted map, all channels
    map_means: tuple[float, ...] = ()


@dataclass
class AppearanceResult:
    params: CnnParams
    embeddings: np.ndarray
    trace: list[TraceRow] = field(default_factory=list)
    seed: int = 0

    def maps(self, renders: Sequence[np.ndarray]) -> list[np.ndarray]:
        return [predict_map(r, e, self.params) for r, e in zip(renders, self.embeddings)]


def view_loss(render, gt, emb, params: CnnParams, cfg: LossConfig):
    """Loss of one view plus gradients for the CNN and the view's embedding."""
    cache = ForwardCache(None)
    tmap = predict_map(render, emb, params, cache)
    adjusted = apply_transform(render, tmap, params.mode)
    loss, _, g_adj = loss_decoupled(render, adjusted, gt, cfg)
    _, g_map = apply_transform_backward(render, tmap, params.mode, g_adj)
    grads, g_emb = predict_map_backward(cache, params, g_map)
    return loss, grads, g_emb, adjusted, tmap


def train_appearance(
    views: Sequence[tuple[np.ndarray, np.ndarray]],
    mode: TransformMode = "multiply",
    steps: int = 2000,
    lr: float = 1e-3,
    *,
    embedding_dim: int = EMBEDDING_DIM,
    loss_cfg: LossConfig = LossConfig(),
    seed: int = 0,
    zero_last: bool = True,
    params: Optional[CnnParams] = None,
    embeddings: Optional[np.ndarray] = None,
) -> AppearanceResult:
    """Fit the CNN and one embedding per view to (render, gt) pairs.

    Every step takes one Adam update on the mean loss over all views. The
    D-SSIM term is constant here since renders are fixed, but it is kept in
    the trace so values are comparable with full training.
    """
    if not views:
        raise ValueError("train_appearance needs at least one view")
    views = [(np.asarray(r, float), np.asarray(g, float)) for r, g in views]
    for r, g in views:
        if r.shape != g.shape or r.ndim != 3 or r.shape[2] != 3:
            raise ShapeMismatchError(f"render/gt must be matching HxWx3 images, got {r.shape} and {g.shape}")
    if mode not in OUT_CHANNELS:
        raise ValueError(f"unknown transform mode {mode!r}")
    if params is None:
        params = init_params(mode, embedding_dim, seed=seed, zero_last=zero_last)
    else:
        params = params.copy()
    if embeddings is None:
        embeddings = np.random.default_rng([seed, 1]).normal(size=(len(views), params.embedding_dim))
    else:
        embeddings = np.array(embeddings, dtype=float)
    if embeddings.shape != (len(views), params.embedding_dim):
        raise ShapeMismatchError(f"embeddings must be ({len(views)}, {params.embedding_dim}), got {embeddings.shape}")

    state = dict(params.tensors)
    state["embeddings"] = embeddings
    opt = Adam(state, lr=lr)
    trace: list[TraceRow] = []
    n = len(views)
    dssim_terms = [d_ssim(r, g, loss_cfg) for r, g in views]
    for step in range(steps + 1):
        total_grads = {k: np.zeros_like(v) for k, v in state.items()}
        loss_sum = l1_sum = dssim_sum = 0.0
        means = []
        for i, (render, gt) in enumerate(views):
            loss, grads, g_emb, adjusted, tmap = view_loss(render, gt, embeddings[i], params, loss_cfg)
            means.append(float(tmap.mean()))
            for k, g in grads.items():
                total_grads[k] += g / n
            total_grads["embeddings"][i] += g_emb / n
            l1_term = float(np.abs(adjusted - gt).mean())
            loss_sum += loss
            l1_sum += l1_term
            dssim_sum += dssim_terms[i]
        trace.append(TraceRow(step, loss_sum / n, l1_sum / n, dssim_sum / n, tuple(means)))
        if step == steps:
            break
        opt.step(state, total_grads)
        if step % 100 == 0:
            log.debug("appearance step %d loss %.6f", step, loss_sum / n)
    return AppearanceResult(params, embeddings, trace, seed)


def moving_average(values: Sequence[float], window: int = 50) -> np.ndarray:
    v = np.asarray(values, float)
    if len(v) < window:
        return v.copy()
    c = np.cumsum(np.insert(v, 0, 0.0))
    return (c[window:] - c[:-window]) / window


# ---------------------------------------------------------------------------
# persistence
#
# Checkpoints are uncompressed .npz archives (no pickled objects):
#   version          int64 scalar
#   mode             unicode scalar, transform mode
#   identity_offset  bool scalar
#   seed             int64 scalar
#   embeddings       float64 (n_views, embedding_dim)
#   cnn/<layer>_w    float64 (3, 3, C_in, C_out)
#   cnn/<layer>_b    float64 (C_out,)


def save_checkpoint(result: AppearanceResult, path) -> Path:
    path = Path(path)
    arrays = {f"cnn/{k}": v for k, v in result.params.tensors.items()}
    with open(path, "wb") as fid:
        np.savez(
            fid,
            version=np.int64(CHECKPOINT_VERSION),
            mode=np.str_(result.params.mode),
            identity_offset=np.bool_(result.params.identity_offset),
            seed=np.int64(result.seed),
            embeddings=result.embeddings,
            **arrays,
        )
    return path


def load_checkpoint(path) -> AppearanceResult:
    try:
        with np.load(path, allow_pickle=False) as z:
            version = int(z["version"])
            if version != CHECKPOINT_VERSION:
                raise FormatError(f"{path}: unsupported checkpoint version {version}")
            tensors = {k[4:]: z[k] for k in z.files if k.startswith("cnn/")}
            emb = z["embeddings"]
            params = CnnParams(str(z["mode"]), emb.shape[1], tensors, bool(z["identity_offset"]))
            return AppearanceResult(params, emb, [], int(z["seed"]))
    except (KeyError, ValueError, OSError) as exc:
        raise FormatError(f"{path}: unreadable checkpoint ({exc})") from None


def write_trace_csv(trace: Sequence[TraceRow], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fid:
        w = csv.writer(fid)
        n_views = max((len(r.map_means) for r in trace), default=0)
        w.writerow(["step", "loss", "l1", "dssim"] + [f"map_mean_{i}" for i in range(n_views)])
        for row in trace:
            w.writerow([row.step, repr(row.loss), repr(row.l1), repr(row.dssim)] + [repr(m) for m in row.map_means])
    return path


def read_trace_csv(path) -> list[TraceRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fid:
        for r in csv.DictReader(fid):
            means = tuple(float(v) for k, v in r.items() if k.startswith("map_mean_"))
            rows.append(TraceRow(int(r["step"]), float(r["loss"]), float(r["l1"]), float(r["dssim"]), means))
    return rows
