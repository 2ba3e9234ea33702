"""Deterministic stand-in for a Gaussian-splat trainer.

Usage: ``python -m cellsplat.mock_trainer --data CELL_DIR --out OUT.ply``

Emits one Gaussian per point in the cell's ``points3D.ply``, at the point
position, coloured by the point colour, with fixed scale, opacity and
orientation. Start and end wall-clock timestamps go to stdout so callers can
audit concurrency.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .errors import CellsplatError
from .formats.manifest import POINTS_PLY, load_cell_dataset, read_points_ply
from .formats.ply import write_gaussian_ply
from .scene import SH_REST, GaussianModel

SH_C0 = 0.28209479177387814
MOCK_LOG_SCALE = float(np.log(0.01))
MOCK_OPACITY_LOGIT = 0.0  # sigmoid(0) = 0.5


def gaussians_from_points(positions: np.ndarray, colors: np.ndarray) -> GaussianModel:
    n = len(positions)
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    return GaussianModel(
        positions=positions,
        sh_dc=(colors.astype(np.float64) / 255.0 - 0.5) / SH_C0,
        sh_rest=np.zeros((n, SH_REST)),
        opacity=np.full((n, 1), MOCK_OPACITY_LOGIT),
        scales=np.full((n, 3), MOCK_LOG_SCALE),
        rotations=rot,
    )


def train_mock(data_dir, out_path) -> GaussianModel:
    data_dir = Path(data_dir)
    load_cell_dataset(data_dir)
    positions, colors = read_points_ply(data_dir / POINTS_PLY)
    model = gaussians_from_points(positions, colors)
    write_gaussian_ply(model, out_path)
    return model


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="cellsplat.mock_trainer", description=__doc__.splitlines()[0])
    ap.add_argument("--data", required=True, help="cell dataset directory")
    ap.add_argument("--out", required=True, help="output Gaussian PLY")
    ap.add_argument("--sleep", type=float, default=0.0, help="seconds to idle before writing (concurrency tests)")
    args = ap.parse_args(argv)
    print(f"start {time.time():.6f}", flush=True)
    if args.sleep > 0:
        time.sleep(args.sleep)
    try:
        model = train_mock(args.data, args.out)
    except (CellsplatError, OSError) as exc:
        print(f"mock_trainer: {exc}", file=sys.stderr)
        return 2
    print(f"gaussians {model.count}", flush=True)
    print(f"end {time.time():.6f}", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
