"""Command-line driver: ``cellsplat <align|partition|train|merge|eval|appearance|plot>``.

Settings resolve as flags > ``--config`` TOML file > built-in defaults. The
TOML file holds one table per subcommand (``[partition]``, ``[train]``, ...)
plus an optional top-level ``seed``. Every subcommand writes the resolved
settings to ``effective_config.json`` in its output directory.

Exit codes: 0 success, 1 the work ran but some of it failed (e.g. a cell
trainer), 2 invalid input or usage. Errors go to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__
from .errors import CellsplatError
from .formats.colmap import load_colmap_sparse, save_colmap_sparse
from .formats.images import IMAGE_SUFFIXES, read_image, write_image
from .formats.manifest import MANIFEST_NAME, load_cell_dataset, write_cell_dataset
from .formats.ply import read_gaussian_ply, write_gaussian_ply

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("cellsplat")

CONFIG_NAME = "effective_config.json"

DEFAULTS: dict[str, dict[str, Any]] = {
    "align": {"up": None},
    "partition": {
        "grid": "2x2",
        "threshold": 0.25,
        "expansion": 0.2,
        "visibility_mode": "airspace_aware",
        "clip_to_image": True,
        "ground_y": None,
        "ground_percentile": 5.0,
        "workers": 1,
    },
    "train": {"trainer": None, "max_parallel": 1},
    "merge": {"strip_fraction": 0.05},
    "eval": {"color_correction": "affine", "radius": 1},
    "appearance": {
        "mode": "multiply",
        "steps": 2000,
        "lr": 0.001,
        "embedding_dim": 64,
        "lam": 0.2,
        "zero_last": True,
    },
    "plot": {},
}


class UsageError(CellsplatError):
    """Bad command-line arguments."""


class JsonArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# configuration


def load_config_file(path: Optional[str]) -> dict:
    if path is None:
        return {}
    p = Path(path)
    try:
        with open(p, "rb") as fid:
            doc = tomllib.load(fid)
    except FileNotFoundError:
        raise UsageError(f"config file {p} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"config file {p}: {exc}") from None
    unknown = set(doc) - set(DEFAULTS) - {"seed"}
    if unknown:
        raise UsageError(f"config file {p}: unknown sections {sorted(unknown)}")
    return doc


def resolve(command: str, args: argparse.Namespace, file_cfg: dict) -> dict:
    """Defaults, overridden by the config file, overridden by explicit flags."""
    eff = dict(DEFAULTS[command])
    section = file_cfg.get(command, {})
    unknown = set(section) - set(eff)
    if unknown:
        raise UsageError(f"[{command}] has unknown keys {sorted(unknown)}; known: {sorted(eff)}")
    eff.update(section)
    for key in eff:
        val = getattr(args, key, None)
        if val is not None:
            eff[key] = val
    seed = args.seed if args.seed is not None else file_cfg.get("seed", 0)
    eff["seed"] = int(seed)
    return eff


def echo_config(directory: Path, command: str, eff: dict, extra: Optional[dict] = None) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "version": __version__, "settings": eff, **(extra or {})}
    path = directory / CONFIG_NAME
    path.write_text(json.dumps(doc, indent=2, default=str) + "\n", encoding="utf-8")
    return path


def parse_grid(text: str) -> tuple[int, int]:
    try:
        m, n = (int(v) for v in str(text).lower().split("x"))
    except ValueError:
        raise UsageError(f"--grid expects MxN (e.g. 2x2), got {text!r}") from None
    if m < 1 or n < 1:
        raise UsageError(f"--grid must be at least 1x1, got {text!r}")
    return m, n


def parse_vector(text) -> Optional[np.ndarray]:
    if text is None:
        return None
    vals = text if isinstance(text, (list, tuple)) else str(text).split(",")
    try:
        v = np.array([float(x) for x in vals])
    except ValueError:
        raise UsageError(f"expected three comma-separated numbers, got {text!r}") from None
    if v.shape != (3,):
        raise UsageError(f"expected three comma-separated numbers, got {text!r}")
    return v


def cell_dirs(root: Path) -> list[Path]:
    dirs = sorted(p.parent for p in Path(root).glob(f"*/{MANIFEST_NAME}"))
    if not dirs:
        raise UsageError(f"no cell directories (*/{MANIFEST_NAME}) under {root}")
    return dirs


# ---------------------------------------------------------------------------
# subcommands


def cmd_align(args, eff) -> int:
    from .geometry import manhattan_align

    bundle = load_colmap_sparse(args.input)
    aligned = manhattan_align(bundle, parse_vector(eff["up"]))
    out = Path(args.output)
    save_colmap_sparse(aligned, out)
    (out / "alignment.json").write_text(
        json.dumps({"world_rotation": aligned.world_rotation.tolist()}, indent=2) + "\n", encoding="utf-8"
    )
    echo_config(out, "align", eff, {"input": str(args.input)})
    print(json.dumps({"output": str(out), "cameras": len(aligned.cameras), "points": len(aligned.points)}))
    return 0


def cmd_partition(args, eff) -> int:
    from .layout import write_layout_svg
    from .partition import PartitionConfig, camera_ground_positions, partition_scene, partition_summary

    m, n = parse_grid(eff["grid"])
    config = PartitionConfig(
        m=m,
        n=n,
        expansion_ratio=float(eff["expansion"]),
        visibility_threshold=float(eff["threshold"]),
        visibility_mode=eff["visibility_mode"],
        clip_to_image=bool(eff["clip_to_image"]),
        ground_y=None if eff["ground_y"] is None else float(eff["ground_y"]),
        ground_percentile=float(eff["ground_percentile"]),
    )
    bundle = load_colmap_sparse(args.input)
    cells = partition_scene(bundle, config, workers=int(eff["workers"]))
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for cell in cells:
        write_cell_dataset(cell, out / cell.spec.name, bundle)
        echo_config(out / cell.spec.name, "partition", eff)
    summary = partition_summary(cells, bundle)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    write_layout_svg(out / "layout.svg", [c.spec for c in cells], camera_ground_positions(bundle),
                     title=f"{m}x{n} partition, {len(bundle.cameras)} cameras")
    echo_config(out, "partition", eff, {"input": str(args.input)})
    print(json.dumps({"output": str(out), "cells": [c.spec.name for c in cells]}))
    return 0


def cmd_train(args, eff) -> int:
    from .orchestrate import MOCK_TRAINER, JobManifest, build_manifest, run_cells

    root = Path(args.cells)
    path = root / "jobs.json"
    trainer = eff["trainer"] or MOCK_TRAINER
    if path.exists() and not args.fresh:
        manifest = JobManifest.load(path)
        manifest.trainer_command = trainer
        manifest.max_parallel = int(eff["max_parallel"])
    else:
        manifest = build_manifest(cell_dirs(root), trainer, int(eff["max_parallel"]), path)
    echo_config(root, "train", eff)
    run_cells(manifest, log_dir=root / "logs")
    counts = manifest.counts()
    print(json.dumps({"manifest": str(path), **counts}))
    if counts["failed"]:
        failed = [c.name for c in manifest.cells if c.status == "failed"]
        _emit_error("TrainingFailed", f"cells failed: {failed}; see logs under {root / 'logs'}", "train")
        return 1
    return 0


def cmd_merge(args, eff) -> int:
    from .merge import merge_cells, seam_report
    from .orchestrate import TRAINED_PLY

    root = Path(args.cells)
    items = []
    for d in cell_dirs(root):
        cell = load_cell_dataset(d)
        ply = d / TRAINED_PLY
        if not ply.exists():
            raise UsageError(f"{d.name} has no {TRAINED_PLY}; run `cellsplat train` first")
        items.append((read_gaussian_ply(ply), cell.spec))
    merged = merge_cells(items)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_gaussian_ply(merged, out)
    report = seam_report(merged, [s for _, s in items], float(eff["strip_fraction"]))
    report_path = Path(args.report) if args.report else out.with_name(out.stem + "_seams.json")
    report_path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    echo_config(out.parent, "merge", eff, {"cells": str(root)})
    print(json.dumps({"output": str(out), "gaussians": merged.count, "seam_report": str(report_path)}))
    return 0


def _render_pairs(model_path: Path, sparse: Path, out: Path, radius: int, views: Optional[int]):
    """Render the merged model and the full sparse cloud from every camera."""
    from .synthetic import gaussian_colors, render_points

    model = read_gaussian_ply(model_path)
    bundle = load_colmap_sparse(sparse)
    cams = bundle.cameras if views is None else bundle.cameras[: max(views, 0)]
    rdir, gdir = out / "renders", out / "gt"
    rdir.mkdir(parents=True, exist_ok=True)
    gdir.mkdir(parents=True, exist_ok=True)
    colors = gaussian_colors(model)
    for cam in cams:
        name = Path(cam.image_name).stem + ".png"
        write_image(render_points(cam, model.positions, colors, radius), rdir / name)
        write_image(render_points(cam, bundle.point_positions, bundle.point_colors / 255.0, radius), gdir / name)
    return rdir, gdir


def cmd_eval(args, eff) -> int:
    from .metrics import evaluate_directories

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    if args.model:
        if not args.sparse:
            raise UsageError("--model needs --sparse to know the cameras and reference points")
        renders, gt = _render_pairs(Path(args.model), Path(args.sparse), out, int(eff["radius"]), args.views)
    else:
        if not (args.renders and args.gt):
            raise UsageError("give either --renders and --gt, or --model and --sparse")
        renders, gt = Path(args.renders), Path(args.gt)
    cc = eff["color_correction"]
    if cc not in ("affine", "gain", "none"):
        raise UsageError(f"--color-correction must be affine, gain or none, got {cc!r}")
    result = evaluate_directories(renders, gt, correct=cc != "none", model=cc if cc != "none" else "affine")
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fid:
        w = csv.writer(fid)
        w.writerow(["image", "mse", "psnr", "ssim"])
        for row in result["images"]:
            w.writerow([row["image"], repr(row["mse"]), repr(row["psnr"]), repr(row["ssim"])])
        w.writerow(["mean", repr(result["mean"]["mse"]), repr(result["mean"]["psnr"]), repr(result["mean"]["ssim"])])
    (out / "metrics.json").write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    echo_config(out, "eval", eff)
    print(json.dumps({"output": str(out), **result["mean"]}))
    return 0


def cmd_appearance(args, eff) -> int:
    from .appearance.losses import LossConfig
    from .appearance.network import apply_transform
    from .appearance.training import save_checkpoint, train_appearance, write_trace_csv

    rdir, gdir = Path(args.renders), Path(args.gt)
    for d in (rdir, gdir):
        if not d.is_dir():
            raise UsageError(f"{d} is not a directory")
    names = sorted(p.name for p in rdir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and (gdir / p.name).exists())
    if not names:
        raise UsageError(f"no PNG names shared by {rdir} and {gdir}")
    views = [(read_image(rdir / n), read_image(gdir / n)) for n in names]
    result = train_appearance(
        views,
        eff["mode"],
        steps=int(eff["steps"]),
        lr=float(eff["lr"]),
        embedding_dim=int(eff["embedding_dim"]),
        loss_cfg=LossConfig(lam=float(eff["lam"])),
        seed=eff["seed"],
        zero_last=bool(eff["zero_last"]),
    )
    out = Path(args.output)
    (out / "adjusted").mkdir(parents=True, exist_ok=True)
    save_checkpoint(result, out / "appearance.npz")
    write_trace_csv(result.trace, out / "loss.csv")
    maps = result.maps([r for r, _ in views])
    for name, (render, _), tmap in zip(names, views, maps):
        write_image(apply_transform(render, tmap, result.params.mode), out / "adjusted" / name)
    echo_config(out, "appearance", eff, {"views": names})
    print(json.dumps({
        "output": str(out),
        "final_loss": result.trace[-1].loss,
        "map_means": {n: float(m[..., :3].mean()) for n, m in zip(names, maps)},
    }))
    return 0


def cmd_plot(args, eff) -> int:
    from .layout import write_layout_svg
    from .partition import camera_ground_positions

    specs = [load_cell_dataset(d).spec for d in cell_dirs(Path(args.cells))]
    cams = camera_ground_positions(load_colmap_sparse(args.sparse)) if args.sparse else None
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_layout_svg(out, specs, cams, title=f"{len(specs)} cells")
    echo_config(out.parent, "plot", eff)
    print(json.dumps({"output": str(out)}))
    return 0


COMMANDS = {
    "align": cmd_align,
    "partition": cmd_partition,
    "train": cmd_train,
    "merge": cmd_merge,
    "eval": cmd_eval,
    "appearance": cmd_appearance,
    "plot": cmd_plot,
}


def _bool_flag(p, name, help_):
    g = p.add_mutually_exclusive_group()
    dest = name.replace("-", "_")
    g.add_argument(f"--{name}", dest=dest, action="store_const", const=True, default=None, help=help_)
    g.add_argument(f"--no-{name}", dest=dest, action="store_const", const=False)


def build_parser() -> argparse.ArgumentParser:
    ap = JsonArgumentParser(prog="cellsplat", description="Partition, train, merge and evaluate large Gaussian-splat scenes.")
    ap.add_argument("--version", action="version", version=f"cellsplat {__version__}")
    ap.add_argument("--config", help="TOML file with per-subcommand tables")
    ap.add_argument("--seed", type=int, default=None, help="random seed echoed to outputs (default 0)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=JsonArgumentParser)

    p = sub.add_parser("align", help="rotate a COLMAP model so the ground is the xz plane")
    p.add_argument("--input", required=True, help="COLMAP sparse model directory")
    p.add_argument("--output", required=True, help="directory for the aligned model")
    p.add_argument("--up", default=None, help="optional up-vector hint 'x,y,z' (default: camera consensus)")

    p = sub.add_parser("partition", help="split an aligned scene into per-cell datasets")
    p.add_argument("--input", required=True, help="aligned COLMAP sparse model directory")
    p.add_argument("--output", required=True, help="directory for cell_<row>_<col>/ datasets")
    p.add_argument("--grid", default=None, help="MxN cells along x and z (default 2x2)")
    p.add_argument("--threshold", type=float, default=None, help="visibility threshold (default 0.25)")
    p.add_argument("--expansion", type=float, default=None, help="boundary expansion ratio (default 0.2)")
    p.add_argument("--visibility-mode", choices=["airspace_aware", "airspace_agnostic"], default=None,
                   help="default airspace_aware")
    _bool_flag(p, "clip-to-image", "clip projected hulls to the image (default on)")
    p.add_argument("--ground-y", type=float, default=None, help="ground height (default: 5th percentile of point y)")
    p.add_argument("--ground-percentile", type=float, default=None, help="percentile used when --ground-y is unset (default 5)")
    p.add_argument("--workers", type=int, default=None, help="threads for per-cell work (default 1)")

    p = sub.add_parser("train", help="run the trainer on every cell")
    p.add_argument("--cells", required=True, help="output directory of `partition`")
    p.add_argument("--trainer", default=None,
                   help="command template with {data} and {out} placeholders (default: built-in mock trainer)")
    p.add_argument("--max-parallel", type=int, default=None, help="concurrent trainers (default 1)")
    p.add_argument("--fresh", action="store_true", help="ignore an existing jobs.json")

    p = sub.add_parser("merge", help="cull trained cells to their bounds and concatenate")
    p.add_argument("--cells", required=True, help="directory of trained cells")
    p.add_argument("--output", required=True, help="merged Gaussian PLY")
    p.add_argument("--report", default=None, help="seam report JSON (default <output>_seams.json)")
    p.add_argument("--strip-fraction", type=float, default=None, help="seam strip width as a cell fraction (default 0.05)")

    p = sub.add_parser("eval", help="PSNR / SSIM between rendered and reference images")
    p.add_argument("--renders", default=None, help="directory of rendered PNGs")
    p.add_argument("--gt", default=None, help="directory of reference PNGs with matching names")
    p.add_argument("--model", default=None, help="Gaussian PLY to render with the point renderer")
    p.add_argument("--sparse", default=None, help="COLMAP model giving cameras and the reference point cloud")
    p.add_argument("--views", type=int, default=None, help="render only the first N cameras")
    p.add_argument("--radius", type=int, default=None, help="point splat radius in pixels (default 1)")
    p.add_argument("--color-correction", choices=["affine", "gain", "none"], default=None, help="default affine")
    p.add_argument("--output", required=True, help="directory for metrics.csv / metrics.json")

    p = sub.add_parser("appearance", help="fit the appearance CNN to render/reference pairs")
    p.add_argument("--renders", required=True, help="directory of rendered PNGs")
    p.add_argument("--gt", required=True, help="directory of reference PNGs with matching names")
    p.add_argument("--output", required=True)
    p.add_argument("--mode", choices=["multiply", "multiply_add", "multiply_gamma"], default=None, help="default multiply")
    p.add_argument("--steps", type=int, default=None, help="Adam steps (default 2000)")
    p.add_argument("--lr", type=float, default=None, help="learning rate (default 0.001)")
    p.add_argument("--embedding-dim", type=int, default=None, help="embedding length (default 64)")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="D-SSIM weight (default 0.2)")
    _bool_flag(p, "zero-last", "start from the identity transform (default on)")

    p = sub.add_parser("plot", help="redraw the partition layout SVG from cell manifests")
    p.add_argument("--cells", required=True)
    p.add_argument("--sparse", default=None, help="COLMAP model for camera dots")
    p.add_argument("--output", required=True, help="SVG path")
    return ap


def _emit_error(kind: str, message: str, command: Optional[str]) -> None:
    print(json.dumps({"error": kind, "message": message, "command": command}), file=sys.stderr)


def main(argv=None) -> int:
    ap = build_parser()
    command = None
    try:
        args = ap.parse_args(argv)
        command = args.command
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        eff = resolve(command, args, load_config_file(args.config))
        return COMMANDS[command](args, eff)
    except (CellsplatError, ValueError, OSError) as exc:
        _emit_error(type(exc).__name__, str(exc), command)
        return 2


if __name__ == "__main__":
    sys.exit(main())
