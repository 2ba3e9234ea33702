import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from cellsplat.cli import DEFAULTS, main
from cellsplat.formats import load_cell_dataset, load_colmap_sparse, read_gaussian_ply, save_colmap_sparse
from cellsplat.formats.images import write_image
from cellsplat.geometry import estimate_up


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def last_json(text):
    return json.loads(text.strip().splitlines()[-1])


@pytest.fixture
def sparse(tmp_path, small_scene):
    return save_colmap_sparse(small_scene, tmp_path / "sparse")


@pytest.fixture
def aligned_dir(tmp_path, small_aligned):
    return save_colmap_sparse(small_aligned, tmp_path / "aligned")


def test_align_levels_the_cameras(capsys, sparse, tmp_path):
    code, out, _ = run(capsys, "align", "--input", sparse, "--output", tmp_path / "al")
    assert code == 0
    doc = last_json(out)
    assert doc["cameras"] == 60
    up = estimate_up(load_colmap_sparse(tmp_path / "al"))
    assert abs(abs(up[1]) - 1.0) < 1e-6
    cfg = json.loads((tmp_path / "al" / "effective_config.json").read_text())
    assert cfg["command"] == "align" and cfg["settings"]["seed"] == 0


@pytest.mark.parametrize("grid,count", [(None, 4), ("1x1", 1), ("3x2", 6)])
def test_partition_grid(capsys, aligned_dir, tmp_path, grid, count):
    argv = ["partition", "--input", aligned_dir, "--output", tmp_path / "cells"]
    if grid:
        argv += ["--grid", grid]
    code, out, _ = run(capsys, *argv)
    assert code == 0
    assert len(last_json(out)["cells"]) == count
    assert (tmp_path / "cells" / "layout.svg").read_text().startswith("<svg")
    summary = json.loads((tmp_path / "cells" / "summary.json").read_text())
    assert len(summary["cells"]) == count


def test_flag_beats_config_beats_default(capsys, aligned_dir, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('seed = 5\n[partition]\nthreshold = 0.4\ngrid = "1x2"\n')
    code, _, _ = run(capsys, "--config", cfg, "partition", "--input", aligned_dir,
                     "--output", tmp_path / "cells", "--grid", "2x1")
    assert code == 0
    s = json.loads((tmp_path / "cells" / "effective_config.json").read_text())["settings"]
    assert s["grid"] == "2x1"  # flag
    assert s["threshold"] == 0.4  # config file
    assert s["expansion"] == DEFAULTS["partition"]["expansion"]  # default
    assert s["seed"] == 5


def test_bool_flag_off(capsys, aligned_dir, tmp_path):
    code, _, _ = run(capsys, "partition", "--input", aligned_dir, "--output", tmp_path / "c", "--no-clip-to-image")
    assert code == 0
    s = json.loads((tmp_path / "c" / "effective_config.json").read_text())["settings"]
    assert s["clip_to_image"] is False


@pytest.mark.parametrize(
    "argv,kind",
    [
        (["partition", "--input", "/nonexistent", "--output", "x"], None),
        (["partition"], "UsageError"),
        (["nosuchcommand"], "UsageError"),
    ],
)
def test_errors_are_json_on_stderr_with_exit_2(capsys, tmp_path, argv, kind):
    code, out, err = run(capsys, *argv)
    assert code == 2 and out == ""
    doc = json.loads(err.strip().splitlines()[-1])
    assert set(doc) == {"error", "message", "command"}
    if kind:
        assert doc["error"] == kind


def test_bad_grid_and_config(capsys, aligned_dir, tmp_path):
    code, _, err = run(capsys, "partition", "--input", aligned_dir, "--output", tmp_path / "c", "--grid", "0x2")
    assert code == 2 and "grid" in json.loads(err)["message"]
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[partition]\nbogus = 1\n")
    code, _, err = run(capsys, "--config", cfg, "partition", "--input", aligned_dir, "--output", tmp_path / "c")
    assert code == 2 and "bogus" in json.loads(err)["message"]


def test_train_merge_plot_eval_chain(capsys, aligned_dir, tmp_path):
    cells = tmp_path / "cells"
    assert run(capsys, "partition", "--input", aligned_dir, "--output", cells)[0] == 0
    code, out, _ = run(capsys, "train", "--cells", cells, "--max-parallel", 2)
    assert code == 0 and last_json(out)["done"] == 4
    merged = tmp_path / "merged.ply"
    code, out, _ = run(capsys, "merge", "--cells", cells, "--output", merged)
    assert code == 0
    model = read_gaussian_ply(merged)
    # cells tile the camera footprint; sparse points outside it are culled
    pts = load_colmap_sparse(aligned_dir).point_positions
    specs = [load_cell_dataset(d).spec for d in sorted(cells.glob("cell_*"))]
    inside = sum(any(s.original.contains(x, z) for s in specs) for x, _, z in pts)
    assert model.count == last_json(out)["gaussians"] == inside
    seams = json.loads((tmp_path / "merged_seams.json").read_text())
    assert seams and all("ratio" in r for r in seams)
    code, out, _ = run(capsys, "plot", "--cells", cells, "--sparse", aligned_dir, "--output", tmp_path / "p.svg")
    assert code == 0 and (tmp_path / "p.svg").exists()
    code, out, _ = run(capsys, "eval", "--model", merged, "--sparse", aligned_dir, "--views", 3, "--output", tmp_path / "ev")
    assert code == 0
    # the merged model holds the same points and colours as the reference
    assert last_json(out)["psnr"] >= 40.0
    assert len((tmp_path / "ev" / "metrics.csv").read_text().strip().splitlines()) == 5


def test_merge_without_training_is_a_usage_error(capsys, aligned_dir, tmp_path):
    cells = tmp_path / "cells"
    run(capsys, "partition", "--input", aligned_dir, "--output", cells, "--grid", "1x1")
    code, _, err = run(capsys, "merge", "--cells", cells, "--output", tmp_path / "m.ply")
    assert code == 2 and "train" in json.loads(err)["message"]


def test_train_reports_failed_cells(capsys, aligned_dir, tmp_path):
    cells = tmp_path / "cells"
    run(capsys, "partition", "--input", aligned_dir, "--output", cells, "--grid", "1x2")
    trainer = f"{sys.executable} -c \"import sys; sys.exit(3)\" {{data}} {{out}}"
    code, out, err = run(capsys, "train", "--cells", cells, "--trainer", trainer)
    assert code == 1
    assert last_json(out)["failed"] == 2
    assert json.loads(err)["error"] == "TrainingFailed"


def _pairs(root, gains):
    rng = np.random.default_rng(0)
    (root / "gt").mkdir()
    (root / "renders").mkdir()
    for k, g in enumerate(gains):
        gt = rng.uniform(0.2, 0.8, (32, 32, 3))
        write_image(gt, root / "gt" / f"v{k}.png")
        write_image(np.clip(gt * g, 0, 1), root / "renders" / f"v{k}.png")


def test_eval_directories_and_correction_modes(capsys, tmp_path):
    _pairs(tmp_path, [0.5])
    res = {}
    for cc in ("affine", "none"):
        code, out, _ = run(capsys, "eval", "--renders", tmp_path / "renders", "--gt", tmp_path / "gt",
                           "--color-correction", cc, "--output", tmp_path / cc)
        assert code == 0
        res[cc] = last_json(out)["psnr"]
    assert res["affine"] > res["none"] + 10


def test_appearance_command(capsys, tmp_path):
    _pairs(tmp_path, [0.5, 1.0])
    code, out, _ = run(capsys, "appearance", "--renders", tmp_path / "renders", "--gt", tmp_path / "gt",
                       "--output", tmp_path / "app", "--steps", 5, "--embedding-dim", 8)
    assert code == 0
    doc = last_json(out)
    assert set(doc["map_means"]) == {"v0.png", "v1.png"}
    assert (tmp_path / "app" / "appearance.npz").exists()
    # header plus steps 0..5, step 0 being the untrained network
    assert len((tmp_path / "app" / "loss.csv").read_text().strip().splitlines()) == 7
    assert sorted(p.name for p in (tmp_path / "app" / "adjusted").iterdir()) == ["v0.png", "v1.png"]


def test_console_entry_point_runs(tmp_path):
    res = subprocess.run([sys.executable, "-m", "cellsplat.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("cellsplat ")
