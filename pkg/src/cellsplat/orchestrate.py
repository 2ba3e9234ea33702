"""Parallel per-cell training through an external trainer executable.

The trainer contract is a command template with ``{data}`` and ``{out}``
placeholders, e.g. ``train.py --data {data} --out {out}``. Exit code 0 plus
an existing output file means success. The job manifest is rewritten
atomically after every status change, so an interrupted run resumes where
it stopped.
"""

from __future__ import annotations

import json
import logging
import os
import shlex
import shutil
import subprocess
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .errors import ManifestError, TrainerNotFoundError

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
STATUSES = ("pending", "running", "done", "failed")
TRAINED_PLY = "trained.ply"
MOCK_TRAINER = f"{shlex.quote(sys.executable)} -m cellsplat.mock_trainer --data {{data}} --out {{out}}"


@dataclass
class CellJob:
    index: int
    name: str
    data_dir: str
    output: str
    status: str = "pending"
    exit_code: Optional[int] = None
    wall_time: Optional[float] = None
    log_file: Optional[str] = None


@dataclass
class JobManifest:
    cells: list[CellJob]
    trainer_command: str = MOCK_TRAINER
    max_parallel: int = 1
    path: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self):
        if self.max_parallel < 1:
            raise ValueError(f"max_parallel must be >= 1, got {self.max_parallel}")
        for job in self.cells:
            if job.status not in STATUSES:
                raise ManifestError(f"{job.name}: unknown status {job.status!r}")

    def to_dict(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "trainer_command": self.trainer_command,
            "max_parallel": self.max_parallel,
            "cells": [asdict(c) for c in self.cells],
        }

    @classmethod
    def from_dict(cls, doc: dict, path=None) -> "JobManifest":
        if doc.get("version") != MANIFEST_VERSION:
            raise ManifestError(f"unsupported job manifest version {doc.get('version')!r}")
        try:
            cells = [CellJob(**c) for c in doc["cells"]]
            return cls(cells, doc["trainer_command"], int(doc["max_parallel"]), path)
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"malformed job manifest: {exc!r}") from None

    def save(self, path=None) -> Path:
        if path is None and self.path is None:
            raise ManifestError("job manifest has no path")
        path = self.path = Path(path or self.path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, path) -> "JobManifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ManifestError(f"no job manifest at {path}") from None
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc, path)

    def counts(self) -> dict[str, int]:
        return {s: sum(c.status == s for c in self.cells) for s in STATUSES}


def build_manifest(
    cell_dirs: Sequence, trainer_command: str = MOCK_TRAINER, max_parallel: int = 1, path=None
) -> JobManifest:
    """One pending job per cell directory, output ``<cell>/trained.ply``."""
    cells = []
    for i, d in enumerate(cell_dirs):
        d = Path(d).resolve()
        cells.append(CellJob(i, d.name, str(d), str(d / TRAINED_PLY)))
    return JobManifest(cells, trainer_command, max_parallel, Path(path) if path else None)


def trainer_argv(template: str, data: str, out: str) -> list[str]:
    """Split the template into argv and substitute the placeholders."""
    if "{data}" not in template or "{out}" not in template:
        raise ValueError("trainer command must contain both {data} and {out} placeholders")
    argv = shlex.split(template)
    if not argv:
        raise ValueError("empty trainer command")
    return [a.replace("{data}", data).replace("{out}", out) for a in argv]


def check_trainer(template: str) -> str:
    exe = shlex.split(template)[0] if template.strip() else ""
    found = shutil.which(exe) if exe else None
    if found is None:
        raise TrainerNotFoundError(f"trainer executable {exe!r} not found on PATH")
    return found


def _prepare_resume(manifest: JobManifest) -> list[CellJob]:
    """Reset interrupted and failed cells; done cells whose output vanished are redone."""
    todo = []
    for job in manifest.cells:
        if job.status == "done" and Path(job.output).exists():
            continue
        if job.status != "pending":
            job.status, job.exit_code, job.wall_time = "pending", None, None
        todo.append(job)
    return todo


def run_cells(manifest: JobManifest, log_dir=None, env: Optional[dict] = None) -> JobManifest:
    """Run every cell that is not already done, at most ``max_parallel`` at once.

    A failing cell is recorded as failed and never stops its siblings.
    """
    check_trainer(manifest.trainer_command)
    for job in manifest.cells:
        trainer_argv(manifest.trainer_command, job.data_dir, job.output)
    if log_dir is None:
        base = manifest.path.parent if manifest.path else Path.cwd()
        log_dir = base / "logs"
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    lock = threading.Lock()
    child_env = dict(os.environ if env is None else env)

    def persist():
        if manifest.path is not None:
            manifest.save()

    def transition(job: CellJob, status: str, **updates):
        with lock:
            job.status = status
            for k, v in updates.items():
                setattr(job, k, v)
            persist()

    def run_one(job: CellJob) -> None:
        out = Path(job.output)
        if out.exists():
            out.unlink()
        log_path = log_dir / f"{job.name}.log"
        transition(job, "running", log_file=str(log_path))
        argv = trainer_argv(manifest.trainer_command, job.data_dir, job.output)
        t0 = time.perf_counter()
        try:
            with open(log_path, "w", encoding="utf-8") as fid:
                code = subprocess.run(argv, stdout=fid, stderr=subprocess.STDOUT, env=child_env).returncode
        except OSError as exc:
            log.error("%s: could not launch trainer: %s", job.name, exc)
            code = 127
        wall = time.perf_counter() - t0
        if code == 0 and out.exists():
            transition(job, "done", exit_code=0, wall_time=wall)
        else:
            if out.exists():
                out.unlink()
            # exit 0 without an output file still counts as a failure
            log.warning("%s failed with exit code %s (log: %s)", job.name, code, log_path)
            transition(job, "failed", exit_code=code, wall_time=wall)

    with lock:
        todo = _prepare_resume(manifest)
        persist()
    if todo:
        with ThreadPoolExecutor(max_workers=manifest.max_parallel) as pool:
            list(pool.map(run_one, todo))
    return manifest
