import numpy as np
import pytest

from cellsplat.geometry import manhattan_align
from cellsplat.synthetic import aerial_scene

ACCEPTANCE: list[tuple[int, str, bool, str, float]] = []


class CriterionRecord:
    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.details: list[str] = []

    def note(self, text: str) -> None:
        self.details.append(text)


@pytest.fixture
def criterion(request):
    """Records one acceptance criterion; the verdict follows the test outcome."""
    marker = request.node.get_closest_marker("criterion")
    rec = CriterionRecord(*marker.args)
    request.node.user_properties.append(("criterion", rec))
    return rec


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" or (report.when == "setup" and report.failed):
        for key, rec in item.user_properties:
            if key == "criterion":
                ACCEPTANCE.append((rec.number, rec.title, report.passed, "; ".join(rec.details), report.duration))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number, title, ok, details, elapsed in sorted(ACCEPTANCE):
        line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title} ({elapsed:.1f} s)"
        tr.write_line(line)
        if details:
            tr.write_line(f"        {details}")


@pytest.fixture(scope="session")
def small_scene():
    """60 cameras, 2,000 points, misaligned."""
    return aerial_scene(n_cameras=60, n_points=2000, extent=120.0, seed=7)


@pytest.fixture(scope="session")
def small_aligned(small_scene):
    return manhattan_align(small_scene)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_cells(small_aligned):
    """Partition of the small scene as (cells, specs), 2x2 at default settings."""
    from cellsplat.partition import PartitionConfig, partition_scene

    return partition_scene(small_aligned, PartitionConfig())


@pytest.fixture
def cells_root(tmp_path, small_aligned, small_cells):
    """A directory of written cell datasets, fresh for each test."""
    from cellsplat.formats import write_cell_dataset

    root = tmp_path / "cells"
    for cell in small_cells:
        write_cell_dataset(cell, root / cell.spec.name, small_aligned)
    return root
