import numpy as np
import pytest

from chemolayer.experiment import ExperimentConfig, run_pipeline
from chemolayer.grid import Grid2D, LayerGrid


@pytest.fixture(scope="session")
def small_grid():
    return Grid2D.graded(2 * np.pi, 32, 4.0, 129, 4e-3)


@pytest.fixture(scope="session")
def lgrid():
    return LayerGrid.uniform(20.0, 512)


@pytest.fixture(scope="session")
def short_run():
    """Shear+plume pipeline on the desk-scale grid, sampled at step 200."""
    cfg = ExperimentConfig(T=0.041, samples=1)
    grid, lg = cfg.grid(), cfg.layer_grid()
    snaps, outer, layers = run_pipeline(cfg, grid, lg, [200])
    return cfg, grid, lg, snaps[200]


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Records one PASS/FAIL line for an acceptance criterion, then asserts it."""

    def record(label: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        print(line)
        _VERDICTS.append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
