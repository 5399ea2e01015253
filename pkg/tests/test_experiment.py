import json
import warnings

import numpy as np
import pytest

from chemolayer.experiment import (
    ERROR_KEYS,
    REMAINDER_KEYS,
    ExperimentConfig,
    fit_rate,
    run_convergence,
    run_fluid_free_check,
    write_report,
)
from chemolayer.initial import FAMILIES

EPS = np.array([0.2, 0.1, 0.05, 0.025])

TINY = dict(Nx=8, Ny=65, Nz=128, dt=1e-3, T=0.02, epsilons=[0.2, 0.1, 0.05], samples=2)


def test_fit_exact_power():
    fit = fit_rate(zip(EPS, 3 * EPS**1.5))
    assert fit.slope == pytest.approx(1.5, abs=1e-12)
    assert fit.intercept == pytest.approx(np.log(3), abs=1e-12)
    assert fit.residual < 1e-24 and fit.n == 4


def test_fit_constant_norms():
    assert fit_rate(zip(EPS, [0.7] * 4)).slope == pytest.approx(0.0, abs=1e-12)


def test_fit_noisy_power():
    rng = np.random.default_rng(12345)
    for _ in range(20):
        v = 2 * EPS**1.5 * (1 + 0.05 * rng.standard_normal(EPS.size))
        fit = fit_rate(zip(EPS, v))
        assert 1.4 <= fit.slope <= 1.6
        assert fit.ci95 > 0


def test_fit_drops_nonpositive_with_warning():
    rows = list(zip(EPS, EPS**2)) + [(0.01, 0.0), (0.005, -1.0)]
    with pytest.warns(RuntimeWarning, match="dropped 2"):
        fit = fit_rate(rows)
    assert fit.slope == pytest.approx(2.0, abs=1e-12) and fit.n == 4
    with pytest.raises(ValueError, match="at least 3"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fit_rate([(0.1, 1.0), (0.2, 2.0), (0.3, 0.0)])


def test_config_validation(tmp_path):
    with pytest.raises(ValueError, match="decreasing"):
        ExperimentConfig(epsilons=[0.1, 0.2, 0.05])
    with pytest.raises(ValueError, match="positive"):
        ExperimentConfig(epsilons=[0.1, 0.0])
    with pytest.raises(ValueError, match="unknown"):
        ExperimentConfig.from_dict({"Nx": 8, "colour": "red"})
    with pytest.raises(ValueError):
        ExperimentConfig(dt=-1.0)
    cfg = ExperimentConfig(**TINY)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg.to_dict()))
    again = ExperimentConfig.from_json(p)
    assert again == cfg
    with pytest.raises(ValueError, match="3 epsilons"):
        run_convergence(ExperimentConfig(**{**TINY, "epsilons": [0.2, 0.1]}))


def test_sample_steps_respect_window():
    cfg = ExperimentConfig()
    s = cfg.sample_steps()
    assert len(s) == 10 and s[0] == 125 and s[-1] == cfg.steps - 2
    assert s == sorted(set(s))
    assert ExperimentConfig(T=0.041, samples=1).sample_steps() == [203]
    with pytest.raises(ValueError, match="too short"):
        ExperimentConfig(T=4e-4, dt=2e-4).sample_steps()


def test_default_grid_resolves_smallest_layer():
    cfg = ExperimentConfig()
    g = cfg.grid()
    assert g.h_min <= min(cfg.epsilons) / 4
    assert g.Ymax >= max(cfg.epsilons) * cfg.Zmax


def test_incompatible_data_rejected():
    # a chemical wall gradient with uniform cells violates the zero-flux relation

    def bad(grid, **kw):
        _, y = grid.mesh
        return np.ones(grid.shape), 1 + 0.5 * np.exp(-y), grid.zeros()

    FAMILIES["_bad"] = bad
    try:
        with pytest.raises(ValueError, match="compatibility"):
            run_convergence(ExperimentConfig(**{**TINY, "family": "_bad"}))
    finally:
        del FAMILIES["_bad"]


def test_uniform_sweep_is_exact_and_flat():
    rep = run_convergence(ExperimentConfig(**{**TINY, "family": "uniform"}))
    for row in rep["rows"]:
        assert row["status"] == "ok"
        for k in ("n_L2", "c_L2", "u_L2", "n_Linf", "c_Linf", "u_Linf"):
            assert row["errors"][k] <= 1e-8, k
    for k in ("n_L2", "c_L2", "u_L2"):
        f = rep["fits"][f"errors.{k}"]
        assert f["slope"] is None and f["note"].startswith("flat")


@pytest.fixture(scope="module")
def tiny_report():
    return run_convergence(ExperimentConfig(**TINY))


def test_report_complete_and_deterministic(tiny_report):
    rep = tiny_report
    assert set(rep["flags"]) == {"error_slopes_in_band", "ablation_u_slope_smaller",
                                 "ablation_ordering", "remainder_slopes_in_band"}
    for row in rep["rows"]:
        assert row["status"] == "ok"
        assert set(row["errors"]) == set(ERROR_KEYS) == set(row["ablation"])
        assert set(row["remainders"]) == set(REMAINDER_KEYS)
        assert all(np.isfinite(v) for v in row["errors"].values())
    for k in ERROR_KEYS:
        assert f"errors.{k}" in rep["fits"]
    again = run_convergence(ExperimentConfig(**TINY))
    assert json.dumps(again, sort_keys=True) == json.dumps(rep, sort_keys=True)


def test_write_report_files(tiny_report, tmp_path):
    path = write_report(tiny_report, tmp_path)
    assert json.loads(path.read_text())["flags"] == tiny_report["flags"]
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert len(lines) == 1 + len(TINY["epsilons"])
    assert lines[0].startswith("epsilon,status,errors.n_L2")
    dat = (tmp_path / "plots" / "errors_u_L2.dat").read_text().splitlines()
    assert dat[0].startswith("#") and len(dat) == 4
    e, v = map(float, dat[1].split())
    assert e == 0.2 and v == tiny_report["rows"][0]["errors"]["u_L2"]


FF = dict(Nx=8, dt=2e-4, T=0.1, family="fluid_free")


def test_fluid_free_without_wall_gradient():
    rep = run_fluid_free_check(ExperimentConfig(**FF, params={"wall_gradient": False}))
    assert rep["zero_trace"] and rep["passed"]
    assert rep["max_corrector"] <= 1e-10


def test_fluid_free_trace_decay():
    rep = run_fluid_free_check(ExperimentConfig(**FF))
    assert not rep["zero_trace"]
    assert rep["checks"]["trace_decay"]["value"] <= 1e-3
    assert rep["passed"], rep["failures"]


def test_fluid_free_zero_data():
    cfg = ExperimentConfig(**{**FF, "family": "uniform", "params": {"n0": 0.0, "c0": 0.0}, "T": 0.01})
    rep = run_fluid_free_check(cfg)
    assert rep["passed"] and rep["max_corrector"] == 0.0


def test_fluid_free_rejects_moving_fluid():
    with pytest.raises(ValueError, match="velocity"):
        run_fluid_free_check(ExperimentConfig(**{**FF, "family": "shear_plume", "T": 0.01}))
