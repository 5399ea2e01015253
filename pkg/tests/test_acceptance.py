"""Acceptance criteria, one test and one PASS/FAIL line each.

The epsilon sweep behind criteria 5 and 6 runs once per module on the
desk-scale defaults of :class:`ExperimentConfig`.
"""

import time

import numpy as np
import pytest

from chemolayer.experiment import (
    RATE_KEYS,
    REMAINDER_KEYS,
    ExperimentConfig,
    run_convergence,
    run_fluid_free_check,
    run_pipeline,
    run_viscous,
)
from chemolayer.grid import Grid2D, LayerGrid
from chemolayer.layers import LayerCoefficients, LayerState, identity_residuals, step_u1b1
from chemolayer.mms import FIELDS, manufactured_case, mms_error, observed_order, temporal_differences
from chemolayer.norms import ConormalWeight, FieldHistory, NormSpec, psi_weight, y_norm, z_norm
from chemolayer.outer import OuterState, step_outer
from chemolayer.viscous import ViscousSolver, ViscousState

from test_layers import _coeffs, heat_profile

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def sweep():
    t0 = time.perf_counter()
    rep = run_convergence(ExperimentConfig())
    return rep, time.perf_counter() - t0


def test_uniform_state_exact(verdict):
    t0 = time.perf_counter()
    g = Grid2D.graded(2 * np.pi, 16, 4.0, 129, 4e-3)
    ones = np.ones(g.shape)
    outer = OuterState.from_arrays(g, ones, ones, g.zeros())
    visc = ViscousSolver(g, 0.1, 1e-3)
    vs = ViscousState.from_arrays(g, ones, ones, g.zeros(), 0.1)
    for _ in range(1000):
        outer = step_outer(outer, 1e-3)
        vs = visc.step(vs)
    exact = np.exp(-1.0)
    errs = {}
    for name, st in (("outer", outer), ("viscous", vs)):
        errs[name] = max(np.max(np.abs(st.c - exact)) / exact, np.max(np.abs(st.n - 1.0)),
                         np.max(np.abs(st.u1)), np.max(np.abs(st.u2)))
    dt_wall = time.perf_counter() - t0
    ok = max(errs.values()) <= 5e-3 and abs(outer.time - 1.0) < 1e-9 and dt_wall <= 10
    verdict("1 uniform state", ok,
            f"rel err outer {errs['outer']:.2e}, viscous {errs['viscous']:.2e} (tol 5e-3), {dt_wall:.1f} s")


def test_layer_heat_oracle(verdict):
    t0 = time.perf_counter()
    lg = LayerGrid.uniform(20.0, 512)
    a = 1.0
    co = _coeffs(lg, dyu1=a)
    s = LayerState.zeros(8, lg, 2 * np.pi)
    for _ in range(5000):
        s.u1b1 = step_u1b1(s, co, 1e-4)
    err = float(np.max(np.abs(s.u1b1 - heat_profile(a, 0.5, lg.z_nodes)[None, :])))
    dt_wall = time.perf_counter() - t0
    verdict("2 layer heat oracle", err <= 1e-3 and dt_wall <= 30,
            f"Linf {err:.2e} at t=0.5 (tol 1e-3), {dt_wall:.1f} s")


def test_structural_identities(verdict):
    cfg = ExperimentConfig(T=0.05)
    grid, lg = cfg.grid(), cfg.layer_grid()
    worst = dict.fromkeys(("nb1_closure", "divergence", "f_dxF", "dz_pb2", "nb2_closure",
                           "u_divergence", "omega_wall", "mass_drift"), 0.0)

    def layer_obs(k, st, tr, ls):
        res = identity_residuals(ls, LayerCoefficients.from_traces(tr, lg))
        for key, v in res.items():
            worst[key] = max(worst[key], v)

    run_pipeline(cfg, grid, lg, observer=layer_obs)
    masses = []

    def visc_obs(k, vs):
        res = vs.wall_residuals()
        worst["u_divergence"] = max(worst["u_divergence"], res["divergence"])
        worst["omega_wall"] = max(worst["omega_wall"], res["omega"])
        masses.append(vs.mass())

    n0 = grid.mass(cfg.initial(grid)[0])
    run_viscous(cfg, grid, min(cfg.epsilons), observer=visc_obs)
    worst["mass_drift"] = max(abs(m - n0) / n0 for m in masses)
    tol = {"nb1_closure": 1e-12, "divergence": 1e-8, "f_dxF": 1e-10, "dz_pb2": 1e-8,
           "nb2_closure": 1e-8, "u_divergence": 1e-10, "omega_wall": 0.0, "mass_drift": 1e-6}
    bad = [k for k in tol if worst[k] > tol[k]]
    detail = ", ".join(f"{k} {worst[k]:.1e}" for k in tol)
    verdict("3 structural identities", not bad, detail + (f"; over tolerance: {bad}" if bad else ""))


def test_fluid_free_degeneracy(verdict):
    base = dict(Nx=16, family="fluid_free")
    flat = run_fluid_free_check(ExperimentConfig(**base, params={"wall_gradient": False}))
    slope = run_fluid_free_check(ExperimentConfig(**base))
    v0 = flat["checks"]["correctors_vanish"]["value"]
    v1 = slope["checks"]["trace_decay"]["value"]
    ok = flat["passed"] and slope["passed"]
    verdict("4 fluid-free degeneracy", ok,
            f"max corrector {v0:.1e} (tol 1e-10), trace decay rel err {v1:.2e} (tol 1e-3)")


def _fit_summary(rep, group, keys):
    parts, ok = [], True
    for k in keys:
        f = rep["fits"][f"{group}.{k}"]
        if f["slope"] is None:
            parts.append(f"{k} {f['note']}")
            ok = False
            continue
        parts.append(f"{k} {f['slope']:.3f}+-{f['ci95']:.3f}")
        ok = ok and f["in_band"]
    return ok, ", ".join(parts)


def test_remainder_scaling(verdict, sweep):
    rep, wall = sweep
    ok, detail = _fit_summary(rep, "remainders", REMAINDER_KEYS)
    lo, hi = rep["config"]["band"]
    verdict("5 remainder scaling", ok and wall <= 900,
            f"slopes {detail} (band [{lo}, {hi}]), sweep {wall:.0f} s")


def test_main_convergence_surrogate(verdict, sweep):
    rep, _ = sweep
    in_band, detail = _fit_summary(rep, "errors", RATE_KEYS)
    su = rep["fits"]["errors.u_L2"]["slope"]
    sa = rep["fits"]["ablation.u_L2"]["slope"]
    smaller = rep["flags"]["ablation_u_slope_smaller"]
    lo, hi = rep["config"]["band"]
    verdict("6 convergence surrogate", in_band and smaller,
            f"error slopes {detail} (band [{lo}, {hi}]); ablated u slope {sa:.3f} "
            f"{'<' if smaller else '>='} corrected {su:.3f}")


def test_norm_oracles(verdict):
    w = ConormalWeight(0.1)
    g = Grid2D.graded(2 * np.pi, 16, 20.0, 513, 5e-3)
    _, y = g.mesh
    yv = y_norm(FieldHistory.static(np.exp(-y), g), NormSpec(0, 0), w)
    lg = LayerGrid.uniform(20.0, 512)
    prof = np.tile(np.exp(-lg.z_nodes), (16, 1))
    zv = z_norm(FieldHistory.static(prof, lg, Lx=2 * np.pi), NormSpec(0, 0, "Z"))
    exact = np.sqrt(np.pi)
    p1, p2 = float(psi_weight(0.25, w)), float(psi_weight(2.0, w))
    ok = (abs(yv - exact) <= 1e-3 and abs(zv - exact) <= 1e-3
          and p1 == pytest.approx(0.025, abs=1e-16) and p2 == pytest.approx(0.2 / 3, abs=1e-16))
    verdict("7 norm oracles", ok,
            f"Y00 {yv:.6f}, Z00 {zv:.6f} (exact {exact:.6f}, tol 1e-3); psi {p1:.7g}, {p2:.7g}")


def test_manufactured_solution_orders(verdict):
    t0 = time.perf_counter()
    case = manufactured_case()
    errs = [mms_error(case, Grid2D.uniform(2 * np.pi, 16, 1.0, ny), 5e-5, 0.1) for ny in (9, 17, 33, 65)]
    space = {k: float(observed_order([e[k] for e in errs])[-1]) for k in FIELDS}
    diffs = temporal_differences(case, Grid2D.uniform(2 * np.pi, 16, 1.0, 33),
                                 (0.01, 0.005, 0.0025, 0.00125), 0.4)
    tmp = {k: float(observed_order([d[k] for d in diffs])[-1]) for k in FIELDS}
    dt_wall = time.perf_counter() - t0
    ok = (min(space.values()) >= 1.8 and all(abs(v - 1) <= 0.1 for v in tmp.values())
          and dt_wall <= 300)
    verdict("8 manufactured solution", ok,
            "spatial " + ", ".join(f"{k} {v:.2f}" for k, v in space.items())
            + "; temporal " + ", ".join(f"{k} {v:.2f}" for k, v in tmp.items())
            + f"; {dt_wall:.0f} s")


def test_ablation_ordering(sweep):
    rep, _ = sweep
    worse = [(r["epsilon"], k) for r in rep["rows"] for k in RATE_KEYS
             if r["errors"][k] > r["ablation"][k]]
    assert rep["flags"]["ablation_ordering"], f"corrected error exceeds outer-only error at {worse}"
