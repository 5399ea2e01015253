"""End-to-end studies: epsilon sweeps, rate fits and the fluid-free check.

The outer flow and the layer correctors do not depend on eps, so one
pipeline run serves every row of a sweep. Snapshots around each sample time
are kept so that time derivatives of errors and remainders can be taken by
central differences.
"""

from __future__ import annotations

import dataclasses
import json
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import stats

from .composer import assemble, compute_remainders, layer_histories
from .grid import Grid2D, LayerGrid, SolverError, dx_array, dy_array
from .initial import make_initial
from .io import write_csv, write_json
from .layers import LayerCoefficients, LayerState, step_layers
from .norms import ConormalWeight, FieldHistory, NormSpec, l2_in_time, time_norm, y_norm
from .outer import OuterState, check_compatibility, extract_traces, step_outer
from .viscous import ViscousSolver, ViscousState, check_layer_resolution

__all__ = [
    "ExperimentConfig",
    "RateFit",
    "fit_rate",
    "run_pipeline",
    "run_viscous",
    "run_convergence",
    "run_fluid_free_check",
    "write_report",
]

ZERO_NORM = 1e-12
ZERO_TRACE = 1e-9
Y12 = NormSpec(1, 2)


@dataclass
class ExperimentConfig:
    Lx: float = 2 * math.pi
    Nx: int = 64
    Ymax: float = 4.0
    Ny: int = 257
    Zmax: float = 20.0
    Nz: int = 512
    dt: float = 2e-4
    T: float = 0.25
    epsilons: tuple = (0.2, 0.1, 0.05, 0.025)
    delta: float = 0.1
    t0: float | None = None  # rate-fit window start, default T/10
    samples: int = 10
    family: str = "shear_plume"
    params: dict = field(default_factory=dict)
    h_min: float | None = None  # default min(eps) * Zmax / Nz
    compat_tol: float = 1e-3
    remainders: bool = True
    band: tuple = (1.2, 1.8)
    cadence: int = 0  # steps between CLI dumps, 0 means only the final state

    def __post_init__(self):
        self.epsilons = tuple(float(e) for e in self.epsilons)
        self.band = tuple(float(b) for b in self.band)
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("dt and T must be positive")
        if any(e <= 0 for e in self.epsilons):
            raise ValueError("epsilons must be positive")
        if any(a <= b for a, b in zip(self.epsilons, self.epsilons[1:])):
            raise ValueError("epsilons must be strictly decreasing")
        if self.samples < 1:
            raise ValueError("need at least one sample time")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - names)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["epsilons"] = list(self.epsilons)
        d["band"] = list(self.band)
        return d

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def window_start(self) -> float:
        return self.T / 10 if self.t0 is None else float(self.t0)

    def grid(self) -> Grid2D:
        h = self.h_min if self.h_min is not None else min(self.epsilons) * self.Zmax / self.Nz
        return Grid2D.graded(self.Lx, self.Nx, self.Ymax, self.Ny, h)

    def layer_grid(self) -> LayerGrid:
        return LayerGrid.uniform(self.Zmax, self.Nz)

    def initial(self, grid: Grid2D):
        return make_initial(self.family, grid, **self.params)

    def sample_steps(self) -> list[int]:
        """Sample steps in the fit window, leaving room for two neighbours each side."""
        n = self.steps
        first = max(int(math.ceil(self.window_start / self.dt - 1e-9)), 2)
        last = n - 2
        if last < first:
            raise ValueError("run too short for the configured fit window")
        if self.samples == 1:
            return [last]
        return sorted({int(round(s)) for s in np.linspace(first, last, self.samples)})


class RateFit(NamedTuple):
    slope: float
    intercept: float
    residual: float  # sum of squared log residuals
    ci95: float  # half-width of the 95 % interval on the slope
    n: int


def fit_rate(rows) -> RateFit:
    """Least-squares fit of ``log norm = slope * log eps + intercept``."""
    pts = [(float(e), float(v)) for e, v in rows]
    kept = [(e, v) for e, v in pts if v > 0 and e > 0]
    if len(kept) < len(pts):
        warnings.warn(f"dropped {len(pts) - len(kept)} nonpositive norm(s) from the fit",
                      RuntimeWarning, stacklevel=2)
    if len(kept) < 3:
        raise ValueError(f"rate fit needs at least 3 positive pairs, got {len(kept)}")
    x = np.log([e for e, _ in kept])
    y = np.log([v for _, v in kept])
    res = stats.linregress(x, y)
    resid = float(np.sum((y - (res.slope * x + res.intercept)) ** 2))
    dof = len(kept) - 2
    half = float(stats.t.ppf(0.975, dof) * res.stderr) if dof > 0 else float("inf")
    return RateFit(float(res.slope), float(res.intercept), resid, half, len(kept))


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------


def _freeze_velocity(st: OuterState) -> OuterState:
    return OuterState.from_arrays(st.grid, st.n, st.c, np.zeros(st.grid.shape), st.time)


def run_pipeline(cfg: ExperimentConfig, grid: Grid2D, lgrid: LayerGrid, sample_steps=(),
                 frozen_velocity: bool = False, observer=None):
    """Outer flow and layer correctors over ``cfg.steps`` steps.

    Returns ``{step: (outer_states, layer_states)}`` holding steps
    ``step-2 .. step+2`` for every requested sample step, plus the final
    states. ``observer(k, outer, traces, layers)`` is called after each step.
    """
    n, c, w = cfg.initial(grid)
    st = OuterState.from_arrays(grid, n, c, w)
    if frozen_velocity:
        st = _freeze_velocity(st)
    ls = LayerState.zeros(grid.Nx, lgrid, grid.Lx)
    want = set(int(s) for s in sample_steps)
    o_ring, l_ring = deque([st], maxlen=5), deque([ls], maxlen=5)
    snaps = {}
    for k in range(1, cfg.steps + 1):
        st = step_outer(st, cfg.dt)
        if frozen_velocity:
            st = _freeze_velocity(st)
        tr = extract_traces(st)
        ls = step_layers(ls, LayerCoefficients.from_traces(tr, lgrid), cfg.dt)
        o_ring.append(st)
        l_ring.append(ls)
        if observer is not None:
            observer(k, st, tr, ls)
        if k - 2 in want:
            snaps[k - 2] = (list(o_ring), list(l_ring))
    return snaps, st, ls


def run_viscous(cfg: ExperimentConfig, grid: Grid2D, eps: float, sample_steps=(), observer=None):
    """Viscous run; returns ``{step: [states step-1, step, step+1]}`` and the final state."""
    n, c, w = cfg.initial(grid)
    solver = ViscousSolver(grid, eps, cfg.dt)
    vs = ViscousState.from_arrays(grid, n, c, w, eps)
    want = set(int(s) for s in sample_steps)
    ring = deque([vs], maxlen=3)
    snaps = {}
    for k in range(1, cfg.steps + 1):
        vs = solver.step(vs)
        ring.append(vs)
        if observer is not None:
            observer(k, vs)
        if k - 1 in want:
            snaps[k - 1] = list(ring)
    return snaps, vs


# ---------------------------------------------------------------------------
# norms of errors and remainders
# ---------------------------------------------------------------------------


def _history(arrays, times, grid) -> FieldHistory:
    return FieldHistory(np.stack(arrays), np.asarray(times), grid)


def _omega(u1, u2, grid):
    return dy_array(u1, grid.yaxis) - dx_array(u2, grid.Lx)


def _error_norms(grid, w, exact_states, approx_fields) -> dict:
    """L2, Linf and Y^{1,2} norms of the n, c, u and omega errors at the middle snapshot."""
    times = [s.time for s in exact_states]
    errs = {"n": [], "c": [], "u1": [], "u2": [], "omega": []}
    for s, (na, ca, u1a, u2a) in zip(exact_states, approx_fields):
        errs["n"].append(s.n - na)
        errs["c"].append(s.c - ca)
        errs["u1"].append(s.u1 - u1a)
        errs["u2"].append(s.u2 - u2a)
        errs["omega"].append(_omega(s.u1, s.u2, grid) - _omega(u1a, u2a, grid))
    hist = {k: _history(v, times, grid) for k, v in errs.items()}
    l2 = {k: math.sqrt(grid.integrate(v[1] ** 2)) for k, v in errs.items()}
    linf = {k: float(np.max(np.abs(v[1]))) for k, v in errs.items()}
    y12 = {k: y_norm(h, Y12, w, at=1) for k, h in hist.items()}
    out = {}
    for k in ("n", "c", "omega"):
        out[f"{k}_L2"], out[f"{k}_Linf"], out[f"{k}_Y12"] = l2[k], linf[k], y12[k]
    out["u_L2"] = math.hypot(l2["u1"], l2["u2"])
    out["u_Linf"] = max(linf["u1"], linf["u2"])
    out["u_Y12"] = math.hypot(y12["u1"], y12["u2"])
    return out


def _remainder_norms(grid, w, outers, layers, eps) -> dict:
    """Remainder norms at the middle of five snapshots (three evaluations)."""
    R = []
    for j in (1, 2, 3):
        hist = layer_histories(layers[j - 1:j + 2], names=("nb1", "nb2", "u2b2"))
        R.append(compute_remainders(outers[j], layers[j], eps, grid, hist).arrays())
    times = [outers[j].time for j in (1, 2, 3)]
    H = lambda key: _history([r[key] for r in R], times, grid)  # noqa: E731
    Hf = lambda fn: _history([fn(r) for r in R], times, grid)  # noqa: E731
    ax, Lx = grid.yaxis, grid.Lx
    rN = y_norm(H("N"), Y12, w, at=1)
    gK = math.hypot(y_norm(Hf(lambda r: dx_array(r["K"], Lx)), Y12, w, at=1),
                    y_norm(Hf(lambda r: dy_array(r["K"], ax)), Y12, w, at=1))
    rK = time_norm(H("K"), 1, at=1) + gK
    curl = Hf(lambda r: dy_array(r["U1"], ax) - dx_array(r["U2"], Lx))
    rU = (math.hypot(time_norm(H("U1"), 1, at=1), time_norm(H("U2"), 1, at=1))
          + y_norm(curl, Y12, w, at=1))
    return {"N": rN, "K": rK, "U": rU}


ERROR_KEYS = tuple(f"{f}_{k}" for f in ("n", "c", "u", "omega") for k in ("L2", "Linf", "Y12"))
REMAINDER_KEYS = ("N", "K", "U")
RATE_KEYS = ("n_L2", "c_L2", "u_L2")


def _fit_or_none(rows):
    vals = [v for _, v in rows]
    if len(rows) < 3:
        return None, "fewer than 3 rows"
    if max(vals) <= ZERO_NORM:
        return None, "flat: all norms vanish"
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return fit_rate(rows), None
    except ValueError as exc:
        return None, str(exc)


def run_convergence(cfg: ExperimentConfig, progress=None) -> dict:
    """Epsilon sweep against the composite and the outer-only approximations."""
    if len(cfg.epsilons) < 3:
        raise ValueError("a rate fit needs at least 3 epsilons")
    grid, lgrid = cfg.grid(), cfg.layer_grid()
    for eps in cfg.epsilons:
        check_layer_resolution(grid, eps)
    n0, c0, w0 = cfg.initial(grid)
    st0 = OuterState.from_arrays(grid, n0, c0, w0)
    comp = check_compatibility(st0.n, st0.c, st0.u1, st0.u2, grid, order=1)
    if not comp.ok(cfg.compat_tol):
        raise ValueError(f"initial data violates order-1 compatibility: {comp.residuals}")
    log = progress or (lambda msg: None)
    samples = cfg.sample_steps()
    log(f"pipeline: {cfg.steps} steps, samples at {samples}")
    snaps, _, _ = run_pipeline(cfg, grid, lgrid, samples)
    w = ConormalWeight(cfg.delta)
    times = [samples[i] * cfg.dt for i in range(len(samples))]

    rows = []
    for eps in cfg.epsilons:
        row = {"epsilon": eps}
        try:
            vsnaps, _ = run_viscous(cfg, grid, eps, samples)
            per = {"errors": [], "ablation": [], "remainders": []}
            for s in samples:
                outers, layers = snaps[s]
                exact = vsnaps[s]
                comp_fields, outer_fields = [], []
                for j in (1, 2, 3):
                    ap = assemble(outers[j], layers[j], eps, grid)
                    comp_fields.append((ap.na.values, ap.ca.values, ap.u1a.values, ap.u2a.values))
                    o = outers[j]
                    outer_fields.append((o.n, o.c, o.u1, o.u2))
                per["errors"].append(_error_norms(grid, w, exact, comp_fields))
                per["ablation"].append(_error_norms(grid, w, exact, outer_fields))
                if cfg.remainders:
                    per["remainders"].append(_remainder_norms(grid, w, outers, layers, eps))
            row["status"] = "ok"
            row["errors"] = {k: max(e[k] for e in per["errors"]) for k in ERROR_KEYS}
            row["ablation"] = {k: max(e[k] for e in per["ablation"]) for k in ERROR_KEYS}
            if cfg.remainders:
                row["remainders"] = {k: l2_in_time(times, [r[k] for r in per["remainders"]])
                                     for k in REMAINDER_KEYS}
            log(f"eps={eps}: u_L2={row['errors']['u_L2']:.3e}")
        except SolverError as exc:
            row = {"epsilon": eps, "status": "failed", "reason": str(exc)}
            log(f"eps={eps}: failed ({exc})")
        rows.append(row)
    return _summarise(cfg, rows, comp.residuals)


def _summarise(cfg: ExperimentConfig, rows: list, compat: dict) -> dict:
    ok = [r for r in rows if r["status"] == "ok"]
    lo, hi = cfg.band
    fits = {}
    for group, keys in (("errors", ERROR_KEYS), ("ablation", ERROR_KEYS),
                        ("remainders", REMAINDER_KEYS if cfg.remainders else ())):
        for k in keys:
            pairs = [(r["epsilon"], r[group][k]) for r in ok]
            fit, why = _fit_or_none(pairs)
            entry = {"slope": None, "intercept": None, "residual": None, "ci95": None,
                     "n": len(pairs), "note": why}
            if fit is not None:
                entry.update(fit._asdict())
                entry["in_band"] = bool(lo <= fit.slope <= hi)
            fits[f"{group}.{k}"] = entry

    def in_band(keys, group):
        vals = [fits[f"{group}.{k}"].get("in_band") for k in keys]
        return bool(vals) and all(v is True for v in vals)

    def slope(key):
        return fits[key]["slope"]

    su, sa = slope("errors.u_L2"), slope("ablation.u_L2")
    flags = {
        "error_slopes_in_band": in_band(RATE_KEYS, "errors"),
        "ablation_u_slope_smaller": bool(su is not None and sa is not None and sa < su),
        "ablation_ordering": bool(ok) and all(
            r["errors"][k] <= r["ablation"][k] for r in ok for k in RATE_KEYS),
    }
    if cfg.remainders:
        flags["remainder_slopes_in_band"] = in_band(REMAINDER_KEYS, "remainders")
    return {"config": cfg.to_dict(), "compatibility": compat, "rows": rows, "fits": fits,
            "flags": flags}


def write_report(report: dict, out) -> Path:
    """report.json, report.csv and two-column plots/<metric>.dat files."""
    out = Path(out)
    (out / "plots").mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", report)
    cols = [f"errors.{k}" for k in ERROR_KEYS] + [f"ablation.{k}" for k in ERROR_KEYS]
    if any("remainders" in r for r in report["rows"]):
        cols += [f"remainders.{k}" for k in REMAINDER_KEYS]
    table = []
    for r in report["rows"]:
        line = [repr(r["epsilon"]), r["status"]]
        for c in cols:
            g, k = c.split(".")
            line.append(repr(r[g][k]) if r["status"] == "ok" and g in r else "")
        line.append(r.get("reason", ""))
        table.append(line)
    write_csv(out / "report.csv", ["epsilon", "status"] + cols + ["reason"], table)
    for c in cols:
        g, k = c.split(".")
        pts = [(r["epsilon"], r[g][k]) for r in report["rows"] if r["status"] == "ok" and g in r]
        with open(out / "plots" / f"{g}_{k}.dat", "w") as fh:
            fh.write(f"# epsilon {c}\n")
            for e, v in pts:
                fh.write(f"{e!r} {v!r}\n")
    return out / "report.json"


# ---------------------------------------------------------------------------
# fluid-free degeneracy
# ---------------------------------------------------------------------------


def run_fluid_free_check(cfg: ExperimentConfig) -> dict:
    """Layer behaviour with the fluid at rest and x-independent data.

    With zero wall gradient of c every corrector must stay below 1e-10; with
    a nonzero gradient the wall trace must follow
    ``dyc(0) exp(-int_0^t nbar (1 + cbar))`` within 1e-3 relative.
    """
    grid, lgrid = cfg.grid(), cfg.layer_grid()
    n, c, w = cfg.initial(grid)
    st0 = OuterState.from_arrays(grid, n, c, w)
    failures = []
    if max(np.max(np.abs(st0.u1)), np.max(np.abs(st0.u2))) > 1e-12:
        raise ValueError("fluid-free check needs initial velocity 0")
    if max(np.ptp(n, axis=0).max(), np.ptp(c, axis=0).max()) > 1e-12:
        raise ValueError("fluid-free check needs x-independent n and c")
    tr0 = extract_traces(st0)
    zero_trace = float(np.max(np.abs(tr0.dyc))) <= ZERO_TRACE
    acc = {"integral": np.zeros(grid.Nx), "prev": tr0.nbar * (1 + tr0.cbar),
           "corrector": 0.0, "decay": 0.0}

    def observe(k, st, tr, ls):
        cur = tr.nbar * (1 + tr.cbar)
        acc["integral"] = acc["integral"] + 0.5 * cfg.dt * (acc["prev"] + cur)
        acc["prev"] = cur
        acc["corrector"] = max(acc["corrector"], ls.max_abs())
        if not zero_trace:
            pred = tr0.dyc * np.exp(-acc["integral"])
            acc["decay"] = max(acc["decay"], float(np.max(np.abs(tr.dyc - pred) / np.abs(pred))))

    run_pipeline(cfg, grid, lgrid, frozen_velocity=True, observer=observe)
    checks = {}
    if zero_trace:
        checks["correctors_vanish"] = {"value": acc["corrector"], "tol": 1e-10}
    else:
        checks["trace_decay"] = {"value": acc["decay"], "tol": 1e-3}
    for name, chk in checks.items():
        chk["passed"] = bool(chk["value"] <= chk["tol"])
        if not chk["passed"]:
            failures.append(f"{name}: {chk['value']:.3e} > {chk['tol']:.1e}")
    return {"zero_trace": zero_trace, "max_corrector": acc["corrector"], "checks": checks,
            "failures": failures, "passed": not failures}
