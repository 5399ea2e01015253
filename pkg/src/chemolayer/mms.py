"""Manufactured solutions for verifying the viscous solver.

The prescribed state is compatible with every wall condition of the viscous
problem on ``[0, Lx) x [0, Ymax]``: cosine profiles in y give zero normal
derivatives for n and c, and a sine stream function gives ``Phi = omega = 0``
on both ends. Sources are the symbolic residuals of the exact equations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy as sp

from .grid import Grid2D
from .viscous import ViscousSolver, ViscousState

__all__ = ["ManufacturedCase", "manufactured_case", "mms_run", "mms_error",
           "temporal_differences", "observed_order"]


@dataclass
class ManufacturedCase:
    Lx: float
    Ymax: float
    epsilon: float
    exact: dict  # name -> f(t, x, y)
    sources: object  # (t, x, y) -> (sn, sc, sw)

    def state(self, grid: Grid2D, t: float) -> ViscousState:
        x, y = grid.mesh
        return ViscousState.from_arrays(
            grid, self.exact["n"](t, x, y), self.exact["c"](t, x, y),
            self.exact["omega"](t, x, y), self.epsilon, time=t)


def manufactured_case(Lx=2 * np.pi, Ymax=1.0, epsilon=0.5, amp=0.3, flow=0.2,
                      steady=False) -> ManufacturedCase:
    t, x, y = sp.symbols("t x y", real=True)
    k = 2 * sp.pi / sp.nsimplify(Lx)
    m = sp.pi / sp.nsimplify(Ymax)
    e2 = sp.nsimplify(epsilon) ** 2
    if steady:
        T, A = sp.Integer(1), sp.nsimplify(flow)
    else:
        T = 1 + sp.sin(2 * t) / 2
        A = sp.nsimplify(flow) * sp.cos(t)
    n = 1 + sp.nsimplify(amp) * sp.cos(k * x) * sp.cos(m * y) * T
    c = 1 + sp.nsimplify(amp) * sp.sin(k * x) * sp.cos(2 * m * y) * T / 2
    phi = A * sp.sin(k * x) * sp.sin(m * y)
    u1, u2 = sp.diff(phi, y), -sp.diff(phi, x)
    w = sp.diff(u1, y) - sp.diff(u2, x)

    def lap(q):
        return sp.diff(q, x, 2) + sp.diff(q, y, 2)

    def adv(q):
        return u1 * sp.diff(q, x) + u2 * sp.diff(q, y)

    sn = sp.diff(n, t) + adv(n) - lap(n) + sp.diff(n * sp.diff(c, x), x) + sp.diff(n * sp.diff(c, y), y)
    sc = sp.diff(c, t) + adv(c) - e2 * lap(c) + c * n
    sw = sp.diff(w, t) + adv(w) - e2 * lap(w) + sp.diff(n, x)

    def fn(expr):
        f = sp.lambdify((t, x, y), expr, "numpy")
        return lambda tt, xx, yy: np.broadcast_to(f(tt, xx, yy), np.shape(xx)).astype(float)

    exact = {"n": fn(n), "c": fn(c), "omega": fn(w), "u1": fn(u1), "u2": fn(u2)}
    fsn, fsc, fsw = fn(sn), fn(sc), fn(sw)

    def sources(tt, xx, yy):
        return fsn(tt, xx, yy), fsc(tt, xx, yy), fsw(tt, xx, yy)

    return ManufacturedCase(float(Lx), float(Ymax), float(epsilon), exact, sources)


def mms_run(case: ManufacturedCase, grid: Grid2D, dt: float, t_final: float) -> ViscousState:
    solver = ViscousSolver(grid, case.epsilon, dt, sources=case.sources)
    st = case.state(grid, 0.0)
    for _ in range(int(round(t_final / dt))):
        st = solver.step(st)
    return st


FIELDS = ("n", "c", "u1", "u2")


def _l2(grid: Grid2D, a: np.ndarray) -> float:
    return float(np.sqrt(grid.integrate(a * a)))


def mms_error(case: ManufacturedCase, grid: Grid2D, dt: float, t_final: float) -> dict:
    """L2 errors of (n, c, u1, u2) at ``t_final`` against the exact state."""
    st = mms_run(case, grid, dt, t_final)
    x, y = grid.mesh
    return {k: _l2(grid, getattr(st, k) - case.exact[k](st.time, x, y)) for k in FIELDS}


def temporal_differences(case: ManufacturedCase, grid: Grid2D, dts, t_final: float) -> list:
    """L2 norms of differences between runs at successive halved steps.

    The spatial error is common to all runs on one grid and cancels, so the
    ratio of successive differences measures the temporal order alone.
    """
    runs = [mms_run(case, grid, dt, t_final) for dt in dts]
    return [{k: _l2(grid, getattr(a, k) - getattr(b, k)) for k in FIELDS}
            for a, b in zip(runs[:-1], runs[1:])]


def observed_order(errors, ratio: float = 2.0) -> np.ndarray:
    """Pairwise orders ``log(e_i / e_{i+1}) / log(ratio)``."""
    e = np.asarray(errors, dtype=float)
    return np.log(e[:-1] / e[1:]) / np.log(ratio)
