"""Composite approximation from outer fields and layer correctors.

Layer profiles live on ``(x, z)`` and are lifted to the viscous grid at
``z = y / eps`` by monotone cubic interpolation in z, zero beyond Zmax.
The remainders ``N, K, U1, U2`` are built term by term from outer fields,
wall traces and lifted profiles. :func:`direct_residuals` evaluates the same
quantities by applying the equations to the assembled fields instead, which
makes the two an independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator

from .grid import Grid2D, ScalarField2D, dx_array, dy_array, dyy_array
from .layers import LayerState
from .norms import FieldHistory, _time_derivative
from .outer import OuterState, extract_traces, reconstruct_pressure

__all__ = [
    "ApproxSolution",
    "RemainderFields",
    "assemble",
    "compute_remainders",
    "direct_residuals",
    "layer_histories",
    "LayerLift",
]

TIME_TOL = 1e-9


def _check_inputs(outer: OuterState, layers: LayerState, eps: float, grid: Grid2D | None):
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    if abs(outer.time - layers.time) > TIME_TOL * max(1.0, abs(outer.time)):
        raise ValueError(f"outer time {outer.time} and layer time {layers.time} differ")
    g = outer.grid if grid is None else grid
    if g is not outer.grid and (g.shape != outer.grid.shape
                                or not np.allclose(g.yaxis.nodes, outer.grid.yaxis.nodes)
                                or abs(g.Lx - outer.grid.Lx) > 1e-12):
        raise ValueError("target grid must match the grid of the outer state")
    if layers.nx != g.Nx:
        raise ValueError(f"layers have {layers.nx} x-points, grid has {g.Nx}")
    if g.Ymax < eps * layers.lgrid.Zmax * (1 - 1e-12):
        raise ValueError(
            f"Ymax/eps = {g.Ymax / eps:.3g} < Zmax = {layers.lgrid.Zmax:.3g}: "
            "the strip does not cover the layer domain")
    return g


class LayerLift:
    """Evaluates ``(Nx, Nz)`` layer arrays at ``z = y / eps`` on a 2D grid.

    ``kind="pchip"`` (monotone, C1) is used for the assembled fields;
    ``kind="spline"`` (C2) for residuals that take second y-derivatives of
    lifted profiles.
    """

    def __init__(self, layers: LayerState, grid: Grid2D, eps: float, kind: str = "pchip"):
        if kind not in ("pchip", "spline"):
            raise ValueError(f"unknown interpolation {kind!r}")
        self.kind = kind
        self.lgrid = layers.lgrid
        self.Lx = layers.Lx
        self.eps = float(eps)
        self.grid = grid
        z = grid.yaxis.nodes / eps
        self.mask = z <= self.lgrid.Zmax * (1 + 1e-12)
        self.z = np.minimum(z[self.mask], self.lgrid.Zmax)
        # z on the full grid (E-fields grow in z; lifted profiles vanish beyond Zmax)
        self.z_full = z[None, :]

    def __call__(self, prof: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.shape)
        if np.any(prof):
            if self.kind == "pchip":
                # flat stretches of a decayed profile give harmless 0/0 slopes
                with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                    ip = PchipInterpolator(self.lgrid.z_nodes, prof, axis=1)
            else:
                ip = CubicSpline(self.lgrid.z_nodes, prof, axis=1)
            out[:, self.mask] = ip(self.z)
        return out

    def dz(self, prof: np.ndarray, order: int = 1) -> np.ndarray:
        ax = self.lgrid.zaxis
        d = prof
        for _ in range(order):
            d = ax.apply(ax.d1, d)
        return self(d)

    def dx(self, prof: np.ndarray, order: int = 1) -> np.ndarray:
        return self(dx_array(prof, self.Lx, order))


@dataclass(eq=False)
class ApproxSolution:
    na: ScalarField2D
    ca: ScalarField2D
    u1a: ScalarField2D
    u2a: ScalarField2D
    pa: ScalarField2D | None
    epsilon: float
    time: float
    f: np.ndarray

    @property
    def grid(self) -> Grid2D:
        return self.na.grid

    def omega(self) -> np.ndarray:
        g = self.grid
        return dy_array(self.u1a.values, g.yaxis) - dx_array(self.u2a.values, g.Lx)

    def wall_residuals(self) -> dict:
        g = self.grid
        ax = g.yaxis
        e2 = self.epsilon**2
        return {
            "dyn": float(np.max(np.abs(dy_array(self.na.values, ax)[:, 0]))),
            "dyc": float(np.max(np.abs(dy_array(self.ca.values, ax)[:, 0]))),
            "dyu1": float(np.max(np.abs(dy_array(self.u1a.values, ax)[:, 0]))),
            "u2_minus_f": float(np.max(np.abs(self.u2a.values[:, 0] - e2 * self.f))),
        }


def assemble(outer: OuterState, layers: LayerState, eps: float, target_grid: Grid2D | None = None,
             with_pressure: bool = False, kind: str = "pchip") -> ApproxSolution:
    """Composite fields ``outer + eps^j * layer_j(x, y/eps)``.

    ``u1b2`` is not part of ``u1a``; it only enters the chemical remainder.
    """
    g = _check_inputs(outer, layers, eps, target_grid)
    L = LayerLift(layers, g, eps, kind)
    e, e2 = float(eps), float(eps) ** 2
    t = outer.time
    na = outer.n + e * L(layers.nb1) + e2 * L(layers.nb2)
    ca = outer.c + e * L(layers.cb1) + e2 * L(layers.cb2)
    u1a = outer.u1 + e * L(layers.u1b1)
    u2a = outer.u2 + e2 * L(layers.u2b2)
    pa = None
    if with_pressure:
        pa = ScalarField2D(g, reconstruct_pressure(outer) + e2 * L(layers.pb2), t)
    return ApproxSolution(ScalarField2D(g, na, t), ScalarField2D(g, ca, t),
                          ScalarField2D(g, u1a, t), ScalarField2D(g, u2a, t), pa,
                          e, t, layers.f.copy())


@dataclass(eq=False)
class RemainderFields:
    N: ScalarField2D
    K: ScalarField2D
    U1: ScalarField2D
    U2: ScalarField2D
    epsilon: float
    time: float

    def arrays(self) -> dict:
        return {k: getattr(self, k).values for k in ("N", "K", "U1", "U2")}


def layer_histories(states, names=("nb1", "nb2", "u2b2", "cb1", "cb2", "u1b1")) -> dict:
    """``FieldHistory`` per profile from consecutive equally spaced layer states."""
    states = list(states)
    if not states:
        raise ValueError("no layer states")
    times = np.array([s.time for s in states])
    lg, Lx = states[0].lgrid, states[0].Lx
    return {k: FieldHistory(np.stack([getattr(s, k) for s in states]), times, lg, Lx)
            for k in names}


def _dt_profile(histories: dict, name: str, time: float) -> np.ndarray:
    try:
        h = histories[name]
    except (KeyError, TypeError):
        raise ValueError(f"time-derivative history for {name} is missing")
    if h.depth < 2:
        raise ValueError(f"history for {name} needs at least two snapshots, has {h.depth}")
    hit = np.flatnonzero(np.abs(h.times - time) <= TIME_TOL * max(1.0, abs(time)))
    if hit.size == 0:
        raise ValueError(f"history for {name} does not contain t = {time}")
    return _time_derivative(h.values, h.dt, 1, int(hit[0]))


class _Pieces:
    """Outer fields, their derivatives and the lifted layer quantities."""

    def __init__(self, outer: OuterState, layers: LayerState, eps: float, grid: Grid2D):
        self.g = grid
        ax = grid.yaxis
        Lx = grid.Lx
        self.L = L = LayerLift(layers, grid, eps)
        self.e = float(eps)
        self.y = ax.nodes[None, :]
        self.z = L.z_full
        self.tr = tr = extract_traces(outer)
        col = lambda a: np.asarray(a)[:, None]  # noqa: E731
        self.nbar, self.cbar, self.u1bar = col(tr.nbar), col(tr.cbar), col(tr.u1bar)
        self.dyn, self.dyc, self.a1 = col(tr.dyn), col(tr.dyc), col(tr.dyu1)
        self.b2, self.d2 = col(tr.dyu2), col(tr.dyyu2)
        self.dx_cbar = col(tr.dx("cbar"))
        self.dx_dyc = col(tr.dx("dyc"))
        self.dx_u1bar = col(tr.dx("u1bar"))

        self.n, self.c, self.u1, self.u2 = outer.n, outer.c, outer.u1, outer.u2
        dx = lambda a: dx_array(a, Lx)  # noqa: E731
        dy = lambda a: dy_array(a, ax)  # noqa: E731
        self.dx, self.dy = dx, dy
        self.dyy = lambda a: dyy_array(a, ax)  # noqa: E731
        self.n_x, self.n_y = dx(self.n), dy(self.n)
        self.c_x, self.c_y = dx(self.c), dy(self.c)
        self.u1_x = dx(self.u1)
        self.u1_y = dy(self.u1)
        self.u2_x, self.u2_y = dx(self.u2), dy(self.u2)

        lp = layers
        self.raw = lp
        for k in ("nb1", "nb2", "cb1", "cb2", "u1b1", "u2b2", "u1b2", "pb2"):
            setattr(self, k, L(getattr(lp, k)))
        for k in ("nb1", "nb2", "cb1", "cb2", "u1b1", "u2b2"):
            setattr(self, k + "_z", L.dz(getattr(lp, k)))
        for k in ("nb1", "nb2", "cb1", "cb2", "u1b1", "u2b2", "pb2"):
            setattr(self, k + "_x", L.dx(getattr(lp, k)))


def compute_remainders(outer: OuterState, layers: LayerState, eps: float,
                       target_grid: Grid2D | None, histories: dict) -> RemainderFields:
    """Remainders of the composite approximation from their explicit formulas.

    ``histories`` maps ``nb1``, ``nb2`` and ``u2b2`` to :class:`FieldHistory`
    rings on the layer grid containing ``layers.time``.
    """
    g = _check_inputs(outer, layers, eps, target_grid)
    P = _Pieces(outer, layers, eps, g)
    L, e = P.L, P.e
    e2, e3 = e * e, e**3
    y, z = P.y, P.z
    dx, dy = P.dx, P.dy
    t = layers.time
    nb1_t = L(_dt_profile(histories, "nb1", t))
    nb2_t = L(_dt_profile(histories, "nb2", t))
    u2b2_t = L(_dt_profile(histories, "u2b2", t))

    Bn = e * P.nb1 + e2 * P.nb2
    Bc = e * P.cb1 + e2 * P.cb2
    Bn_x = e * P.nb1_x + e2 * P.nb2_x
    Bc_x = e * P.cb1_x + e2 * P.cb2_x
    n_z = P.nb1_z + e * P.nb2_z
    u2E0 = 0.0  # the outer normal velocity vanishes on the wall

    # cells
    G = ((y * P.dyn + P.nbar - P.n) * P.cb1_z + e * P.nb1 * (P.dyc - P.c_y)
         + e * (P.nbar - P.n) * P.cb2_z - e2 * P.nb2 * (P.c_y + P.cb1_z)
         - e * Bn * P.cb2_z)
    mN = (e * nb1_t + e2 * nb2_t
          + P.u1 * Bn_x + e * P.u1b1 * P.n_x + e * P.u1b1 * Bn_x
          + (P.u2 - u2E0) * n_z + e2 * P.u2b2 * P.n_y + e2 * P.u2b2 * n_z
          - dx(Bn_x - P.n * Bc_x - Bn * P.c_x)
          + dx(Bn * Bc_x)
          - dy(G))

    # chemical
    ca = P.c + Bc
    cE1 = z * P.dyc
    nE1 = z * P.dyn
    mK = (e * (P.u1 - P.u1bar) * P.cb1_x + e2 * (P.u1 - P.u1bar) * P.cb2_x
          + (P.u2 - y * P.b2) * P.cb1_z + e * (P.u2 - y * P.b2) * P.cb2_z
          - e2 * P.dyy(P.c) + e * (P.c - P.cbar) * P.nb1
          + e2 * (P.c - P.cbar) * P.nb2 + e * P.u1b1 * (P.c_x - P.dx_cbar)
          + e3 * P.u1b1 * P.cb2_x
          + e2 * P.u2b2 * (P.c_y - P.dyc) + e3 * P.u2b2 * P.cb2_z
          - e2 * dx(dx(ca)) + e3 * P.cb1 * P.nb2
          + e2 * P.cb2 * (e * P.nb1 + e2 * P.nb2)
          + e * P.cb1 * (P.n - P.nbar) + e2 * P.cb2 * (P.n - P.nbar)
          - e2 * (z * P.a1 * P.cb1_x + 0.5 * z * z * P.d2 * P.cb1_z
                  + P.u1b1 * z * P.dx_dyc + P.u1b2 * P.dx_cbar
                  + cE1 * P.nb1 + P.cb1 * nE1))

    # tangential velocity
    lap_u1 = dx(P.u1_x) + P.dyy(P.u1)
    mU1 = (e * (P.u1 - P.u1bar) * P.u1b1_x + (P.u2 - y * P.b2) * P.u1b1_z
           + e2 * P.pb2_x - e3 * L.dx(layers.u1b1, 2) - e2 * lap_u1
           + e * P.u1b1 * (P.u1_x - P.dx_u1bar)
           + e2 * P.u2b2 * (P.u1_y + P.u1b1_z) + e2 * P.u1b1 * P.u1b1_x)

    # normal velocity
    lap_u2a = (dx(P.u2_x) + P.dyy(P.u2)
               + e2 * L.dx(layers.u2b2, 2) + L.dz(layers.u2b2, 2))
    mU2 = (e2 * u2b2_t
           + e * P.u1b1 * (P.u2_x - u2E0) + e2 * P.u1 * P.u2b2_x
           + e3 * P.u1b1 * P.u2b2_x - e2 * lap_u2a
           + e2 * P.u2b2 * P.u2_y + e * (P.u2 - u2E0) * P.u2b2_z
           + e3 * P.u2b2 * P.u2b2_z - e2 * P.nb2)

    S = lambda a: ScalarField2D(g, -a, t)  # noqa: E731
    return RemainderFields(S(mN), S(mK), S(mU1), S(mU2), e, t)


def direct_residuals(outer: OuterState, layers: LayerState, eps: float,
                     target_grid: Grid2D | None, histories: dict) -> RemainderFields:
    """Remainders obtained by applying the equations to the assembled fields.

    The outer equations eliminate the outer time derivatives, and the outer
    pressure cancels between the composite and outer momentum balances, so
    only layer time derivatives (from ``histories``) and the layer pressure
    are needed. Every spatial derivative acts on the assembled fields.
    """
    g = _check_inputs(outer, layers, eps, target_grid)
    L = LayerLift(layers, g, eps, "spline")
    e, e2 = float(eps), float(eps) ** 2
    ax, Lx = g.yaxis, g.Lx
    t = layers.time
    dx = lambda a: dx_array(a, Lx)  # noqa: E731
    dy = lambda a: dy_array(a, ax)  # noqa: E731
    lap = lambda a: dx_array(a, Lx, 2) + dyy_array(a, ax)  # noqa: E731
    dt = lambda k: L(_dt_profile(histories, k, t))  # noqa: E731

    ap = assemble(outer, layers, eps, g, kind="spline")
    na, ca, u1a, u2a = ap.na.values, ap.ca.values, ap.u1a.values, ap.u2a.values
    n, c, u1, u2 = outer.n, outer.c, outer.u1, outer.u2

    def adv(v1, v2, q):
        return v1 * dx(q) + v2 * dy(q)

    def cells(q, s, v1, v2):
        return adv(v1, v2, q) - lap(q) + dx(q * dx(s)) + dy(q * dy(s))

    mN = e * dt("nb1") + e2 * dt("nb2") + cells(na, ca, u1a, u2a) - cells(n, c, u1, u2)
    mK = (e * dt("cb1") + e2 * dt("cb2")
          + adv(u1a, u2a, ca) + ca * na - e2 * lap(ca) - adv(u1, u2, c) - c * n)
    mU1 = (e * dt("u1b1") + adv(u1a, u2a, u1a) - adv(u1, u2, u1)
           + e2 * L.dx(layers.pb2) - e2 * lap(u1a))
    mU2 = (e2 * dt("u2b2") + adv(u1a, u2a, u2a) - adv(u1, u2, u2)
           + e * L(layers.nb1) - e2 * lap(u2a) - (na - n))
    # d_y (eps^2 pb2(y/eps)) = eps d_z pb2 = eps nb1 is used in closed form above
    S = lambda a: ScalarField2D(g, -a, t)  # noqa: E731
    return RemainderFields(S(mN), S(mK), S(mU1), S(mU2), e, t)
