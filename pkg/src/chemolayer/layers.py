"""Boundary-layer correctors on the (x, z) strip, z = y / eps.

Orders one and two of the inner expansion: the tangential velocity corrector
``u1b1`` and its induced normal velocity ``u2b2``, the chemical/cell pair
``(cb1, nb1)``, the pressure ``pb2``, and the second-order ``u1b2`` and
``(cb2, nb2)``. Zeroth-order correctors vanish identically and are not stored.

Arrays have shape ``(Nx, Nz)``. Every z-implicit solve uses one factorised
matrix of ``I - dt d_zz`` (Neumann wall, Dirichlet at Zmax) for all columns.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .grid import LayerGrid, SolverError, dx_array, interval_integrals, tail_integrals
from .outer import BoundaryTraces

__all__ = [
    "LayerState",
    "LayerCoefficients",
    "FixedPointWarning",
    "cutoff",
    "step_u1b1",
    "compute_u2b2_and_f",
    "step_cb1_nb1",
    "compute_pb2",
    "step_u1b2",
    "step_cb2_nb2",
    "nb2_closure_rhs",
    "step_layers",
    "zeroth_order_cell_closure",
    "identity_residuals",
    "tail_report",
]

PROFILES = ("u1b1", "cb1", "nb1", "u2b2", "pb2", "u1b2", "cb2", "nb2")


class FixedPointWarning(UserWarning):
    """The cb2/nb2 fixed-point map contracts by less than a factor of ten."""


def cutoff(z: np.ndarray, zmax: float) -> np.ndarray:
    """Smooth cutoff: 1 on [0, zmax/2], quintic smoothstep down to 0 at zmax."""
    s = np.clip((np.asarray(z) - 0.5 * zmax) / (0.5 * zmax), 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


@dataclass
class LayerCoefficients:
    """Taylor-extension coefficients evaluated on the layer grid at one time.

    Column arrays have shape ``(Nx, 1)``; z-dependent ones ``(Nx, Nz)``.
    The growing normal velocities carry the cutoff.
    """

    time: float
    Lx: float
    u1E0: np.ndarray
    dx_u1E0: np.ndarray
    u2E1: np.ndarray
    nE0: np.ndarray
    cE0: np.ndarray
    dx_cE0: np.ndarray
    nE1: np.ndarray
    cE1: np.ndarray
    dx_cE1: np.ndarray
    u1E1: np.ndarray
    dx_u1E1: np.ndarray
    u2E2: np.ndarray
    dyu1: np.ndarray
    dyc: np.ndarray
    dyn: np.ndarray

    @classmethod
    def from_traces(cls, tr: BoundaryTraces, lgrid: LayerGrid) -> "LayerCoefficients":
        z = lgrid.z_nodes[None, :]
        chi = cutoff(z, lgrid.Zmax)
        col = lambda a: np.array(a, dtype=float)[:, None]  # noqa: E731
        dxcol = lambda a: dx_array(np.asarray(a, dtype=float), tr.Lx)[:, None]  # noqa: E731
        return cls(
            time=tr.time,
            Lx=tr.Lx,
            u1E0=col(tr.u1bar),
            dx_u1E0=dxcol(tr.u1bar),
            u2E1=col(tr.dyu2) * z * chi,
            nE0=col(tr.nbar),
            cE0=col(tr.cbar),
            dx_cE0=dxcol(tr.cbar),
            nE1=col(tr.dyn) * z,
            cE1=col(tr.dyc) * z,
            dx_cE1=dxcol(tr.dyc) * z,
            u1E1=col(tr.dyu1) * z,
            dx_u1E1=dxcol(tr.dyu1) * z,
            u2E2=0.5 * col(tr.dyyu2) * z * z * chi,
            dyu1=col(tr.dyu1),
            dyc=col(tr.dyc),
            dyn=col(tr.dyn),
        )

    @classmethod
    def zeros(cls, nx: int, lgrid: LayerGrid, Lx: float, time: float = 0.0):
        tr = BoundaryTraces(time, Lx, *[np.zeros(nx) for _ in range(8)])
        return cls.from_traces(tr, lgrid)


@dataclass
class LayerState:
    lgrid: LayerGrid
    Lx: float
    u1b1: np.ndarray
    cb1: np.ndarray
    nb1: np.ndarray
    u2b2: np.ndarray
    pb2: np.ndarray
    u1b2: np.ndarray
    cb2: np.ndarray
    nb2: np.ndarray
    f: np.ndarray
    F: np.ndarray
    time: float = 0.0

    @classmethod
    def zeros(cls, nx: int, lgrid: LayerGrid, Lx: float, time: float = 0.0) -> "LayerState":
        z = np.zeros((nx, lgrid.Nz))
        return cls(lgrid, Lx, *[z.copy() for _ in PROFILES], np.zeros(nx), np.zeros(nx), time)

    @property
    def nx(self) -> int:
        return self.u1b1.shape[0]

    def scaled(self, factor: float) -> "LayerState":
        kw = {k: factor * getattr(self, k) for k in PROFILES + ("f", "F")}
        return replace(self, **kw)

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(getattr(self, k)))) for k in PROFILES)


# ---------------------------------------------------------------------------
# z-implicit machinery
# ---------------------------------------------------------------------------


class _ZSolver:
    """Factorised ``I - dt L_z`` with a Neumann wall and Dirichlet top."""

    def __init__(self, lgrid: LayerGrid, dt: float):
        self.lgrid = lgrid
        ax = lgrid.zaxis
        A = sp.lil_matrix(sp.identity(lgrid.Nz) - dt * ax.lap)
        A[-1, :] = 0.0
        A[-1, -1] = 1.0
        self._lu = splu(A.tocsc())
        self.dt = dt
        self.v0 = ax.vol[0]

    def solve(self, rhs: np.ndarray, wall_flux) -> np.ndarray:
        """Solve with ``d_z v(0) = wall_flux`` (array over x or scalar)."""
        b = np.array(rhs, dtype=float)
        b[:, 0] -= self.dt * np.broadcast_to(np.ravel(wall_flux), (b.shape[0],)) / self.v0
        b[:, -1] = 0.0
        out = self._lu.solve(np.ascontiguousarray(b.T)).T
        if not np.all(np.isfinite(out)):
            raise SolverError("layer solve produced non-finite values")
        return out


_ZCACHE: dict[tuple[int, float], _ZSolver] = {}


def _zsolver(lgrid: LayerGrid, dt: float) -> _ZSolver:
    key = (id(lgrid), float(dt))
    s = _ZCACHE.get(key)
    if s is None or s.lgrid is not lgrid:
        s = _ZSolver(lgrid, dt)
        _ZCACHE[key] = s
    return s


def _dz(a: np.ndarray, lgrid: LayerGrid) -> np.ndarray:
    ax = lgrid.zaxis
    return ax.apply(ax.d1, a)


def _dx(a: np.ndarray, Lx: float) -> np.ndarray:
    return dx_array(a, Lx)


def _cfl(coeffs: LayerCoefficients, lgrid: LayerGrid, dt: float, extra_u1=None):
    nx = coeffs.u1E0.shape[0]
    kmax = np.pi * nx / coeffs.Lx
    vx = float(np.max(np.abs(coeffs.u1E0)))
    if extra_u1 is not None:
        vx += float(np.max(np.abs(extra_u1)))
    vz = float(np.max(np.abs(coeffs.u2E1)))
    rate = vx * kmax + vz / float(np.min(lgrid.zaxis.h))
    if rate * dt > 1.0:
        raise SolverError(f"layer CFL violation: dt={dt:.3e} exceeds {1.0 / rate:.3e}")


# ---------------------------------------------------------------------------
# first order
# ---------------------------------------------------------------------------


def step_u1b1(state: LayerState, coeffs: LayerCoefficients, dt: float) -> np.ndarray:
    """Tangential velocity corrector, forced by the outer wall shear."""
    lg, Lx = state.lgrid, state.Lx
    _cfl(coeffs, lg, dt)
    v = state.u1b1
    expl = coeffs.u1E0 * _dx(v, Lx) + coeffs.u2E1 * _dz(v, lg) + v * coeffs.dx_u1E0
    return _zsolver(lg, dt).solve(v - dt * expl, -coeffs.dyu1[:, 0])


def compute_u2b2_and_f(u1b1: np.ndarray, lgrid: LayerGrid, Lx: float):
    """Induced normal velocity ``int_z^inf d_x u1b1``, slip datum and potential."""
    u2b2 = tail_integrals(_dx(u1b1, Lx), lgrid)
    F = tail_integrals(u1b1, lgrid)[:, 0]
    return u2b2, u2b2[:, 0].copy(), F


def step_cb1_nb1(state: LayerState, coeffs: LayerCoefficients, dt: float):
    """Chemical corrector with the cell closure ``nb1 = nE0 cb1`` substituted.

    Consumption ``nE0 (1 + cE0) cb1`` is integrated exactly over the step.
    """
    lg, Lx = state.lgrid, state.Lx
    c = state.cb1
    expl = state.u1b1 * coeffs.dx_cE0 + coeffs.u1E0 * _dx(c, Lx) + coeffs.u2E1 * _dz(c, lg)
    damp = np.exp(-dt * coeffs.nE0 * (1.0 + coeffs.cE0))
    cb1 = _zsolver(lg, dt).solve((c - dt * expl) * damp, -coeffs.dyc[:, 0])
    return cb1, coeffs.nE0 * cb1


def compute_pb2(nb1: np.ndarray, lgrid: LayerGrid) -> np.ndarray:
    """Layer pressure ``-int_z^inf nb1``."""
    return -tail_integrals(nb1, lgrid)


# ---------------------------------------------------------------------------
# second order
# ---------------------------------------------------------------------------


def u1b2_forcing(state: LayerState, coeffs: LayerCoefficients) -> np.ndarray:
    lg, Lx = state.lgrid, state.Lx
    v1, w2 = state.u1b1, state.u2b2
    dxv1, dzv1 = _dx(v1, Lx), _dz(v1, lg)
    return (
        coeffs.u1E1 * dxv1 + coeffs.u2E2 * dzv1
        + v1 * coeffs.dx_u1E1 + w2 * coeffs.dyu1
        + v1 * dxv1 + w2 * dzv1
        + _dx(state.pb2, Lx)
    )


def step_u1b2(state: LayerState, coeffs: LayerCoefficients, dt: float) -> np.ndarray:
    """Second-order tangential corrector (homogeneous Neumann wall)."""
    lg, Lx = state.lgrid, state.Lx
    v = state.u1b2
    expl = (coeffs.u1E0 * _dx(v, Lx) + coeffs.u2E1 * _dz(v, lg) + v * coeffs.dx_u1E0
            + u1b2_forcing(state, coeffs))
    return _zsolver(lg, dt).solve(v - dt * expl, 0.0)


def nb2_closure_rhs(cb2: np.ndarray, state: LayerState, coeffs: LayerCoefficients) -> np.ndarray:
    """Right-hand side of ``d_z nb2 = nE1 d_z cb1 + nb1 dyc + nb1 d_z cb1 + nE0 d_z cb2``."""
    lg = state.lgrid
    dzc1 = _dz(state.cb1, lg)
    return (coeffs.nE1 * dzc1 + state.nb1 * coeffs.dyc + state.nb1 * dzc1
            + coeffs.nE0 * _dz(cb2, lg))


def _nb2_from(cb2, state, coeffs):
    return -tail_integrals(nb2_closure_rhs(cb2, state, coeffs), state.lgrid)


def cb2_forcing(state: LayerState, coeffs: LayerCoefficients, nb2: np.ndarray) -> np.ndarray:
    lg, Lx = state.lgrid, state.Lx
    c1, n1, v1, w2 = state.cb1, state.nb1, state.u1b1, state.u2b2
    dxc1, dzc1 = _dx(c1, Lx), _dz(c1, lg)
    return (
        state.u1b2 * coeffs.dx_cE0
        + coeffs.u1E1 * dxc1 + coeffs.u2E2 * dzc1
        + v1 * coeffs.dx_cE1 + w2 * coeffs.dyc
        + v1 * dxc1 + w2 * dzc1
        + coeffs.cE1 * n1 + c1 * coeffs.nE1 + c1 * n1
        + coeffs.cE0 * nb2
    )


def step_cb2_nb2(state: LayerState, coeffs: LayerCoefficients, dt: float,
                 check_contraction: bool = True):
    """Second-order chemical/cell pair with one fixed-point sweep on ``nb2``.

    ``cb2`` is advanced with ``nb2`` lagged, ``nb2`` is rebuilt from the closure,
    ``cb2`` is re-solved, and ``nb2`` is rebuilt once more so the closure holds
    for the returned pair. With ``check_contraction`` one extra sweep
    estimates the contraction factor and warns above 0.1.
    """
    lg, Lx = state.lgrid, state.Lx
    c = state.cb2
    solver = _zsolver(lg, dt)
    transport = coeffs.u1E0 * _dx(c, Lx) + coeffs.u2E1 * _dz(c, lg)
    damp = np.exp(-dt * coeffs.nE0)

    def advance(nb2):
        rhs = (c - dt * (transport + cb2_forcing(state, coeffs, nb2))) * damp
        return solver.solve(rhs, 0.0)

    c_first = advance(state.nb2)
    c_second = advance(_nb2_from(c_first, state, coeffs))
    nb2 = _nb2_from(c_second, state, coeffs)
    if check_contraction:
        # the lagged source makes the first correction O(1) relative to cb2;
        # contraction is judged by the ratio of successive corrections
        first = float(np.max(np.abs(c_second - c_first)))
        second = float(np.max(np.abs(advance(nb2) - c_second)))
        if first > 0 and second > 0.1 * first:
            warnings.warn("cb2/nb2 fixed-point sweep is not contracting", FixedPointWarning,
                          stacklevel=2)
    return c_second, nb2


# ---------------------------------------------------------------------------
# full step and diagnostics
# ---------------------------------------------------------------------------


def step_layers(state: LayerState, coeffs: LayerCoefficients, dt: float) -> LayerState:
    """Advance every corrector by one step in dependency order."""
    st = replace(state)
    st.u1b1 = step_u1b1(st, coeffs, dt)
    st.u2b2, st.f, st.F = compute_u2b2_and_f(st.u1b1, st.lgrid, st.Lx)
    st.cb1, st.nb1 = step_cb1_nb1(st, coeffs, dt)
    st.pb2 = compute_pb2(st.nb1, st.lgrid)
    st.u1b2 = step_u1b2(st, coeffs, dt)
    st.cb2, st.nb2 = step_cb2_nb2(st, coeffs, dt)
    st.time = state.time + dt
    return st


def zeroth_order_cell_closure(cb0: np.ndarray, nE0: np.ndarray) -> np.ndarray:
    """Zeroth-order cell corrector ``nE0 (exp(cb0) - 1)``; zero when ``cb0`` is."""
    return nE0 * np.expm1(cb0)


def identity_residuals(state: LayerState, coeffs: LayerCoefficients) -> dict:
    """Structural identities of the correctors.

    z-derivative identities are checked in the integrated form matching
    the quadrature that builds them: the change of the integrated quantity
    over each z interval equals the cubic-rule integral of its integrand.
    """
    lg, Lx = state.lgrid, state.Lx
    ww = lambda a: interval_integrals(a, lg.zaxis)  # noqa: E731
    d = lambda a: a[:, 1:] - a[:, :-1]  # noqa: E731
    return {
        "nb1_closure": float(np.max(np.abs(state.nb1 - coeffs.nE0 * state.cb1))),
        "divergence": float(np.max(np.abs(d(state.u2b2) + ww(_dx(state.u1b1, Lx))))),
        "f_dxF": float(np.max(np.abs(state.f - dx_array(state.F, Lx)))),
        "dz_pb2": float(np.max(np.abs(d(state.pb2) - ww(state.nb1)))),
        "nb2_closure": float(np.max(np.abs(
            d(state.nb2) - ww(nb2_closure_rhs(state.cb2, state, coeffs))))),
    }


def tail_report(state: LayerState) -> dict:
    """Relative size at Zmax and fitted decay length of each profile.

    The decay length is fitted on ``[Zmax/4, Zmax/2]`` where profiles are
    small but still above rounding; ``0`` marks profiles already at zero.
    """
    z = state.lgrid.z_nodes
    zmax = state.lgrid.Zmax
    sel = (z >= 0.25 * zmax) & (z <= 0.5 * zmax)
    out = {}
    for k in PROFILES:
        p = np.abs(getattr(state, k))
        peak = float(p.max())
        if peak == 0.0:
            out[k] = (0.0, 0.0)
            continue
        prof = p.max(axis=0)
        rel_end = float(prof[-1] / peak)
        seg = np.log(np.maximum(prof[sel], 1e-300))
        slope = np.polyfit(z[sel], seg, 1)[0]
        ell = float(-1.0 / slope) if slope < 0 else float("inf")
        out[k] = (rel_end, ell)
    return out
