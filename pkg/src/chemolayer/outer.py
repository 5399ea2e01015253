"""Inviscid limit system on the periodic strip.

The outer fields solve chemotaxis with unit cell diffusion, pure transport
plus consumption for the chemical, and the Euler equations in vorticity form.
At the wall the combined cell flux ``d_y n - n d_y c`` vanishes and ``u2 = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import numpy as np

from .grid import (
    Grid2D,
    ModalSolver,
    ScalarField2D,
    SolverError,
    VectorField2D,
    dx_array,
    dy_array,
    dyy_array,
    solve_streamfunction_array,
    velocity_from_streamfunction,
)

__all__ = [
    "OuterState",
    "BoundaryTraces",
    "TraceExtensionSet",
    "CompatibilityReport",
    "check_compatibility",
    "step_outer",
    "advective_dt_limit",
    "extract_traces",
    "build_extensions",
    "reconstruct_pressure",
    "wall_normal_derivative",
    "POSITIVITY_FLOOR",
]

POSITIVITY_FLOOR = -1e-8


# ---------------------------------------------------------------------------
# shared discrete operators (also used by the viscous solver)
# ---------------------------------------------------------------------------


def face_flux_divergence(face_flux: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Finite-volume divergence of y-fluxes given on interior faces.

    ``face_flux`` has shape ``(Nx, Ny-1)``; both end fluxes are zero.
    """
    f = np.zeros((face_flux.shape[0], face_flux.shape[1] + 2))
    f[:, 1:-1] = face_flux
    return (f[:, 1:] - f[:, :-1]) / grid.yaxis.vol


def cell_flux_terms(n, c, u1, u2, grid: Grid2D) -> np.ndarray:
    """Conservative ``div(u n) + div(n grad c)``, zero total flux at both ends."""
    x_flux = n * (u1 + dx_array(c, grid.Lx))
    h = grid.yaxis.h
    n_face = 0.5 * (n[:, 1:] + n[:, :-1])
    u2_face = 0.5 * (u2[:, 1:] + u2[:, :-1])
    dyc_face = (c[:, 1:] - c[:, :-1]) / h
    y_flux = n_face * (u2_face + dyc_face)
    return dx_array(x_flux, grid.Lx) + face_flux_divergence(y_flux, grid)


def transport(q, u1, u2, grid: Grid2D) -> np.ndarray:
    """Advective derivative ``u . grad q``."""
    return u1 * dx_array(q, grid.Lx) + u2 * dy_array(q, grid.yaxis)


def advective_dt_limit(u1, u2, c, grid: Grid2D) -> float:
    """Largest stable explicit step for transport by ``u`` and by ``grad c``."""
    vx = np.abs(u1) + np.abs(dx_array(c, grid.Lx))
    vy = np.abs(u2) + np.abs(dy_array(c, grid.yaxis))
    kmax = np.pi / grid.dx
    hy = np.empty(grid.Ny)
    hy[0] = grid.yaxis.h[0]
    hy[-1] = grid.yaxis.h[-1]
    hy[1:-1] = np.minimum(grid.yaxis.h[:-1], grid.yaxis.h[1:])
    rate = float(np.max(vx) * kmax + np.max(vy / hy))
    return np.inf if rate == 0 else 1.0 / rate


def _check_positive(n, c, where: str):
    lo = min(float(n.min()), float(c.min()))
    if lo < POSITIVITY_FLOOR:
        raise SolverError(f"{where}: density dipped to {lo:.3e} (under-resolved run)")


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class OuterState:
    """Outer fields on a :class:`Grid2D`; ``u`` is recovered from ``omega``."""

    grid: Grid2D
    n: np.ndarray
    c: np.ndarray
    omega: np.ndarray
    time: float = 0.0
    u_far: float = 0.0
    phi: np.ndarray = field(default=None, repr=False)
    u1: np.ndarray = field(default=None, repr=False)
    u2: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("n", "c", "omega"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != self.grid.shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {self.grid.shape}")
            if not np.all(np.isfinite(arr)):
                raise SolverError(f"{name} is not finite")
            setattr(self, name, arr)
        if self.phi is None:
            self.phi = solve_streamfunction_array(self.omega, self.grid, self.u_far)
        if self.u1 is None or self.u2 is None:
            self.u1, self.u2 = velocity_from_streamfunction(self.phi, self.grid)

    @classmethod
    def from_arrays(cls, grid: Grid2D, n, c, omega, time=0.0, u_far=0.0) -> "OuterState":
        return cls(grid, np.array(n, dtype=float), np.array(c, dtype=float),
                   np.array(omega, dtype=float), time, u_far)

    def scalar(self, name: str) -> ScalarField2D:
        return ScalarField2D(self.grid, getattr(self, name), self.time)

    @property
    def u(self) -> VectorField2D:
        return VectorField2D(self.scalar("u1"), self.scalar("u2"))

    @property
    def p(self) -> ScalarField2D:
        return ScalarField2D(self.grid, reconstruct_pressure(self), self.time)

    def wall_flux_residual(self) -> float:
        ax = self.grid.yaxis
        dyn = dy_array(self.n, ax)[:, 0]
        dyc = dy_array(self.c, ax)[:, 0]
        return float(np.max(np.abs(dyn - self.n[:, 0] * dyc)))

    def mass(self) -> float:
        return self.grid.mass(self.n)


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------


class _OuterOperators:
    def __init__(self, grid: Grid2D, dt: float):
        self.grid = grid
        self.dt = dt
        # (I - dt Delta) with zero end fluxes; the combined wall flux closes
        # because the explicit chemotactic flux is also zero on the end faces
        self.n_solver = ModalSolver(grid, 1.0, dt, dt)


_OPS: dict[tuple[int, float], _OuterOperators] = {}


def _operators(grid: Grid2D, dt: float) -> _OuterOperators:
    key = (id(grid), float(dt))
    ops = _OPS.get(key)
    if ops is None or ops.grid is not grid:
        ops = _OuterOperators(grid, dt)
        _OPS[key] = ops
    return ops


def step_outer(state: OuterState, dt: float, check_cfl: bool = True) -> OuterState:
    """One first-order IMEX step of the inviscid limit system.

    Cell diffusion is implicit; transport, chemotaxis, consumption (through an
    exact integrating factor) and vorticity transport are explicit.
    """
    g = state.grid
    if dt <= 0:
        raise ValueError("dt must be positive")
    if check_cfl:
        lim = advective_dt_limit(state.u1, state.u2, state.c, g)
        if dt > lim:
            raise SolverError(f"CFL violation: dt={dt:.3e} exceeds {lim:.3e}")
    n, c, w = state.n, state.c, state.omega
    u1, u2 = state.u1, state.u2
    ops = _operators(g, dt)

    rhs_n = n - dt * cell_flux_terms(n, c, u1, u2, g)
    n_new = np.fft.irfft(ops.n_solver.solve(np.fft.rfft(rhs_n, axis=0)), n=g.Nx, axis=0)
    c_new = (c - dt * transport(c, u1, u2, g)) * np.exp(-dt * n)
    w_new = w - dt * (transport(w, u1, u2, g) + dx_array(n, g.Lx))

    _check_positive(n_new, c_new, "step_outer")
    return OuterState(g, n_new, c_new, w_new, state.time + dt, state.u_far)


# ---------------------------------------------------------------------------
# compatibility
# ---------------------------------------------------------------------------


@dataclass
class CompatibilityReport:
    order: int
    residuals: dict

    def ok(self, tol: float) -> bool:
        return all(v <= tol for v in self.residuals.values())

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values()) if self.residuals else 0.0


class _WallPoly:
    """Truncated Taylor polynomials in y at the wall, one per x node.

    Coefficients are fitted by interpolation on the first ``deg + 1`` nodes
    in the scaled variable ``s = y / y[deg]``; x-derivatives stay spectral.
    """

    def __init__(self, coef: np.ndarray, scale: float, Lx: float):
        self.coef = coef
        self.scale = scale
        self.Lx = Lx

    @classmethod
    def fit(cls, values: np.ndarray, grid: Grid2D, deg: int = 7) -> "_WallPoly":
        y = grid.y_nodes[: deg + 1]
        scale = float(y[-1])
        V = np.vander(y / scale, deg + 1, increasing=True)
        coef = np.linalg.solve(V, np.asarray(values)[:, : deg + 1].T).T
        return cls(coef, scale, grid.Lx)

    def _new(self, coef):
        return _WallPoly(coef, self.scale, self.Lx)

    def __add__(self, other):
        return self._new(self.coef + other.coef)

    def __sub__(self, other):
        return self._new(self.coef - other.coef)

    def __neg__(self):
        return self._new(-self.coef)

    def __mul__(self, other):
        d = self.coef.shape[1]
        out = np.zeros_like(self.coef)
        for i in range(d):
            out[:, i:] += self.coef[:, i : i + 1] * other.coef[:, : d - i]
        return self._new(out)

    def dx(self, order: int = 1):
        return self._new(dx_array(self.coef, self.Lx, order))

    def dy(self):
        d = self.coef.shape[1]
        out = np.zeros_like(self.coef)
        out[:, : d - 1] = self.coef[:, 1:] * np.arange(1, d) / self.scale
        return self._new(out)

    def wall(self) -> np.ndarray:
        return self.coef[:, 0]


def _time_slots(n, c, u1, u2):
    """``(d_t n, d_t c)`` at t = 0 filled in by the outer equations."""
    nt = (-(u1 * n.dx() + u2 * n.dy()) + n.dx(2) + n.dy().dy()
          - (n * c.dx()).dx() - (n * c.dy()).dy())
    ct = -(u1 * c.dx() + u2 * c.dy()) - c * n
    return nt, ct


def check_compatibility(n, c, u1, u2, grid: Grid2D, order: int = 1) -> CompatibilityReport:
    """Wall compatibility residuals of initial data up to ``order`` (at most 1).

    Order 0 checks the flux condition and ``u2 = 0``; order 1 checks the time
    derivative of the flux condition with ``d_t`` replaced by the equations.
    The ``u2`` relation at order 1 holds for any pressure satisfying the wall
    Neumann condition and is not reported. Normal derivatives come from wall
    Taylor polynomials, so nested derivatives do not amplify stencil errors.
    """
    if order not in (0, 1):
        raise ValueError("compatibility is implemented for orders 0 and 1")
    P = {k: _WallPoly.fit(np.asarray(v, dtype=float), grid)
         for k, v in (("n", n), ("c", c), ("u1", u1), ("u2", u2))}
    pn, pc = P["n"], P["c"]
    res = {
        "flux": float(np.max(np.abs((pn.dy() - pn * pc.dy()).wall()))),
        "u2_wall": float(np.max(np.abs(np.asarray(u2)[:, 0]))),
    }
    if order >= 1:
        nt, ct = _time_slots(pn, pc, P["u1"], P["u2"])
        r1 = nt.dy() - nt * pc.dy() - pn * ct.dy()
        res["flux_dt"] = float(np.max(np.abs(r1.wall())))
    return CompatibilityReport(order, res)


# ---------------------------------------------------------------------------
# traces and Taylor extensions
# ---------------------------------------------------------------------------


@dataclass
class BoundaryTraces:
    """Wall values and normal derivatives of the outer fields, functions of x."""

    time: float
    Lx: float
    nbar: np.ndarray
    cbar: np.ndarray
    u1bar: np.ndarray
    dyn: np.ndarray
    dyc: np.ndarray
    dyu1: np.ndarray
    dyu2: np.ndarray
    dyyu2: np.ndarray

    FIELDS = ("nbar", "cbar", "u1bar", "dyn", "dyc", "dyu1", "dyu2", "dyyu2")

    def dx(self, name: str, order: int = 1) -> np.ndarray:
        return dx_array(getattr(self, name), self.Lx, order)

    def scaled(self, factor: float) -> "BoundaryTraces":
        return replace(self, **{k: factor * getattr(self, k) for k in self.FIELDS})


WALL_FIT_DEGREE = 5


def wall_normal_derivative(values: np.ndarray, grid: Grid2D) -> np.ndarray:
    """``d_y`` at y = 0 from the wall interpolant on the first few nodes."""
    return _WallPoly.fit(values, grid, WALL_FIT_DEGREE).dy().wall()


def extract_traces(state: OuterState) -> BoundaryTraces:
    """Traces at y = 0.

    ``d_y u1`` is the wall vorticity (``u2`` vanishes on the wall), the
    normal-velocity derivatives follow from incompressibility, and ``d_y n``
    is taken from the flux condition.
    """
    g = state.grid
    nbar = state.n[:, 0].copy()
    cbar = state.c[:, 0].copy()
    u1bar = state.u1[:, 0].copy()
    dyc = wall_normal_derivative(state.c, g)
    dyu1 = state.omega[:, 0].copy()
    return BoundaryTraces(
        time=state.time,
        Lx=g.Lx,
        nbar=nbar,
        cbar=cbar,
        u1bar=u1bar,
        dyn=nbar * dyc,
        dyc=dyc,
        dyu1=dyu1,
        dyu2=-dx_array(u1bar, g.Lx),
        dyyu2=-dx_array(dyu1, g.Lx),
    )


@dataclass
class TraceExtensionSet:
    """Taylor extensions of the outer fields in the stretched variable z.

    Every evaluator returns an ``(Nx, Nz)`` array for the given z nodes.
    """

    traces: BoundaryTraces

    def _col(self, name):
        return getattr(self.traces, name)[:, None]

    def nE0(self, z):
        return self._col("nbar") + 0.0 * z

    def cE0(self, z):
        return self._col("cbar") + 0.0 * z

    def u1E0(self, z):
        return self._col("u1bar") + 0.0 * z

    def u2E1(self, z):
        return self._col("dyu2") * z

    def nE1(self, z):
        return self._col("dyn") * z

    def cE1(self, z):
        return self._col("dyc") * z

    def u1E1(self, z):
        return self._col("dyu1") * z

    def u2E2(self, z):
        return 0.5 * self._col("dyyu2") * z * z

    def evaluate(self, z) -> dict:
        z = np.asarray(z, dtype=float)[None, :]
        names = ("nE0", "cE0", "u1E0", "u2E1", "nE1", "cE1", "u1E1", "u2E2")
        return {k: getattr(self, k)(z) for k in names}


def build_extensions(traces: BoundaryTraces) -> TraceExtensionSet:
    for k in BoundaryTraces.FIELDS:
        if not np.all(np.isfinite(getattr(traces, k))):
            raise SolverError(f"trace {k} is not finite")
    return TraceExtensionSet(traces)


# ---------------------------------------------------------------------------
# pressure diagnostic
# ---------------------------------------------------------------------------


_P_CACHE: dict[int, ModalSolver] = {}


def reconstruct_pressure(state, viscosity: float = 0.0) -> np.ndarray:
    """Pressure from the Poisson problem of the (Navier-)Stokes momentum balance.

    ``-Delta p = div(u . grad u) - d_y n`` with ``d_y p = n + viscosity * d_yy u2``
    on both ends (``u2`` and its tangential derivatives vanish there). The mean
    mode is pinned by ``p = 0`` at the top.
    """
    g = state.grid
    ax = g.yaxis
    solver = _P_CACHE.get(id(g))
    if solver is None or solver.grid is not g:
        solver = ModalSolver(g, 0.0, 1.0, 1.0, "neumann", "neumann", mode0_top="dirichlet")
        _P_CACHE[id(g)] = solver
    u1, u2, n = state.u1, state.u2, state.n
    d1x, d1y = dx_array(u1, g.Lx), dy_array(u1, ax)
    d2x, d2y = dx_array(u2, g.Lx), dy_array(u2, ax)
    src = d1x * d1x + 2.0 * d1y * d2x + d2y * d2y - dy_array(n, ax)
    g0 = n[:, 0] + viscosity * dyy_array(u2, ax)[:, 0]
    g1 = n[:, -1] + viscosity * dyy_array(u2, ax)[:, -1]
    rhs = np.fft.rfft(src, axis=0)
    rhs[:, 0] -= np.fft.rfft(g0) / ax.vol[0]
    rhs[:, -1] += np.fft.rfft(g1) / ax.vol[-1]
    rhs[0, -1] = 0.0
    return np.fft.irfft(solver.solve(rhs), n=g.Nx, axis=0)
