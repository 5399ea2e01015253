"""Full viscous chemotaxis-Navier-Stokes system with Neumann-slip walls.

Vorticity-streamfunction form: the slip conditions ``d_y u1 = u2 = 0`` give
``omega = 0`` on the wall, so no pressure is needed to advance the flow.
Cell diffusion and the ``eps^2`` diffusions are implicit, transport,
chemotaxis and the buoyancy source ``-d_x n`` are explicit, and consumption
uses an exact integrating factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import (
    Grid2D,
    ModalSolver,
    ScalarField2D,
    SolverError,
    VectorField2D,
    dx_array,
    dy_array,
    solve_streamfunction_array,
    velocity_from_streamfunction,
)
from .outer import (
    _check_positive,
    advective_dt_limit,
    cell_flux_terms,
    reconstruct_pressure,
    transport,
)

__all__ = [
    "ViscousState",
    "ViscousSolver",
    "ManufacturedSources",
    "step_viscous",
    "enable_manufactured_sources",
    "check_layer_resolution",
]

LAYER_POINTS = 4.0

# (t, x, y) -> (source_n, source_c, source_omega)
ManufacturedSources = Callable[[float, np.ndarray, np.ndarray], tuple]


def check_layer_resolution(grid: Grid2D, epsilon: float):
    """Hard guard: the wall spacing must resolve the eps-layer."""
    if grid.h_min > epsilon / LAYER_POINTS * (1 + 1e-12):
        raise SolverError(
            f"wall spacing {grid.h_min:.3e} does not resolve the layer (need <= eps/4 = "
            f"{epsilon / LAYER_POINTS:.3e})"
        )


@dataclass(eq=False)
class ViscousState:
    grid: Grid2D
    n: np.ndarray
    c: np.ndarray
    omega: np.ndarray
    epsilon: float
    time: float = 0.0
    u_far: float = 0.0
    phi: np.ndarray = field(default=None, repr=False)
    u1: np.ndarray = field(default=None, repr=False)
    u2: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
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
    def from_arrays(cls, grid, n, c, omega, epsilon, time=0.0, u_far=0.0) -> "ViscousState":
        return cls(grid, np.array(n, dtype=float), np.array(c, dtype=float),
                   np.array(omega, dtype=float), float(epsilon), time, u_far)

    def scalar(self, name: str) -> ScalarField2D:
        return ScalarField2D(self.grid, getattr(self, name), self.time)

    @property
    def u(self) -> VectorField2D:
        return VectorField2D(self.scalar("u1"), self.scalar("u2"))

    @property
    def p(self) -> ScalarField2D:
        return ScalarField2D(self.grid, reconstruct_pressure(self, self.epsilon**2), self.time)

    def mass(self) -> float:
        return self.grid.mass(self.n)

    def wall_residuals(self) -> dict:
        ax = self.grid.yaxis
        return {
            "dyn": float(np.max(np.abs(dy_array(self.n, ax)[:, 0]))),
            "dyc": float(np.max(np.abs(dy_array(self.c, ax)[:, 0]))),
            "u2": float(np.max(np.abs(self.u2[:, 0]))),
            "omega": float(np.max(np.abs(self.omega[:, 0]))),
            "divergence": float(np.max(np.abs(dx_array(self.u1, self.grid.Lx)
                                              + dy_array(self.u2, ax)))),
        }


class ViscousSolver:
    """Factorised implicit operators for one (grid, eps, dt) triple."""

    def __init__(self, grid: Grid2D, epsilon: float, dt: float,
                 sources: ManufacturedSources | None = None, check_cfl: bool = True):
        if dt <= 0:
            raise ValueError("dt must be positive")
        check_layer_resolution(grid, epsilon)
        self.grid, self.epsilon, self.dt = grid, float(epsilon), float(dt)
        self.sources = sources
        self.check_cfl = check_cfl
        e2 = self.epsilon**2
        self.n_solver = ModalSolver(grid, 1.0, dt, dt)
        self.c_solver = ModalSolver(grid, 1.0, dt * e2, dt * e2)
        self.w_solver = ModalSolver(grid, 1.0, dt * e2, dt * e2, "dirichlet", "dirichlet")

    def with_sources(self, sources: ManufacturedSources | None) -> "ViscousSolver":
        new = object.__new__(ViscousSolver)
        new.__dict__.update(self.__dict__)
        new.sources = sources
        return new

    def _implicit(self, solver: ModalSolver, rhs: np.ndarray) -> np.ndarray:
        return np.fft.irfft(solver.solve(np.fft.rfft(rhs, axis=0)), n=self.grid.Nx, axis=0)

    def step(self, state: ViscousState) -> ViscousState:
        g, dt = self.grid, self.dt
        if state.grid is not g:
            raise ValueError("state lives on a different grid")
        if abs(state.epsilon - self.epsilon) > 1e-15 * self.epsilon:
            raise ValueError("state and solver disagree on epsilon")
        if self.check_cfl:
            lim = advective_dt_limit(state.u1, state.u2, state.c, g)
            if dt > lim:
                raise SolverError(f"CFL violation: dt={dt:.3e} exceeds {lim:.3e}")
        n, c, w, u1, u2 = state.n, state.c, state.omega, state.u1, state.u2

        rhs_n = n - dt * cell_flux_terms(n, c, u1, u2, g)
        rhs_c = (c - dt * transport(c, u1, u2, g)) * np.exp(-dt * n)
        rhs_w = w - dt * (transport(w, u1, u2, g) + dx_array(n, g.Lx))
        if self.sources is not None:
            x, y = g.mesh
            sn, sc, sw = self.sources(state.time + dt, x, y)
            rhs_n = rhs_n + dt * sn
            rhs_c = rhs_c + dt * sc
            rhs_w = rhs_w + dt * sw
        rhs_w[:, 0] = 0.0
        rhs_w[:, -1] = 0.0

        n_new = self._implicit(self.n_solver, rhs_n)
        c_new = self._implicit(self.c_solver, rhs_c)
        w_new = self._implicit(self.w_solver, rhs_w)
        _check_positive(n_new, c_new, "step_viscous")
        return ViscousState(g, n_new, c_new, w_new, self.epsilon, state.time + dt, state.u_far)


_SOLVERS: dict[tuple[int, float, float], ViscousSolver] = {}


def step_viscous(state: ViscousState, dt: float) -> ViscousState:
    """One IMEX step (cached operators, no sources)."""
    key = (id(state.grid), float(state.epsilon), float(dt))
    solver = _SOLVERS.get(key)
    if solver is None or solver.grid is not state.grid:
        solver = ViscousSolver(state.grid, state.epsilon, dt)
        _SOLVERS[key] = solver
    return solver.step(state)


def enable_manufactured_sources(solver: ViscousSolver,
                                sources: ManufacturedSources | None) -> ViscousSolver:
    """Copy of ``solver`` that adds ``sources(t, x, y)`` to the right-hand sides.

    ``None`` (or sources returning zeros) leaves the step unchanged.
    """
    return solver.with_sources(sources)
