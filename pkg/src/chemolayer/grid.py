"""Discrete half-plane geometry, field containers and finite-difference calculus.

The half-plane is truncated to an x-periodic strip ``[0, Lx) x [0, Ymax]``.
Arrays are stored with shape ``(Nx, Ny)``: axis 0 is x (periodic, spectral),
axis 1 is y (nonuniform nodes, second-order stencils).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.linalg import splu

__all__ = [
    "Grid2D",
    "LayerGrid",
    "ScalarField2D",
    "VectorField2D",
    "DecayWarning",
    "SolverError",
    "graded_nodes",
    "ddx",
    "ddy",
    "divergence",
    "vorticity",
    "solve_streamfunction",
    "solve_streamfunction_array",
    "velocity_from_streamfunction",
    "ModalSolver",
    "dx_array",
    "dy_array",
    "dyy_array",
    "integrate_z_tail",
    "tail_integrals",
    "interval_integrals",
    "quadrature_weights",
]

MAX_GRADING = 1.2


class SolverError(RuntimeError):
    """Raised when a discrete solve or a guard condition fails."""


class DecayWarning(UserWarning):
    """A profile has not decayed at the end of its truncated half-line."""


def graded_nodes(length: float, n: int, h_min: float | None = None) -> np.ndarray:
    """Nodes on ``[0, length]``, geometrically graded from ``h_min`` at 0.

    With ``h_min=None`` (or ``h_min`` at least the uniform spacing) the nodes
    are uniform. Otherwise the ratio ``r`` is chosen so that ``n - 1``
    geometric intervals starting at ``h_min`` sum to ``length``.
    """
    if n < 2:
        raise ValueError("need at least two nodes")
    m = n - 1
    if h_min is None or h_min * m >= length * (1 - 1e-12):
        return np.linspace(0.0, length, n)

    def excess(r):
        return h_min * (r**m - 1.0) / (r - 1.0) - length

    r = brentq(excess, 1.0 + 1e-12, 2.0)
    if r > MAX_GRADING:
        raise ValueError(f"grading ratio {r:.4f} exceeds {MAX_GRADING}; add nodes")
    h = h_min * r ** np.arange(m)
    nodes = np.concatenate([[0.0], np.cumsum(h)])
    nodes[-1] = length
    return nodes


# ---------------------------------------------------------------------------
# 1D stencils on nonuniform nodes
# ---------------------------------------------------------------------------


def _first_derivative_stencil(nodes: np.ndarray) -> sp.csr_matrix:
    """Second-order first derivative: central inside, one-sided 3-point at ends."""
    n = nodes.size
    h = np.diff(nodes)
    rows, cols, vals = [], [], []
    hm, hp = h[:-1], h[1:]
    i = np.arange(1, n - 1)
    for off, w in (
        (-1, -hp / (hm * (hm + hp))),
        (0, (hp - hm) / (hm * hp)),
        (1, hm / (hp * (hm + hp))),
    ):
        rows.append(i)
        cols.append(i + off)
        vals.append(w)

    def one_sided(i0, d1, d2, sign):
        # nodes at i0, i0 + sign, i0 + 2 sign with offsets d1, d1 + d2
        a = d1
        b = d1 + d2
        w0 = -(a + b) / (a * b)
        w1 = b / (a * (b - a))
        w2 = -a / (b * (b - a))
        w = sign * np.array([w0, w1, w2])
        return [i0, i0, i0], [i0, i0 + sign, i0 + 2 * sign], w

    for i0, d1, d2, s in ((0, h[0], h[1], 1), (n - 1, h[-1], h[-2], -1)):
        r, c, w = one_sided(i0, d1, d2, s)
        rows.append(np.array(r))
        cols.append(np.array(c))
        vals.append(w)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def _second_derivative_stencil(nodes: np.ndarray) -> sp.csr_matrix:
    """Three-point second derivative inside; one-sided 4-point at the ends."""
    n = nodes.size
    h = np.diff(nodes)
    hm, hp = h[:-1], h[1:]
    i = np.arange(1, n - 1)
    rows = [i, i, i]
    cols = [i - 1, i, i + 1]
    vals = [2.0 / (hm * (hm + hp)), -2.0 / (hm * hp), 2.0 / (hp * (hm + hp))]
    for idx in (np.arange(4), n - 1 - np.arange(4)):
        x = nodes[idx] - nodes[idx[0]]
        # weights reproducing f'' exactly for cubics
        V = np.vander(x, 4, increasing=True).T
        rhs = np.array([0.0, 0.0, 2.0, 0.0])
        w = np.linalg.solve(V, rhs)
        rows.append(np.full(4, idx[0]))
        cols.append(idx)
        vals.append(w)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def _control_volumes(nodes: np.ndarray) -> np.ndarray:
    h = np.diff(nodes)
    vol = np.empty(nodes.size)
    vol[0] = 0.5 * h[0]
    vol[-1] = 0.5 * h[-1]
    vol[1:-1] = 0.5 * (h[:-1] + h[1:])
    return vol


def _fv_laplacian(nodes: np.ndarray) -> sp.csr_matrix:
    """Vertex-centred finite-volume Laplacian with zero end fluxes.

    Inhomogeneous Neumann data enter the right-hand side as ``-g0/V0`` and
    ``+g1/V_{N-1}``; Dirichlet ends are imposed by the caller.
    """
    h = np.diff(nodes)
    vol = _control_volumes(nodes)
    n = nodes.size
    lower = np.zeros(n)
    upper = np.zeros(n)
    lower[1:] = 1.0 / h
    upper[:-1] = 1.0 / h
    diag = -(lower + upper)
    mat = sp.diags([lower[1:], diag, upper[:-1]], [-1, 0, 1], shape=(n, n))
    return sp.csr_matrix(sp.diags(1.0 / vol) @ mat)


def _interval_weights(nodes: np.ndarray) -> sp.csr_matrix:
    """Weights W with (W f)_j = integral over [z_j, z_{j+1}] of the local cubic.

    The cubic interpolates the four nodes nearest to the interval (shifted
    inward at the ends); exact for cubics on any node set.
    """
    n = nodes.size
    if n < 4:
        raise ValueError("need at least four nodes")
    rows, cols, vals = [], [], []
    for j in range(n - 1):
        s = min(max(j - 1, 0), n - 4)
        idx = np.arange(s, s + 4)
        x = nodes[idx] - nodes[j]
        h = nodes[j + 1] - nodes[j]
        V = np.vander(x, 4, increasing=True).T
        moments = np.array([h, h**2 / 2, h**3 / 3, h**4 / 4])
        w = np.linalg.solve(V, moments)
        rows.extend([j] * 4)
        cols.extend(idx)
        vals.extend(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n - 1, n))


class _Axis:
    """Cached operators along one nonuniform axis."""

    def __init__(self, nodes: np.ndarray):
        self.nodes = nodes
        self.h = np.diff(nodes)
        self.d1 = _first_derivative_stencil(nodes)
        self.d2 = _second_derivative_stencil(nodes)
        self.lap = _fv_laplacian(nodes)
        self.vol = _control_volumes(nodes)
        self.intervals = _interval_weights(nodes)
        self.weights = np.asarray(self.intervals.sum(axis=0)).ravel()

    def apply(self, mat, values):
        # values: (..., n) -> (..., n)
        return np.asarray(mat @ values.reshape(-1, values.shape[-1]).T).T.reshape(values.shape)


# ---------------------------------------------------------------------------
# Grids and fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Grid2D:
    """x-periodic strip with graded y nodes."""

    Lx: float
    Nx: int
    y_nodes: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y_nodes, dtype=float)
        object.__setattr__(self, "y_nodes", y)
        if self.Nx < 8 or self.Nx % 2:
            raise ValueError("Nx must be even and at least 8")
        if y.size < 4:
            raise SolverError("Grid2D needs at least 4 y nodes")
        if y[0] != 0.0 or np.any(np.diff(y) <= 0):
            raise ValueError("y_nodes must start at 0 and increase strictly")
        h = np.diff(y)
        ratio = np.maximum(h[1:] / h[:-1], h[:-1] / h[1:])
        if ratio.size and ratio.max() > MAX_GRADING + 1e-9:
            raise ValueError(f"adjacent y spacing ratio {ratio.max():.3f} exceeds {MAX_GRADING}")

    @classmethod
    def uniform(cls, Lx: float, Nx: int, Ymax: float, Ny: int) -> "Grid2D":
        return cls(Lx, Nx, np.linspace(0.0, Ymax, Ny))

    @classmethod
    def graded(cls, Lx: float, Nx: int, Ymax: float, Ny: int, h_min: float | None) -> "Grid2D":
        return cls(Lx, Nx, graded_nodes(Ymax, Ny, h_min))

    @property
    def Ny(self) -> int:
        return self.y_nodes.size

    @property
    def Ymax(self) -> float:
        return float(self.y_nodes[-1])

    @property
    def dx(self) -> float:
        return self.Lx / self.Nx

    @property
    def shape(self) -> tuple[int, int]:
        return (self.Nx, self.Ny)

    @cached_property
    def x_nodes(self) -> np.ndarray:
        return self.dx * np.arange(self.Nx)

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x_nodes, self.y_nodes, indexing="ij")

    @cached_property
    def kx(self) -> np.ndarray:
        """Angular wavenumbers of the rfft modes."""
        return 2.0 * np.pi / self.Lx * np.arange(self.Nx // 2 + 1)

    @cached_property
    def yaxis(self) -> _Axis:
        return _Axis(self.y_nodes)

    @property
    def h_min(self) -> float:
        return float(self.y_nodes[1] - self.y_nodes[0])

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def integrate(self, values: np.ndarray) -> float:
        """Integral over the strip (uniform rule in x, cubic rule in y)."""
        return float(self.dx * np.sum(values @ self.yaxis.weights))

    def mass(self, values: np.ndarray) -> float:
        """Finite-volume mass, conserved exactly by the flux-form schemes."""
        return float(self.dx * np.sum(values @ self.yaxis.vol))


@dataclass(frozen=True, eq=False)
class LayerGrid:
    """Half-line in the stretched variable z, truncated at Zmax."""

    z_nodes: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z_nodes, dtype=float)
        object.__setattr__(self, "z_nodes", z)
        if z[0] != 0.0 or np.any(np.diff(z) <= 0):
            raise ValueError("z_nodes must start at 0 and increase strictly")
        if z[-1] < 10.0:
            raise ValueError("Zmax must be at least 10")
        if z.size < 4:
            raise SolverError("LayerGrid needs at least 4 nodes")

    @classmethod
    def uniform(cls, Zmax: float = 20.0, Nz: int = 512) -> "LayerGrid":
        return cls(np.linspace(0.0, Zmax, Nz))

    @property
    def Zmax(self) -> float:
        return float(self.z_nodes[-1])

    @property
    def Nz(self) -> int:
        return self.z_nodes.size

    @cached_property
    def zaxis(self) -> _Axis:
        return _Axis(self.z_nodes)


@dataclass(eq=False)
class ScalarField2D:
    grid: Grid2D
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def like(self, values: np.ndarray) -> "ScalarField2D":
        return ScalarField2D(self.grid, values, self.time)


@dataclass(eq=False)
class VectorField2D:
    u1: ScalarField2D
    u2: ScalarField2D

    def __post_init__(self):
        if self.u1.grid is not self.u2.grid:
            raise ValueError("vector components must share a grid")

    @property
    def grid(self) -> Grid2D:
        return self.u1.grid


# ---------------------------------------------------------------------------
# Array-level calculus (axis 0 periodic x, last axis nonuniform)
# ---------------------------------------------------------------------------


def dx_array(values: np.ndarray, Lx: float, order: int = 1) -> np.ndarray:
    """Fourier-collocation x-derivative along axis 0."""
    nx = values.shape[0]
    k = 2.0 * np.pi / Lx * np.arange(nx // 2 + 1)
    mult = (1j * k) ** order
    if order % 2:
        mult[-1] = 0.0  # Nyquist mode has no odd derivative
    coef = np.fft.rfft(values, axis=0)
    coef *= mult.reshape((-1,) + (1,) * (values.ndim - 1))
    return np.fft.irfft(coef, n=nx, axis=0)


def dy_array(values: np.ndarray, axis: _Axis) -> np.ndarray:
    return axis.apply(axis.d1, values)


def dyy_array(values: np.ndarray, axis: _Axis) -> np.ndarray:
    return axis.apply(axis.d2, values)


def _values(f) -> np.ndarray:
    return f.values if isinstance(f, ScalarField2D) else np.asarray(f)


def ddx(field: ScalarField2D) -> ScalarField2D:
    """Spectral x-derivative."""
    return field.like(dx_array(field.values, field.grid.Lx))


def ddy(field: ScalarField2D) -> ScalarField2D:
    """Second-order y-derivative on the nonuniform nodes."""
    if field.grid.Ny < 4:
        raise SolverError("ddy needs at least 4 y nodes")
    return field.like(dy_array(field.values, field.grid.yaxis))


def divergence(u: VectorField2D) -> ScalarField2D:
    g = u.grid
    return u.u1.like(dx_array(u.u1.values, g.Lx) + dy_array(u.u2.values, g.yaxis))


def vorticity(u: VectorField2D) -> ScalarField2D:
    """omega = d_y u1 - d_x u2."""
    g = u.grid
    return u.u1.like(dy_array(u.u1.values, g.yaxis) - dx_array(u.u2.values, g.Lx))


# ---------------------------------------------------------------------------
# Per-mode tridiagonal solves
# ---------------------------------------------------------------------------


class ModalSolver:
    """Factorised ``(a I - b d_xx - c L_y)`` for all rfft modes at once.

    ``L_y`` is the finite-volume Laplacian :func:`_fv_laplacian`. Each end is
    either ``"neumann"`` (flux data through the right-hand side) or
    ``"dirichlet"`` (row replaced by the identity). ``mode0_bottom``/
    ``mode0_top`` override the end types for the x-mean mode only.
    """

    def __init__(self, grid: Grid2D, a: float, b: float, c: float,
                 bottom: str = "neumann", top: str = "neumann",
                 mode0_bottom: str | None = None, mode0_top: str | None = None):
        self.grid = grid
        self.bottom, self.top = bottom, top
        self.mode0_bottom = mode0_bottom or bottom
        self.mode0_top = mode0_top or top
        ny = grid.Ny
        lap = grid.yaxis.lap.tolil()
        blocks = []
        for m, k in enumerate(grid.kx):
            A = sp.lil_matrix((a + b * k * k) * sp.identity(ny) - c * lap)
            bot = self.mode0_bottom if m == 0 else bottom
            tp = self.mode0_top if m == 0 else top
            if bot == "dirichlet":
                A[0, :] = 0.0
                A[0, 0] = 1.0
            if tp == "dirichlet":
                A[ny - 1, :] = 0.0
                A[ny - 1, ny - 1] = 1.0
            blocks.append(A.tocsc())
        full = sp.block_diag(blocks, format="csc")
        self._lu = splu(full)
        self._nm = grid.kx.size

    def solve(self, rhs_hat: np.ndarray) -> np.ndarray:
        """Solve for complex modal coefficients, ``rhs_hat`` shape (Nx//2+1, Ny)."""
        flat = rhs_hat.reshape(-1)
        stacked = np.stack([flat.real, flat.imag], axis=1)
        sol = self._lu.solve(stacked)
        if not np.all(np.isfinite(sol)):
            raise SolverError("modal tridiagonal solve produced non-finite values")
        return (sol[:, 0] + 1j * sol[:, 1]).reshape(rhs_hat.shape)


_STREAM_CACHE: dict[int, ModalSolver] = {}


def _stream_solver(grid: Grid2D) -> ModalSolver:
    key = id(grid)
    solver = _STREAM_CACHE.get(key)
    if solver is None or solver.grid is not grid:
        # (k^2 - L_y) Phi_k = -omega_k
        solver = ModalSolver(grid, 0.0, 1.0, 1.0, bottom="dirichlet", top="dirichlet",
                             mode0_top="neumann")
        _STREAM_CACHE[key] = solver
    return solver


def solve_streamfunction_array(omega: np.ndarray, grid: Grid2D, u_far: float = 0.0) -> np.ndarray:
    """Solve ``Delta Phi = omega`` with ``Phi = 0`` at both walls for x-modes
    and ``Phi = 0``, ``d_y Phi = u_far`` at the top for the x-mean."""
    rhs = -np.fft.rfft(omega, axis=0)
    rhs[:, 0] = 0.0
    rhs[1:, -1] = 0.0
    # mean mode, Neumann top: flux datum moves to the right-hand side
    rhs[0, -1] += u_far * grid.Nx / grid.yaxis.vol[-1]
    phi_hat = _stream_solver(grid).solve(rhs)
    return np.fft.irfft(phi_hat, n=grid.Nx, axis=0)


def velocity_from_streamfunction(phi: np.ndarray, grid: Grid2D) -> tuple[np.ndarray, np.ndarray]:
    """u = (d_y Phi, -d_x Phi); u2 vanishes at y=0 because Phi does."""
    u1 = dy_array(phi, grid.yaxis)
    u2 = -dx_array(phi, grid.Lx)
    return u1, u2


def solve_streamfunction(omega: ScalarField2D, u_far: float = 0.0) -> ScalarField2D:
    """Streamfunction of a vorticity field (``omega = Delta Phi``)."""
    return omega.like(solve_streamfunction_array(omega.values, omega.grid, u_far))


# ---------------------------------------------------------------------------
# Half-line quadrature
# ---------------------------------------------------------------------------


def interval_integrals(profile: np.ndarray, nodes_axis: _Axis) -> np.ndarray:
    """Per-interval integrals along the last axis (shape ``(..., n-1)``)."""
    flat = profile.reshape(-1, profile.shape[-1])
    out = np.asarray(nodes_axis.intervals @ flat.T).T
    return out.reshape(profile.shape[:-1] + (profile.shape[-1] - 1,))


def _tail_length(z: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Fitted exponential decay length from the last decade of samples."""
    n = z.size
    k = max(n // 10, 2)
    zz = z[-k:]
    a = np.abs(p[..., -k:])
    tiny = np.finfo(float).tiny
    with np.errstate(divide="ignore", invalid="ignore"):
        la = np.log(np.maximum(a, tiny))
        zc = zz - zz.mean()
        slope = (la - la.mean(axis=-1, keepdims=True)) @ zc / np.sum(zc * zc)
        ell = np.where(slope < 0, -1.0 / slope, 0.0)
    ell = np.where(np.all(a > tiny, axis=-1), ell, 0.0)
    return np.minimum(ell, zz[-1] - zz[0])


def _check_decay(p: np.ndarray, rel: float = 1e-8):
    peak = np.max(np.abs(p))
    if peak > 0 and np.max(np.abs(p[..., -1])) > rel * peak:
        warnings.warn("profile has not decayed at Zmax; tail integral is truncation-dominated",
                      DecayWarning, stacklevel=3)


def tail_integrals(profile: np.ndarray, lgrid: LayerGrid, check: bool = True) -> np.ndarray:
    """``int_z^infty profile`` at every node (last axis is z).

    Piecewise-cubic interval rule accumulated from Zmax downward, plus the
    exponential tail ``profile(Zmax) * ell``.
    """
    profile = np.asarray(profile, dtype=float)
    if check:
        _check_decay(profile)
    z = lgrid.z_nodes
    parts = interval_integrals(profile, lgrid.zaxis)
    out = np.zeros(profile.shape)
    out[..., :-1] = np.cumsum(parts[..., ::-1], axis=-1)[..., ::-1]
    tail = profile[..., -1] * _tail_length(z, profile)
    return out + tail[..., None]


def integrate_z_tail(profile, lgrid: LayerGrid, start: float = 0.0) -> float:
    """``int_start^infty`` of a 1D profile sampled on ``lgrid``."""
    p = np.asarray(profile, dtype=float)
    z = lgrid.z_nodes
    _check_decay(p)
    full = tail_integrals(p, lgrid, check=False)
    if start <= 0.0:
        return float(full[0])
    j = int(np.searchsorted(z, start, side="right") - 1)
    j = min(j, z.size - 2)
    # partial interval [start, z_{j+1}] by the local cubic
    s = min(max(j - 1, 0), z.size - 4)
    idx = np.arange(s, s + 4)
    coef = np.polyfit(z[idx] - z[j], p[idx], 3)
    anti = np.polyint(coef)
    part = np.polyval(anti, z[j + 1] - z[j]) - np.polyval(anti, start - z[j])
    return float(part + full[j + 1])


def quadrature_weights(nodes: np.ndarray) -> np.ndarray:
    """Node weights of the composite piecewise-cubic rule."""
    return _Axis(np.asarray(nodes, dtype=float)).weights
