"""Named analytic initial-data families on the periodic strip."""

from __future__ import annotations

import numpy as np

from .grid import Grid2D

__all__ = ["uniform_data", "shear_plume_data", "fluid_free_data", "make_initial", "FAMILIES"]


def uniform_data(grid: Grid2D, n0: float = 1.0, c0: float = 1.0):
    """Spatially uniform cells and chemical at rest."""
    z = grid.zeros()
    return z + n0, z + c0, z.copy()


def shear_plume_data(grid: Grid2D, n0=1.0, c0=1.0, a=0.5, b=0.5, s=0.5, mode=1):
    """Chemical gradient at the wall, a cell plume and a shear flow.

    ``c = c0 + b exp(-y - y^2/2)`` has ``d_y c = -b`` at the wall. The cell
    density carries the factor ``exp(c - c_wall)`` and a cubic correction so
    that the zero-flux relation and its first time derivative hold at y = 0.
    The plume ``a cos(kx) y^4 exp(-y^2)`` is invisible to both relations. The
    stream function ``s sin(kx) y (1 + y) exp(-y^2)`` gives wall slip and
    wall vorticity ``2 s sin(kx)``. Returns ``(n, c, omega)``.
    """
    x, y = grid.mesh
    k = 2.0 * np.pi * mode / grid.Lx
    g = np.exp(-y * y)
    c = c0 + b * np.exp(-y - 0.5 * y * y)
    kappa = n0 * b * (1.0 + c0 + b) / 6.0
    n = n0 * np.exp(c - (c0 + b)) * (1.0 + kappa * y**3 * g) + a * np.cos(k * x) * y**4 * g
    q = (y + y * y) * g
    q2 = (2.0 - 6.0 * y - 10.0 * y**2 + 4.0 * y**3 + 4.0 * y**4) * g
    omega = s * np.sin(k * x) * (q2 - k * k * q)
    return n, c, omega


def fluid_free_data(grid: Grid2D, n0=1.0, c0=1.0, b=0.5, wall_gradient=True):
    """x-independent cells and chemical at rest.

    With ``wall_gradient`` the chemical has ``d_y c = -b`` at the wall;
    otherwise ``c = c0 + b exp(-y^2)`` whose wall gradient vanishes.
    """
    _, y = grid.mesh
    if wall_gradient:
        c = c0 + b * np.exp(-y - 0.5 * y * y)
        kappa = n0 * b * (1.0 + c0 + b) / 6.0
        n = n0 * np.exp(c - (c0 + b)) * (1.0 + kappa * y**3 * np.exp(-y * y))
    else:
        c = c0 + b * np.exp(-y * y)
        n = n0 * np.exp(c - (c0 + b))
    return n, c, grid.zeros()


FAMILIES = {"uniform": uniform_data, "shear_plume": shear_plume_data, "fluid_free": fluid_free_data}


def make_initial(name: str, grid: Grid2D, **params):
    try:
        fn = FAMILIES[name]
    except KeyError:
        raise ValueError(f"unknown initial-data family {name!r}; choose from {sorted(FAMILIES)}")
    return fn(grid, **params)
