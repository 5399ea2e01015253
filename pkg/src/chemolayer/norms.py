"""Anisotropic (conormal) Sobolev norms of gridded fields.

Outer fields are measured with the weight ``psi(y)`` in front of normal
derivatives, layer profiles with ``(delta z)`` and the polynomial z-weight
``(1 + z)^s``. Time derivatives come from a short ring of snapshots.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .grid import Grid2D, LayerGrid, dx_array, _check_decay

__all__ = [
    "ConormalWeight",
    "MultiIndex",
    "NormSpec",
    "FieldHistory",
    "multi_indices",
    "psi_weight",
    "conormal_derivative",
    "y_norm",
    "y_inf_norm",
    "time_norm",
    "z_norm",
    "sup_in_time",
    "l2_in_time",
    "write_norm_rows",
]


@dataclass(frozen=True)
class ConormalWeight:
    """psi(y): delta*y on [0, 1/2], delta*y/(1+y) on [1, inf), Hermite join between."""

    delta: float = 0.1

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")

    def __call__(self, y):
        return psi_weight(y, self)

    def derivative(self, y):
        y = np.asarray(y, dtype=float)
        d = self.delta
        t = (y - 0.5) / 0.5
        # equal end values cancel; only the slope basis functions remain
        mid = (3 * t**2 - 4 * t + 1) * d + (3 * t**2 - 2 * t) * d / 4
        return np.where(y <= 0.5, d, np.where(y >= 1.0, d / (1 + y) ** 2, mid))


def psi_weight(y, w: ConormalWeight):
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("psi is defined for y >= 0")
    d = w.delta
    # cubic Hermite on [1/2, 1]: values (d/2, d/2), slopes (d, d/4)
    t = (y - 0.5) / 0.5
    h00 = 2 * t**3 - 3 * t**2 + 1
    h10 = t**3 - 2 * t**2 + t
    h01 = -2 * t**3 + 3 * t**2
    h11 = t**3 - t**2
    mid = h00 * d / 2 + h10 * 0.5 * d + h01 * d / 2 + h11 * 0.5 * d / 4
    out = np.where(y <= 0.5, d * y, np.where(y >= 1.0, d * y / (1.0 + y), mid))
    return out if out.ndim else float(out)


class MultiIndex(NamedTuple):
    a1: int  # time
    a2: int  # x
    a3: int  # conormal normal direction

    @property
    def order(self) -> int:
        return self.a1 + self.a2 + self.a3


@dataclass(frozen=True)
class NormSpec:
    l: int
    m: int
    kind: str = "Y"  # "Y", "Yinf" or "Z"
    s: float = 0.0

    def __post_init__(self):
        if self.kind not in ("Y", "Yinf", "Z"):
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if not 0 <= self.l <= self.m:
            raise ValueError("need 0 <= l <= m")
        if self.s < 0:
            raise ValueError("s must be nonnegative")


def multi_indices(l: int, m: int) -> list[MultiIndex]:
    """All indices with a1 <= l and |alpha| <= m, in a fixed order."""
    out = []
    for a1, a2, a3 in itertools.product(range(l + 1), range(m + 1), range(m + 1)):
        if a1 + a2 + a3 <= m:
            out.append(MultiIndex(a1, a2, a3))
    return out


@dataclass(eq=False)
class FieldHistory:
    """Consecutive snapshots with uniform spacing ``dt``.

    ``values`` has shape ``(depth, Nx, N)``; ``grid`` is a :class:`Grid2D` or
    :class:`LayerGrid` (the latter paired with ``Lx``).
    """

    values: np.ndarray
    times: np.ndarray
    grid: Grid2D | LayerGrid
    Lx: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        if self.values.ndim == 2:
            self.values = self.values[None]
        if self.values.shape[0] != self.times.size:
            raise ValueError("one time per snapshot required")
        if self.times.size > 1:
            dts = np.diff(self.times)
            if np.any(dts <= 0) or np.ptp(dts) > 1e-9 * max(abs(dts[0]), 1e-300):
                raise ValueError("snapshot times must increase with constant spacing")
        if isinstance(self.grid, Grid2D):
            self.Lx = self.grid.Lx
        elif self.Lx is None:
            raise ValueError("layer histories need Lx")

    @classmethod
    def static(cls, values, grid, Lx=None, time=0.0) -> "FieldHistory":
        return cls(np.asarray(values)[None], np.array([time]), grid, Lx)

    @property
    def depth(self) -> int:
        return self.times.size

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.depth > 1 else float("nan")

    @property
    def axis(self):
        return self.grid.yaxis if isinstance(self.grid, Grid2D) else self.grid.zaxis

    @property
    def nodes(self) -> np.ndarray:
        return self.axis.nodes


def _time_derivative(stack: np.ndarray, dt: float, order: int, at: int) -> np.ndarray:
    if order == 0:
        return stack[at]
    if stack.shape[0] < order + 1:
        raise ValueError(f"history depth {stack.shape[0]} too small for d_t^{order}")
    d = stack
    for _ in range(order):
        d = np.gradient(d, dt, axis=0, edge_order=2 if d.shape[0] >= 3 else 1)
    return d[at]


def _derivative(h: FieldHistory, alpha: MultiIndex, weight: np.ndarray, at: int) -> np.ndarray:
    f = _time_derivative(h.values, h.dt, alpha.a1, at)
    if alpha.a2:
        f = dx_array(f, h.Lx, alpha.a2)
    if alpha.a3:
        axis = h.axis
        for _ in range(alpha.a3):
            f = axis.apply(axis.d1, f)
        f = weight**alpha.a3 * f
    return f


def conormal_derivative(h: FieldHistory, alpha, w: ConormalWeight, at: int = -1) -> np.ndarray:
    """``d_t^a1 d_x^a2 psi^a3 d_y^a3`` of the snapshot at index ``at``."""
    alpha = MultiIndex(*alpha)
    if isinstance(h.grid, LayerGrid):
        weight = w.delta * h.nodes
    else:
        weight = psi_weight(h.nodes, w)
    return _derivative(h, alpha, weight, at)


def _l2_sq(f: np.ndarray, h: FieldHistory, extra: np.ndarray | None = None) -> float:
    wts = h.axis.weights if extra is None else h.axis.weights * extra
    dx = h.Lx / f.shape[0]
    return float(dx * np.sum((f * f) @ wts))


def y_norm(h: FieldHistory, spec: NormSpec, w: ConormalWeight, at: int = -1) -> float:
    """Discrete Y^{l,m} norm."""
    total = 0.0
    for alpha in multi_indices(spec.l, spec.m):
        total += _l2_sq(conormal_derivative(h, alpha, w, at), h)
    return float(np.sqrt(total))


def y_inf_norm(h: FieldHistory, spec: NormSpec, w: ConormalWeight, at: int = -1) -> float:
    """Discrete Y^{l,m}_inf norm (square root of summed squared sup-norms)."""
    total = 0.0
    for alpha in multi_indices(spec.l, spec.m):
        total += float(np.max(np.abs(conormal_derivative(h, alpha, w, at)))) ** 2
    return float(np.sqrt(total))


def time_norm(h: FieldHistory, l: int = 1, at: int = -1) -> float:
    """Discrete Y^l norm: L2 norms of the first ``l`` time derivatives only."""
    total = 0.0
    for a1 in range(l + 1):
        total += _l2_sq(_time_derivative(h.values, h.dt, a1, at), h)
    return float(np.sqrt(total))


def z_norm(p: FieldHistory, spec: NormSpec, delta: float = 0.1, at: int = -1) -> float:
    """Discrete inner norm Z^{l,m}_s with (delta z)^a3 d_z^a3 derivatives."""
    _check_decay(p.values[at])
    w = ConormalWeight(delta)
    zw = (1.0 + p.nodes) ** (2 * spec.s)
    total = 0.0
    for alpha in multi_indices(spec.l, spec.m):
        total += _l2_sq(conormal_derivative(p, alpha, w, at), p, zw)
    return float(np.sqrt(total))


def sup_in_time(values: Iterable[float]) -> float:
    """Discrete surrogate of the L^infty_t aggregation."""
    return float(np.max(np.asarray(list(values), dtype=float)))


def l2_in_time(times, values) -> float:
    """Discrete surrogate of the L^2_t aggregation (trapezoid in t)."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.size == 1:
        return float(abs(v[0]))
    return float(np.sqrt(np.trapezoid(v * v, t)))


def write_norm_rows(path, rows):
    """Write (time, kind, l, m, s, value) rows."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["time", "kind", "l", "m", "s", "value"])
        for r in rows:
            wr.writerow(r)
