"""Discrete harmonic-analysis norms on the periodic lattice.

All suprema run over dyadic families (cube sides and scales ``h 2^k``) so
every quantity is exactly computable.  Cubes and balls wrap periodically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .lattice import Field, Grid, _check_same, gradient, lp_norm

__all__ = [
    "DyadicCubeSet",
    "bmo_seminorm",
    "hat_weights",
    "hardy_norm",
    "divcurl_product",
    "product_gradient_hardy",
    "radius_cap",
    "morrey_norm",
    "campanato_norm",
]


@dataclass(frozen=True)
class DyadicCubeSet:
    """All periodic cubes of side ``h 2^k <= L`` at every cell position."""

    grid: Grid

    @property
    def sides(self) -> list[int]:
        out, s = [], 1
        while s <= self.grid.N:
            out.append(s)
            s *= 2
        return out

    @property
    def count(self) -> int:
        return len(self.sides) * self.grid.size


def _as2d(f: Field) -> np.ndarray:
    return np.asarray(f.values).reshape(f.grid.shape2d)


def bmo_seminorm(f: Field) -> float:
    """Largest mean oscillation ``avg_Q |f - f_Q|`` over the dyadic cube set."""
    if np.iscomplexobj(f.values):
        if np.any(f.values.imag):
            raise ValueError("bmo_seminorm expects a real field")
    a = _as2d(f).real
    best = 0.0
    for s in DyadicCubeSet(f.grid).sides:
        sy = 1 if f.grid.dim == 1 else s
        best = max(best, _kernels.cube_oscillation_max(a, sy, s))
    return best


def hat_weights(radius_cells: int) -> np.ndarray:
    """Unit-sum 1-D triangle weights ``(1 - |k|/r)_+`` for ``|k| < r``."""
    r = int(radius_cells)
    k = np.arange(-r + 1, r)
    w = 1.0 - np.abs(k) / r
    return w / w.sum()


def _scales(grid: Grid) -> list[int]:
    out, r = [], 1
    while r <= grid.N // 2:
        out.append(r)
        r *= 2
    return out


def hardy_norm(f: Field) -> float:
    """``h^dim sum_x max_t |h_t * f|(x)`` over radii ``t in {h, 2h, ..., L/2}``.

    ``h_t`` is the tensor-product hat of radius ``t`` normalized to unit mass
    on the lattice; convolutions are periodic.
    """
    g = f.grid
    a = _as2d(f)
    axes = (1,) if g.dim == 1 else (0, 1)
    sup = np.zeros(a.shape)
    for r in _scales(g):
        w = hat_weights(r)
        sm = _kernels.smooth(a.real, w, axes)
        if np.iscomplexobj(a):
            sm = sm + 1j * _kernels.smooth(a.imag, w, axes)
        sup = np.maximum(sup, np.abs(sm))
    return float(g.cell_volume * sup.sum())


def _component(f: Field, i: int) -> np.ndarray:
    dim = f.grid.dim
    if not 1 <= i <= dim:
        raise IndexError(f"derivative index {i} outside 1..{dim}")
    return gradient(f).values[i - 1]


def divcurl_product(u: Field, v: Field, i: int, j: int) -> Field:
    """``d_j u d_i v - d_i u d_j v`` with lattice derivatives (indices are 1-based)."""
    _check_same(u, v)
    val = _component(u, j) * _component(v, i) - _component(u, i) * _component(v, j)
    return Field(u.grid, val)


def product_gradient_hardy(u: Field, v: Field, i: int) -> tuple[float, float]:
    """Hardy norm of ``d_i(uv)`` and the bound ``||u||_2 ||grad v||_2 + ||grad u||_2 ||v||_2``."""
    _check_same(u, v)
    uv = Field(u.grid, u.values * v.values)
    val = hardy_norm(Field(u.grid, _component(uv, i)))
    bound = lp_norm(u, 2) * lp_norm(gradient(v), 2) + lp_norm(gradient(u), 2) * lp_norm(v, 2)
    return val, bound


# ----------------------------------------------------------- Morrey scales


def radius_cap(grid: Grid) -> float:
    """Largest radius used by the Morrey/Campanato suprema: ``min(1, L/2)``."""
    return min(1.0, grid.side_length / 2)


def _radii(grid: Grid) -> list[float]:
    cap = radius_cap(grid) * (1 + 1e-12)
    out, r = [], grid.h
    while r <= cap:
        out.append(r)
        r *= 2
    return out


def _ball_offsets(grid: Grid, radius: float):
    m = int(np.floor(radius / grid.h + 1e-9))
    k = np.arange(-m, m + 1)
    if grid.dim == 1:
        dx = k[np.abs(k) * grid.h <= radius * (1 + 1e-12)]
        dy = np.zeros_like(dx)
    else:
        dy, dx = np.meshgrid(k, k, indexing="ij")
        keep = np.hypot(dy, dx) * grid.h <= radius * (1 + 1e-12)
        dy, dx = dy[keep], dx[keep]
    # a ball of radius L/2 wraps: offsets equal mod N are the same cell
    cells = np.unique(np.stack([dy % grid.N, dx % grid.N], axis=1), axis=0)
    return cells[:, 0], cells[:, 1]


def _ball_sup(f: Field, gamma: float, which: int) -> float:
    g = f.grid
    a = _as2d(f)
    best = 0.0
    for r in _radii(g):
        dy, dx = _ball_offsets(g, r)
        stats = _kernels.ball_maxima(a, dy, dx)
        best = max(best, r ** (-gamma) * g.cell_volume * stats[which])
    return float(np.sqrt(best))


def morrey_norm(f: Field, gamma: float) -> float:
    """``sup_{x, R} (R^-gamma int_{B_R(x)} |f|^2)^{1/2}`` over dyadic ``R <= radius_cap``."""
    if not 0 <= gamma <= f.grid.dim:
        raise ValueError(f"Morrey exponent must lie in [0, {f.grid.dim}]")
    return _ball_sup(f, gamma, 0)


def campanato_norm(f: Field, gamma: float) -> float:
    """Like :func:`morrey_norm` with ``|f - f_B|^2`` in place of ``|f|^2``."""
    if not 0 <= gamma <= f.grid.dim + 2:
        raise ValueError(f"Campanato exponent must lie in [0, {f.grid.dim + 2}]")
    return _ball_sup(f, gamma, 1)
