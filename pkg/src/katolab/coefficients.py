"""Coefficient fields ``A = A^s + A^a`` for ``-div(A grad)``.

``A^s`` is pointwise symmetric with spectrum in ``[lambda0, 1/lambda0]``;
``A^a`` is pointwise anti-symmetric with every entry bounded in the dyadic
BMO seminorm by ``Lambda0``.  Both are constant on cells.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .lattice import Field, Grid
from .spaces import bmo_seminorm

__all__ = ["CoefficientError", "CoefficientKind", "CoefficientField", "make_coefficients"]

_TOL = 1e-12


class CoefficientError(ValueError):
    pass


class CoefficientKind(str, enum.Enum):
    IDENTITY = "IDENTITY"
    ANISOTROPIC_SYM = "ANISOTROPIC_SYM"
    SMOOTH_ANTISYM = "SMOOTH_ANTISYM"
    BMO_LOG = "BMO_LOG"


@dataclass(frozen=True, eq=False)
class CoefficientField:
    grid: Grid
    sym: np.ndarray = field(repr=False)  # (ncells, dim, dim)
    antisym: np.ndarray = field(repr=False)
    lambda0: float
    Lambda0: float
    kind: str = "CUSTOM"

    def __post_init__(self):
        g = self.grid
        shape = (g.size, g.dim, g.dim)
        for name in ("sym", "antisym"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise CoefficientError(f"{name} must have shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise CoefficientError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)
        if not 0 < self.lambda0 <= 1:
            raise CoefficientError("lambda0 must lie in (0, 1]")
        if not self.Lambda0 > 0:
            raise CoefficientError("Lambda0 must be positive")
        s, a = self.sym, self.antisym
        if np.max(np.abs(s - s.transpose(0, 2, 1)), initial=0) > _TOL:
            raise CoefficientError("symmetric part is not symmetric")
        if np.max(np.abs(a + a.transpose(0, 2, 1)), initial=0) > _TOL:
            raise CoefficientError("anti-symmetric part is not anti-symmetric")
        ev = np.linalg.eigvalsh(s)
        if ev.min() < self.lambda0 - _TOL or ev.max() > 1 / self.lambda0 + _TOL:
            raise CoefficientError(
                f"ellipticity violated: eigenvalues in [{ev.min():.6g}, {ev.max():.6g}], "
                f"lambda0 = {self.lambda0}"
            )
        bmo = self.antisym_bmo()
        if bmo > self.Lambda0 * (1 + 1e-9):
            raise CoefficientError(f"BMO seminorm {bmo:.6g} of A^a exceeds Lambda0 = {self.Lambda0}")

    @property
    def full(self) -> np.ndarray:
        return self.sym + self.antisym

    def antisym_bmo(self) -> float:
        g = self.grid
        if g.dim == 1:
            return 0.0
        return bmo_seminorm(Field(g, self.antisym[:, 0, 1]))

    def transpose(self) -> "CoefficientField":
        """Coefficients of the adjoint operator, ``A -> A^T``."""
        return CoefficientField(self.grid, self.sym, -self.antisym, self.lambda0, self.Lambda0, self.kind)


def _antisym_from_entry(grid: Grid, a: np.ndarray) -> np.ndarray:
    out = np.zeros((grid.size, grid.dim, grid.dim))
    if grid.dim == 2:
        out[:, 0, 1] = a
        out[:, 1, 0] = -a
    return out


def _identity_sym(grid: Grid) -> np.ndarray:
    return np.broadcast_to(np.eye(grid.dim), (grid.size, grid.dim, grid.dim)).copy()


def bmo_log_entry(grid: Grid, kappa: float, center=None) -> np.ndarray:
    """``kappa log(d_T(x, x0)/L + h/L)``: unbounded as ``h -> 0`` but uniformly BMO."""
    if center is None:
        center = grid.centers()[np.ravel_multi_index((grid.N // 2,) * grid.dim, grid.shape)]
    d = grid.distance_from(center)
    L = grid.side_length
    return kappa * np.log(d / L + grid.h / L)


def make_coefficients(kind, grid: Grid, *, lambda0: float = 1.0, Lambda0=None, kappa: float = 0.5,
                      center=None) -> CoefficientField:
    """Build one of the stock coefficient fields.

    Parameters
    ----------
    kind : CoefficientKind or str
        ``IDENTITY``, ``ANISOTROPIC_SYM`` (smoothly varying SPD matrix using
        most of the allowed spectral range), ``SMOOTH_ANTISYM`` (``A^s = I``,
        ``a^a_12 = kappa sin cos``) or ``BMO_LOG`` (``A^s = I``, logarithmic
        ``a^a_12``; two-dimensional only).
    lambda0 : float
        Declared ellipticity constant.
    Lambda0 : float, optional
        Declared BMO bound for ``A^a``.  Defaults to the measured seminorm
        (or ``1e-12`` when the anti-symmetric part vanishes).
    """
    kind = CoefficientKind(kind)
    x = grid.centers()
    L = grid.side_length
    sym = _identity_sym(grid)
    anti = np.zeros_like(sym)

    if kind is CoefficientKind.IDENTITY:
        pass
    elif kind is CoefficientKind.ANISOTROPIC_SYM:
        ell = 0.9 * np.log(1.0 / lambda0)
        e1 = np.exp(ell * np.sin(2 * np.pi * x[:, 0] / L))
        if grid.dim == 1:
            sym[:, 0, 0] = e1
        else:
            e2 = np.exp(-ell * np.cos(2 * np.pi * x[:, 1] / L))
            phi = 0.5 * np.pi * np.sin(2 * np.pi * (x[:, 0] + x[:, 1]) / L)
            c, s = np.cos(phi), np.sin(phi)
            sym[:, 0, 0] = c * c * e1 + s * s * e2
            sym[:, 1, 1] = s * s * e1 + c * c * e2
            sym[:, 0, 1] = sym[:, 1, 0] = c * s * (e1 - e2)
    elif kind is CoefficientKind.SMOOTH_ANTISYM:
        if grid.dim == 2:
            a = kappa * np.sin(2 * np.pi * x[:, 0] / L) * np.cos(2 * np.pi * x[:, 1] / L)
            anti = _antisym_from_entry(grid, a)
    elif kind is CoefficientKind.BMO_LOG:
        if grid.dim != 2:
            raise CoefficientError("BMO_LOG coefficients are defined for dim = 2")
        anti = _antisym_from_entry(grid, bmo_log_entry(grid, kappa, center))

    if Lambda0 is None:
        measured = 0.0 if grid.dim == 1 else bmo_seminorm(Field(grid, anti[:, 0, 1]))
        Lambda0 = max(measured, 1e-12)
    return CoefficientField(grid, sym, anti, float(lambda0), float(Lambda0), kind.value)
