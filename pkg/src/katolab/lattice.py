"""Periodic lattices, fields and discrete calculus.

The whole-space setting is replaced by the torus ``[0, L)^dim`` sampled at
cell centers ``(k + 1/2) h``.  Scalar fields are flat arrays in row-major
cell order; vector fields have shape ``(dim, ncells)``.

Gradients are forward differences and the divergence is the exact negative
adjoint (a backward difference), so that

    <grad f, v> = -<f, div v>

holds to rounding for every pair, with the pairing ``<u, v> = h^dim sum u conj(v)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Grid",
    "GridError",
    "Field",
    "make_grid",
    "gradient",
    "divergence",
    "inner",
    "lp_norm",
    "difference_matrix",
    "constant",
    "fourier_mode",
    "band_limited",
    "random_bumps",
    "test_family",
    "save_field",
    "load_field",
]


class GridError(ValueError):
    """Invalid grid parameters or fields living on different grids."""


@dataclass(frozen=True)
class Grid:
    dim: int
    points_per_axis: int
    side_length: float

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise GridError(f"unsupported dimension {self.dim}; expected 1 or 2")
        if int(self.points_per_axis) != self.points_per_axis or self.points_per_axis < 2:
            raise GridError("points_per_axis must be an integer >= 2")
        if not self.side_length > 0:
            raise GridError("side_length must be positive")

    @property
    def N(self) -> int:
        return self.points_per_axis

    @property
    def h(self) -> float:
        return self.side_length / self.points_per_axis

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.dim

    @property
    def size(self) -> int:
        return self.N**self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def shape2d(self) -> tuple[int, int]:
        # kernel layout: 1-D grids are a single row
        return (1, self.N) if self.dim == 1 else (self.N, self.N)

    def centers(self) -> np.ndarray:
        """Cell centers, shape ``(ncells, dim)``."""
        c = (np.arange(self.N) + 0.5) * self.h
        mesh = np.meshgrid(*([c] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def index_coords(self) -> np.ndarray:
        """Integer lattice coordinates, shape ``(ncells, dim)``."""
        k = np.arange(self.N)
        mesh = np.meshgrid(*([k] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def torus_distance(self, x, y) -> np.ndarray:
        """Periodic Euclidean distance between points (broadcasting over leading axes)."""
        d = np.abs(np.asarray(x, float) - np.asarray(y, float))
        d = np.minimum(d, self.side_length - d)
        return np.sqrt((d**2).sum(axis=-1))

    def distance_from(self, point) -> np.ndarray:
        return self.torus_distance(self.centers(), np.asarray(point, float))

    @cached_property
    def _index_distance(self) -> np.ndarray:
        # distance from cell 0 to every cell; translation invariance gives the rest
        return self.torus_distance(self.centers(), self.centers()[0])

    def distance_matrix(self) -> np.ndarray:
        """Torus distances between all pairs of cell centers, ``(ncells, ncells)``."""
        idx = self.index_coords()
        diff = (idx[:, None, :] - idx[None, :, :]) % self.N
        flat = np.ravel_multi_index(tuple(np.moveaxis(diff, -1, 0)), self.shape)
        return self._index_distance[flat]


def make_grid(dim: int, N: int, side_length: float = 1.0) -> Grid:
    return Grid(int(dim), N, float(side_length))


@dataclass(frozen=True, eq=False)
class Field:
    """Values on a grid: shape ``(ncells,)`` for scalars, ``(dim, ncells)`` for vectors."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape not in ((self.grid.size,), (self.grid.dim, self.grid.size)):
            raise GridError(f"value shape {v.shape} does not match grid with {self.grid.size} cells")
        if not np.all(np.isfinite(v)):
            raise ValueError("field has non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def is_vector(self) -> bool:
        return self.values.ndim == 2

    def reshape(self) -> np.ndarray:
        if self.is_vector:
            return self.values.reshape((self.grid.dim,) + self.grid.shape)
        return self.values.reshape(self.grid.shape)

    def mean(self):
        return self.values.mean(axis=-1)

    def _coerce(self, other):
        if isinstance(other, Field):
            _check_same(self, other)
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._coerce(other))

    def __rsub__(self, other):
        return Field(self.grid, self._coerce(other) - self.values)

    def __mul__(self, other):
        return Field(self.grid, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Field(self.grid, self.values / self._coerce(other))

    def __neg__(self):
        return Field(self.grid, -self.values)

    def conj(self) -> "Field":
        return Field(self.grid, np.conj(self.values))


def _check_same(*fields: Field) -> Grid:
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridError("fields live on different grids")
    return g


# ---------------------------------------------------------------- calculus


def gradient(f: Field) -> Field:
    """Periodic forward differences, one component per axis."""
    if f.is_vector:
        raise GridError("gradient expects a scalar field")
    g = f.grid
    a = f.reshape()
    comps = [(np.roll(a, -1, axis=i) - a) / g.h for i in range(g.dim)]
    return Field(g, np.stack([c.ravel() for c in comps]))


def divergence(v: Field) -> Field:
    """Backward-difference divergence, the negative adjoint of :func:`gradient`."""
    if not v.is_vector:
        raise GridError("divergence expects a vector field")
    g = v.grid
    a = v.reshape()
    out = np.zeros(g.shape, dtype=a.dtype)
    for i in range(g.dim):
        out += (a[i] - np.roll(a[i], 1, axis=i)) / g.h
    return Field(g, out.ravel())


_DIFF_CACHE: dict[Grid, sp.csr_matrix] = {}


def difference_matrix(grid: Grid) -> sp.csr_matrix:
    """Sparse matrix of :func:`gradient`, shape ``(dim * ncells, ncells)``.

    Rows are component-major, matching ``gradient(f).values.ravel()``.
    """
    if grid not in _DIFF_CACHE:
        n = grid.N
        e = np.ones(n)
        d1 = sp.diags([-e, e[:-1], e[:1]], [0, 1, -(n - 1)], shape=(n, n)) / grid.h
        eye = sp.identity(n, format="csr")
        if grid.dim == 1:
            D = d1
        else:
            D = sp.vstack([sp.kron(d1, eye), sp.kron(eye, d1)])
        _DIFF_CACHE[grid] = sp.csr_matrix(D)
    return _DIFF_CACHE[grid]


def inner(u: Field, v: Field) -> complex:
    """``h^dim * sum u conj(v)``, summed over components for vector fields."""
    _check_same(u, v)
    return complex(u.grid.cell_volume * np.vdot(v.values, u.values))


def _pointwise_abs(f: Field) -> np.ndarray:
    if f.is_vector:
        return np.sqrt((np.abs(f.values) ** 2).sum(axis=0))
    return np.abs(f.values)


def lp_norm(f: Field, p: float) -> float:
    """Discrete ``L^p`` norm with cell weight ``h^dim``; vector fields use |.| pointwise."""
    if not (p >= 1):
        raise ValueError(f"p must be >= 1, got {p}")
    a = _pointwise_abs(f)
    if np.isinf(p):
        return float(a.max())
    m = a.max()
    if m == 0:
        return 0.0
    # scale first so large p does not overflow
    return float(m * (f.grid.cell_volume * np.sum((a / m) ** p)) ** (1.0 / p))


# --------------------------------------------------------------- generators


def constant(grid: Grid, value=1.0) -> Field:
    return Field(grid, np.full(grid.size, value))


def fourier_mode(grid: Grid, k, kind: str = "exp") -> Field:
    """``exp(2 pi i k.x / L)`` (``kind="exp"``) or its cosine/sine part."""
    k = np.atleast_1d(np.asarray(k, float))
    if k.size != grid.dim:
        raise GridError("wave vector must have one entry per axis")
    phase = 2 * np.pi * grid.centers() @ k / grid.side_length
    if kind == "exp":
        return Field(grid, np.exp(1j * phase))
    if kind == "cos":
        return Field(grid, np.cos(phase))
    if kind == "sin":
        return Field(grid, np.sin(phase))
    raise ValueError(f"unknown mode kind {kind!r}")


def band_limited(grid: Grid, kmax: int, rng: np.random.Generator) -> Field:
    """Random real mean-zero trigonometric polynomial with ``0 < |k|_inf <= kmax``."""
    ks = np.arange(-kmax, kmax + 1)
    mesh = np.meshgrid(*([ks] * grid.dim), indexing="ij")
    waves = np.stack([m.ravel() for m in mesh], axis=1)
    waves = waves[np.abs(waves).sum(axis=1) > 0]
    coef = rng.standard_normal(len(waves)) + 1j * rng.standard_normal(len(waves))
    coef /= 1.0 + np.linalg.norm(waves, axis=1)
    phase = 2 * np.pi * grid.centers() @ waves.T / grid.side_length
    vals = (np.exp(1j * phase) @ coef).real
    vals -= vals.mean()
    return Field(grid, vals / np.sqrt(grid.cell_volume * np.sum(vals**2)))


def random_bumps(grid: Grid, count: int, rng: np.random.Generator, width=None) -> Field:
    """Sum of Gaussian bumps with random centers, signs and widths, mean removed."""
    L = grid.side_length
    vals = np.zeros(grid.size)
    for _ in range(count):
        c = rng.uniform(0, L, grid.dim)
        w = width if width is not None else rng.uniform(min(4 * grid.h, L / 12), L / 6)
        d = grid.distance_from(c)
        vals += rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.5) * np.exp(-(d**2) / (2 * w**2))
    vals -= vals.mean()
    return Field(grid, vals / np.sqrt(grid.cell_volume * np.sum(vals**2)))


def test_family(grid: Grid, family: str, count: int, seed: int) -> list[Field]:
    """Deterministic list of mean-zero test fields.

    ``family`` is ``"band"`` (band-limited, ``kmax = 4``), ``"bumps"`` or
    ``"mixed"`` (alternating).
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        use_band = family == "band" or (family == "mixed" and i % 2 == 0)
        if use_band:
            out.append(band_limited(grid, 4, rng))
        elif family in ("bumps", "mixed"):
            out.append(random_bumps(grid, 3, rng))
        else:
            raise ValueError(f"unknown test family {family!r}")
    return out


test_family.__test__ = False  # not a pytest test despite the name


# ------------------------------------------------------------ serialization


def save_field(path, f: Field) -> None:
    """Write values row-major over cells, real and imaginary parts interleaved.

    ``.csv`` gives one ``re,im`` row per value; anything else is raw float64.
    """
    path = Path(path)
    flat = np.asarray(f.values, dtype=np.complex128).ravel()
    inter = np.column_stack([flat.real, flat.imag])
    if path.suffix == ".csv":
        np.savetxt(path, inter, delimiter=",", header="re,im", comments="", fmt="%.17g")
    else:
        inter.astype("<f8").tofile(path)


def load_field(path, grid: Grid, vector: bool = False) -> Field:
    path = Path(path)
    if path.suffix == ".csv":
        inter = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    else:
        inter = np.fromfile(path, dtype="<f8").reshape(-1, 2)
    vals = inter[:, 0] + 1j * inter[:, 1]
    if not np.any(vals.imag):
        vals = vals.real
    if vector:
        vals = vals.reshape(grid.dim, grid.size)
    return Field(grid, vals)
