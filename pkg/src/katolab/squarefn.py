"""Vertical square functions on a geometric time grid.

For each kind the pointwise value is ``(int_0^inf |Psi(t) f(x)|^2 dt/t)^{1/2}``:

    GL     t L^{1/2} e^{-t^2 L} f
    G1     t L e^{-t^2 L} f
    G2X    t^2 grad L e^{-t^2 L} f
    G2T    t^2 d/dt (L e^{-t^2 L} f) = -2 t^3 L^2 e^{-t^2 L} f
    GGRAD  grad e^{-sL} f with the measure ds (written as 2 t^2 dt/t, s = t^2)

Every kind therefore needs ``e^{-sL}`` at ``s = t_k^2`` only, served by one
contour.  The trapezoid rule in ``log t`` covers ``[t_min, t_max]``; the piece
``(0, t_min)`` is added from the small-``t`` expansion ``Psi(t) ~ t^a X``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .calculus import ORACLE_LIMIT, sqrt_apply, sqrtm_oracle
from .lattice import Field, GridError, difference_matrix, lp_norm, test_family
from .operator import EllipticOperator
from .semigroup import SemigroupQuadrature

__all__ = [
    "SquareFnKind",
    "TimeGrid",
    "default_time_grid",
    "square_function",
    "square_functions",
    "ggrad_energy",
    "SquareFnSweepReport",
    "square_function_ratio_sweep",
    "square_function_ratio_sweeps",
]


class SquareFnKind(str, enum.Enum):
    GL = "GL"
    GGRAD = "GGRAD"
    G1 = "G1"
    G2X = "G2X"
    G2T = "G2T"


@dataclass(frozen=True)
class TimeGrid:
    """Nodes ``t_k = t_min rho^k`` (``k = 0..K``, ``t_K >= t_max``) with trapezoid weights for ``dt/t``."""

    t_min: float
    t_max: float
    ratio: float = 1.1

    def __post_init__(self):
        if not 0 < self.t_min < self.t_max:
            raise ValueError("need 0 < t_min < t_max")
        if not 1 < self.ratio <= 1.5:
            raise ValueError("ratio must lie in (1, 1.5]")

    def validate_for(self, grid) -> None:
        if self.t_min > grid.h:
            raise ValueError(f"t_min = {self.t_min} exceeds h = {grid.h}")
        if self.t_max < grid.side_length**2:
            raise ValueError(f"t_max = {self.t_max} below L^2 = {grid.side_length ** 2}")

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        K = math.ceil(math.log(self.t_max / self.t_min) / math.log(self.ratio))
        t = self.t_min * self.ratio ** np.arange(K + 1)
        w = np.full(K + 1, math.log(self.ratio))
        w[0] *= 0.5
        w[-1] *= 0.5
        return t, w

    def refined(self) -> "TimeGrid":
        return TimeGrid(self.t_min, self.t_max, math.sqrt(self.ratio))


def default_time_grid(grid) -> TimeGrid:
    """``t_min = h^2/4``, ``t_max = 4 L^2``, ``rho = 1.1``."""
    return TimeGrid(grid.h**2 / 4, 4 * grid.side_length**2, 1.1)


def _as_columns(op, f):
    if isinstance(f, Field):
        if f.grid != op.grid:
            raise GridError("field and operator live on different grids")
        return np.asarray(f.values, float)[:, None], True
    a = np.asarray(f)
    if a.shape[0] != op.size:
        raise GridError("array rows do not match the grid")
    if np.iscomplexobj(a):
        raise TypeError("square functions take real fields")
    return (a[:, None], True) if a.ndim == 1 else (a, False)


def _pointwise_sq(vals: np.ndarray, dim: int, vector: bool) -> np.ndarray:
    """``|v(x)|^2`` for arrays shaped ``(T, rows, k)``; vector rows are component-major."""
    if vector:
        T, rows, k = vals.shape
        vals = vals.reshape(T, dim, rows // dim, k)
        return (vals**2).sum(axis=1)
    return vals**2


def square_functions(op: EllipticOperator, f, kinds, tg: TimeGrid | None = None, sqrt_path: str = "auto",
                     with_check: bool = False):
    """Square functions of several kinds for one field or a column stack.

    Returns ``(values, info)`` where ``values[kind]`` has shape ``(n,)`` for a
    Field input and ``(n, k)`` for an array input, and ``info`` records the
    square-root path used by GL and, with ``with_check``, the largest relative
    pointwise gap between the two G2T evaluations.
    """
    kinds = [SquareFnKind(k) for k in kinds]
    tg = tg or default_time_grid(op.grid)
    tg.validate_for(op.grid)
    X, single = _as_columns(op, f)
    X = X - X.mean(axis=0, keepdims=True)  # constants contribute nothing to any kind
    g = op.grid
    D = difference_matrix(g)
    t, w = tg.nodes()
    s = t**2
    bank = SemigroupQuadrature(op, float(s.min()), float(s.max()), max_order=1)
    M = op.matrix
    MX = M @ X
    out, info = {}, {"sqrt_path": None}

    def accumulate(vals, scale_pow, vector, head):
        sq = _pointwise_sq(vals, g.dim, vector)
        fac = (w * t ** (2 * scale_pow))[:, None, None]
        return np.sqrt(np.einsum("tnk->nk", fac * sq) + head)

    # one request per kind, all served by a single pass over the contour
    reqs, MMX = {}, None
    if SquareFnKind.GL in kinds:
        path = sqrt_path
        if path == "auto":
            path = "oracle" if op.size <= ORACLE_LIMIT else "quadrature"
        info["sqrt_path"] = path
        R = sqrtm_oracle(op) @ X if path == "oracle" else sqrt_apply(op, X)
        reqs[SquareFnKind.GL] = (R, (0,), None)
    if SquareFnKind.G1 in kinds:
        reqs[SquareFnKind.G1] = (MX, (0,), None)
    if SquareFnKind.G2X in kinds:
        reqs[SquareFnKind.G2X] = (MX, (0,), D)
    if SquareFnKind.G2T in kinds:
        MMX = M @ MX
        reqs[SquareFnKind.G2T] = (MX, (1,), None)
        if with_check:
            reqs["G2T_check"] = (MMX, (0,), None)
    if SquareFnKind.GGRAD in kinds:
        reqs[SquareFnKind.GGRAD] = (X, (0,), D)
    keys = list(reqs)
    res = dict(zip(keys, (r[0] for r in bank.slices_many(s, [reqs[k] for k in keys]))))

    tm = tg.t_min
    for kind in kinds:
        vals = res[kind]
        if kind is SquareFnKind.GL:
            R = reqs[kind][0]
            out[kind] = accumulate(vals, 1, False, tm**2 / 2 * R**2)
        elif kind is SquareFnKind.G1:
            out[kind] = accumulate(vals, 1, False, tm**2 / 2 * MX**2)
        elif kind is SquareFnKind.G2X:
            head = _pointwise_sq((D @ MX)[None], g.dim, True)[0]
            out[kind] = accumulate(vals, 2, True, tm**4 / 4 * head)
        elif kind is SquareFnKind.G2T:
            # t^2 d/dt e^{-t^2 L} (MX) = 2 t^3 (d/ds e^{-sL})(MX) at s = t^2
            vals = 2 * vals
            out[kind] = accumulate(vals, 3, False, tm**6 / 6 * 4 * MMX**2)
            if with_check:
                alt = -2 * res["G2T_check"]
                gap = np.abs(vals - alt).max() / max(np.abs(alt).max(), np.finfo(float).tiny)
                info["g2t_identity_gap"] = float(gap)
        elif kind is SquareFnKind.GGRAD:
            head = _pointwise_sq((D @ X)[None], g.dim, True)[0]
            # measure ds = 2 t^2 dt/t
            out[kind] = accumulate(math.sqrt(2) * vals, 1, True, tm**2 * head)
    if single:
        out = {k: v[:, 0] for k, v in out.items()}
    return out, info


def square_function(op: EllipticOperator, f: Field, kind, tg: TimeGrid | None = None) -> Field:
    """Pointwise square function of one field."""
    vals, _ = square_functions(op, f, [kind], tg)
    return Field(op.grid, vals[SquareFnKind(kind)])


def ggrad_energy(op: EllipticOperator, f: Field, tg: TimeGrid | None = None) -> float:
    """``int_0^inf |grad e^{-sL} f|_2^2 ds``."""
    vals, _ = square_functions(op, f, [SquareFnKind.GGRAD], tg)
    v = vals[SquareFnKind.GGRAD]
    return float(op.grid.cell_volume * np.sum(v**2))


@dataclass
class SquareFnSweepReport:
    """Ratios ``|S_kind F|_p / |grad F|_p`` over a test family, one list per ``p``."""

    kind: str
    ps: list[float]
    family: str
    count: int
    seed: int
    ratios: dict = field(default_factory=dict)
    max: dict = field(default_factory=dict)
    min: dict = field(default_factory=dict)
    skipped: int = 0
    N: int = 0
    dim: int = 0
    sqrt_path: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def square_function_ratio_sweep(op: EllipticOperator, p, kind, family: str = "band", count: int = 6,
                                seed: int = 0, tg: TimeGrid | None = None) -> SquareFnSweepReport:
    """Per-sample ``L^p`` ratios; ``p`` may be a number or a list (one pass serves all)."""
    return square_function_ratio_sweeps(op, p, [kind], family, count, seed, tg)[SquareFnKind(kind)]


def square_function_ratio_sweeps(op: EllipticOperator, p, kinds, family: str = "band", count: int = 6,
                                 seed: int = 0, tg: TimeGrid | None = None) -> dict:
    """:func:`square_function_ratio_sweep` for several kinds sharing one contour pass."""
    ps = [float(x) for x in np.atleast_1d(p)]
    if any(not 1 < x < math.inf for x in ps):
        raise ValueError("p must lie in (1, inf)")
    kinds = [SquareFnKind(k) for k in kinds]
    fields = test_family(op.grid, family, count, seed)
    D = difference_matrix(op.grid)
    keep = [f for f in fields if np.any(D @ f.values)]
    reps = {k: SquareFnSweepReport(k.value, ps, family, count, seed, skipped=len(fields) - len(keep),
                                   N=op.grid.N, dim=op.grid.dim) for k in kinds}
    if not keep:
        return reps
    X = np.stack([f.values for f in keep], axis=1)
    vals, info = square_functions(op, X, kinds, tg)
    G = (D @ X).reshape(op.grid.dim, op.size, -1)
    for k in kinds:
        rep = reps[k]
        rep.sqrt_path = info["sqrt_path"] if k is SquareFnKind.GL else None
        S = vals[k]
        for q in ps:
            r = [lp_norm(Field(op.grid, S[:, j]), q) / lp_norm(Field(op.grid, G[:, :, j]), q)
                 for j in range(X.shape[1])]
            rep.ratios[str(q)] = r
            rep.max[str(q)] = float(max(r))
            rep.min[str(q)] = float(min(r))
    return reps
