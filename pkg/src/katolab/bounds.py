"""Off-diagonal decay and ``L^p -> L^q`` bounds for semigroup families.

Families (``z`` complex time with ``|arg z| < pi/2 - theta0``):

    SEMIGROUP     e^{-zL}
    T_LT          z L e^{-zL}
    SQRT_T_GRAD   sqrt(z) grad e^{-zL}        (vector valued)

and the same built from the adjoint operator.  Matrices are formed densely
(small grids only).

Finite-dimensional caveat: on a fixed grid every operator is bounded between
any two ``L^p`` spaces.  What these sweeps measure is the scaling in ``t`` and
its stability across resolutions, not finiteness.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla

from .lattice import Grid, difference_matrix
from .operator import EllipticOperator, adjoint
from .resolvent import SectorError, fit_decay, theta0
from .semigroup import DENSE_LIMIT

__all__ = [
    "CAVEAT",
    "FamilyTag",
    "family_matrix",
    "box",
    "set_distance",
    "localized_norm",
    "OffDiagReport",
    "offdiag_fit",
    "PQNorm",
    "pq_norm",
    "pq_norm_details",
    "gamma_pq",
    "PQSweepReport",
    "pq_bound_sweep",
    "Epsilon1Report",
    "epsilon1_estimate",
]

CAVEAT = ("finite-dimensional lattice: every family is bounded between any two L^p spaces; "
          "reported quantities are scaling in t and stability across resolution")


class FamilyTag(str, enum.Enum):
    SEMIGROUP = "SEMIGROUP"
    T_LT = "T_LT"
    SQRT_T_GRAD = "SQRT_T_GRAD"
    SEMIGROUP_ADJ = "SEMIGROUP_ADJ"
    T_LT_ADJ = "T_LT_ADJ"
    SQRT_T_GRAD_ADJ = "SQRT_T_GRAD_ADJ"

    @property
    def base(self) -> "FamilyTag":
        return FamilyTag(self.value.removesuffix("_ADJ"))

    @property
    def is_adjoint(self) -> bool:
        return self.value.endswith("_ADJ")

    @property
    def vector(self) -> bool:
        return self.base is FamilyTag.SQRT_T_GRAD


def _check_sector(op: EllipticOperator, z: complex) -> None:
    z = complex(z)
    if z == 0 or z.real <= 0 and z.imag == 0:
        raise SectorError("time must be non-zero with positive real part")
    limit = math.pi / 2 - theta0(op)
    if abs(math.atan2(z.imag, z.real)) >= limit:
        raise SectorError(f"|arg z| = {abs(math.atan2(z.imag, z.real)):.4g} not below pi/2 - theta0 = {limit:.4g}")


def family_matrix(op: EllipticOperator, family, z: complex, _dense=None) -> np.ndarray:
    """Dense matrix of ``T_z`` for ``family``; vector families stack components (rows ``dim * n``)."""
    family = FamilyTag(family)
    if op.size > DENSE_LIMIT:
        raise ValueError(f"dense family matrices limited to {DENSE_LIMIT} cells")
    _check_sector(op, z)
    src = adjoint(op) if family.is_adjoint else op
    Md = src.dense() if _dense is None else _dense
    z = complex(z)
    E = sla.expm(-z.real * Md) if z.imag == 0 else sla.expm(-z * Md)
    if z.imag == 0:
        zz = z.real
    else:
        zz = z
    base = family.base
    if base is FamilyTag.SEMIGROUP:
        return E
    if base is FamilyTag.T_LT:
        return zz * (Md @ E)
    D = difference_matrix(op.grid)
    return np.sqrt(zz) * (D @ E)


# ----------------------------------------------------------------- geometry


def box(grid: Grid, corner, size) -> np.ndarray:
    """Cell indices of the periodic axis-aligned box ``corner + [0, size)`` (index units)."""
    corner = np.broadcast_to(np.asarray(corner, int), (grid.dim,))
    size = np.broadcast_to(np.asarray(size, int), (grid.dim,))
    if np.any(size < 1) or np.any(size > grid.N):
        raise ValueError("box size must lie in [1, N]")
    axes = [(c + np.arange(s)) % grid.N for c, s in zip(corner, size)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.unique(np.ravel_multi_index(tuple(m.ravel() for m in mesh), grid.shape))


def set_distance(grid: Grid, E, F) -> float:
    """Smallest torus distance between cell centers of ``E`` and ``F``."""
    c = grid.centers()
    a, b = c[np.asarray(E)], c[np.asarray(F)]
    diff = np.abs(a[:, None, :] - b[None, :, :])
    diff = np.minimum(diff, grid.side_length - diff)
    return float(np.sqrt((diff**2).sum(axis=2)).min())


def _rows(op, family, F):
    F = np.asarray(F)
    if FamilyTag(family).vector:
        return np.concatenate([i * op.size + F for i in range(op.grid.dim)])
    return F


def localized_norm(op: EllipticOperator, family, z: complex, E, F, matrix=None) -> float:
    """``|chi_F T_z chi_E|_{2 -> 2}`` (both sides carry the weight ``h^dim``, which cancels)."""
    E, F = np.asarray(E), np.asarray(F)
    if E.size == 0 or F.size == 0:
        raise ValueError("E and F must be nonempty")
    T = family_matrix(op, family, z) if matrix is None else matrix
    block = T[np.ix_(_rows(op, family, F), E)]
    return float(np.linalg.norm(block, 2))


# ------------------------------------------------------------ off-diagonal


@dataclass
class OffDiagReport:
    """Samples of ``|chi_F T_z chi_E|`` and the fit ``C exp(-alpha d^2/|z|)``."""

    family: str
    angle: float
    theta0: float
    samples: list = field(default_factory=list)  # (|z|, d, norm)
    C: float = 0.0
    alpha: float = 0.0
    r_squared: float = 0.0
    sample_count: int = 0
    box_cells: int = 0
    caveat: str = CAVEAT

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def offdiag_fit(op: EllipticOperator, family, t_grid, separations, angle: float = 0.0,
                box_cells: int | None = None, floor: float = 1e-13) -> OffDiagReport:
    """Fit ``log |chi_F T_z chi_E| = log C - alpha d(E,F)^2/|z|``.

    ``E`` is the cube of ``box_cells`` cells per side at the origin and ``F``
    the same cube moved along the first axis so that ``separations`` (gaps in
    whole cells) set ``d(E, F)``; ``z = t e^{i angle}``.  Samples below
    ``floor`` (rounding noise) are dropped.
    """
    family = FamilyTag(family)
    g = op.grid
    b = max(1, g.N // 8) if box_cells is None else int(box_cells)
    E = box(g, 0, b)
    boxes = []
    for gap in separations:
        corner = [0] * g.dim
        corner[0] = b + int(gap)
        F = box(g, corner, b)
        if np.intersect1d(E, F).size:
            raise ValueError("separation too large: F wraps onto E")
        boxes.append((F, set_distance(g, E, F)))
    src = adjoint(op) if family.is_adjoint else op
    Md = src.dense()
    rep = OffDiagReport(family.value, float(angle), float(theta0(op)), box_cells=b)
    for t in t_grid:
        z = t * complex(math.cos(angle), math.sin(angle))
        T = family_matrix(op, family, z, _dense=Md)
        for F, d in boxes:
            rep.samples.append((float(t), d, localized_norm(op, family, z, E, F, matrix=T)))
    s = np.array(rep.samples)
    keep = s[:, 2] > floor
    x = s[keep, 1] ** 2 / s[keep, 0]
    fit = fit_decay(x, s[keep, 2])
    resid = np.log(s[keep, 2]) - (fit.log_amplitude - fit.rate * x)
    rep.alpha = fit.rate
    rep.r_squared = fit.r_squared
    rep.C = float(math.exp(fit.log_amplitude + resid.max()))
    rep.sample_count = fit.sample_count
    return rep


# -------------------------------------------------------------- p -> q norms


@dataclass
class PQNorm:
    value: float
    exact: bool
    method: str
    trace: list = field(default_factory=list)


def _conj_exp(p: float) -> float:
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1)


def _mixed_abs(y: np.ndarray, groups: int) -> np.ndarray:
    """Pointwise Euclidean size of a stacked vector field (``groups`` components)."""
    if groups == 1:
        return np.abs(y)
    return np.sqrt((np.abs(y.reshape(groups, -1)) ** 2).sum(axis=0))


def _vec_norm(y: np.ndarray, q: float, groups: int) -> float:
    a = _mixed_abs(y, groups)
    if math.isinf(q):
        return float(a.max())
    m = a.max()
    if m == 0:
        return 0.0
    return float(m * np.sum((a / m) ** q) ** (1 / q))


def _dual(y: np.ndarray, q: float, groups: int) -> np.ndarray:
    """Unit ``l^{q'}`` vector ``z`` with ``Re <y, z> = |y|_q`` (mixed ``l^q(l^2)`` for ``groups > 1``)."""
    a = _mixed_abs(y, groups)
    rep = np.tile(a, groups) if groups > 1 else a
    with np.errstate(invalid="ignore", divide="ignore"):
        phase = np.where(rep > 0, y / np.where(rep > 0, rep, 1), 0)
    if math.isinf(q):
        w = np.zeros_like(a)
        w[int(np.argmax(a))] = 1.0
    elif q == 1:
        w = np.ones_like(a)
    else:
        m = a.max()
        w = (a / m) ** (q - 1)
        w /= np.sum((a / m) ** q) ** ((q - 1) / q)
    wr = np.tile(w, groups) if groups > 1 else w
    return phase * wr


def pq_norm_details(T, p: float, q: float, weight: float = 1.0, out_groups: int = 1, restarts: int = 4,
                    iters: int = 60, seed: int = 0) -> PQNorm:
    """``|T|_{p -> q}`` for ``|f|_p = (w sum |f|^p)^{1/p}`` on both sides.

    ``out_groups > 1`` means the output stacks that many components (rows
    component-major) measured pointwise in the Euclidean norm.  Exact for
    ``p = 1``, for ``p = q = 2`` and for ``q = inf`` with scalar output or
    ``p = 2``; otherwise a Boyd-type power iteration whose value is attained by
    an explicit vector (a certified lower bound).
    """
    T = np.asarray(T)
    if not (1 <= p <= q <= math.inf):
        raise ValueError("need 1 <= p <= q <= inf")
    if T.shape[0] % out_groups:
        raise ValueError("row count not divisible by out_groups")
    scale = weight ** ((0 if math.isinf(q) else 1 / q) - 1 / p)
    n_out = T.shape[0] // out_groups
    pc = _conj_exp(p)
    if p == 1:
        cols = [_vec_norm(T[:, j], q, out_groups) for j in range(T.shape[1])]
        return PQNorm(scale * max(cols), True, "max column q-norm")
    if p == 2 and q == 2:
        return PQNorm(scale * float(np.linalg.norm(T, 2)), True, "svd")
    if math.isinf(q):
        if out_groups == 1:
            r = max(_vec_norm(T[i], pc, 1) for i in range(T.shape[0]))
            return PQNorm(scale * r, True, "max row p'-norm")
        if p == 2:
            r = max(float(np.linalg.norm(T[i::n_out], 2)) for i in range(n_out))
            return PQNorm(scale * r, True, "max pointwise block svd")
    rng = np.random.default_rng(seed)
    best, trace = 0.0, []
    starts = [np.ones(T.shape[1])]
    # exact-corner maximizer: the column with the largest q-norm
    cols = [_vec_norm(T[:, j], q, out_groups) for j in range(T.shape[1])]
    e = np.zeros(T.shape[1])
    e[int(np.argmax(cols))] = 1.0
    starts.append(e)
    starts += [rng.standard_normal(T.shape[1]) for _ in range(restarts)]
    for x in starts:
        x = x.astype(T.dtype if np.iscomplexobj(T) else float)
        x = x / _vec_norm(x, p, 1)
        val = 0.0
        for _ in range(iters):
            y = T @ x
            val_new = _vec_norm(y, q, out_groups)
            if val_new == 0:
                break
            z = T.conj().T @ _dual(y, q, out_groups)
            x_new = _dual(z, pc, 1)
            x_new = x_new / _vec_norm(x_new, p, 1)
            if val_new <= val * (1 + 1e-13):
                val = max(val, val_new)
                break
            val, x = val_new, x_new
        val = max(val, _vec_norm(T @ x, q, out_groups) / _vec_norm(x, p, 1))
        trace.append(val)
        best = max(best, val)
    return PQNorm(scale * best, False, "boyd power iteration (lower bound)", [scale * v for v in trace])


def pq_norm(T, p: float, q: float, weight: float = 1.0, out_groups: int = 1, **kw) -> float:
    return pq_norm_details(T, p, q, weight, out_groups, **kw).value


def gamma_pq(dim: int, p: float, q: float) -> float:
    iq = 0.0 if math.isinf(q) else 1 / q
    ip = 0.0 if math.isinf(p) else 1 / p
    return abs(dim * iq - dim * ip)


@dataclass
class PQSweepReport:
    family: str
    p: float
    q: float
    gamma: float
    table: list = field(default_factory=list)  # (t, norm, t^{gamma/2} norm, exact)
    sup_normalized: float = 0.0
    slope: float | None = None
    slope_window: tuple | None = None
    N: int = 0
    dim: int = 0
    caveat: str = CAVEAT

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def pq_bound_sweep(op: EllipticOperator, family, p: float, q: float, t_grid, window=None,
                   seed: int = 0) -> PQSweepReport:
    """Per-``t`` table of ``t^{gamma/2} |T_t|_{p -> q}``, its sup, and the log-log slope of ``|T_t|``.

    The slope is fitted over ``window = (t_lo, t_hi)`` (default: the middle
    decade of ``t_grid`` on a log scale).
    """
    family = FamilyTag(family)
    g = op.grid
    gam = gamma_pq(g.dim, p, q)
    rep = PQSweepReport(family.value, float(p), float(q), gam, N=g.N, dim=g.dim)
    src = adjoint(op) if family.is_adjoint else op
    Md = src.dense()
    groups = g.dim if family.vector else 1
    ts = sorted(float(t) for t in t_grid)
    for t in ts:
        T = family_matrix(op, family, t, _dense=Md)
        det = pq_norm_details(T, p, q, g.cell_volume, groups, seed=seed)
        rep.table.append((t, det.value, t ** (gam / 2) * det.value, det.exact))
    rep.sup_normalized = float(max(r[2] for r in rep.table))
    if window is None and len(ts) >= 3:
        mid = math.sqrt(ts[0] * ts[-1])
        window = (mid / math.sqrt(10), mid * math.sqrt(10))
    if window is not None:
        sel = [(math.log(r[0]), math.log(r[1])) for r in rep.table if window[0] <= r[0] <= window[1] * (1 + 1e-12)]
        if len(sel) >= 2:
            x, y = np.array(sel).T
            rep.slope = float(np.polyfit(x, y, 1)[0])
            rep.slope_window = (float(window[0]), float(window[1]))
    return rep


@dataclass
class Epsilon1Report:
    value: float
    threshold: float
    curve: dict = field(default_factory=dict)  # p -> sup_t t^{gamma/2} |sqrt(t) grad e^{-tL}|_{2->p}
    sensitivity: dict = field(default_factory=dict)  # threshold -> estimate
    caveat: str = CAVEAT

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _eps_from_curve(curve: dict, threshold: float) -> float:
    ps = sorted(curve)
    base = curve[2.0]
    best = 0.0
    for p in ps:
        if p <= 2:
            continue
        if curve[p] <= threshold * base:
            best = p - 2
        else:
            break  # contiguous from p = 2 upward
    return best


def epsilon1_estimate(op: EllipticOperator, p_grid, t_grid, threshold: float = 10.0, seed: int = 0) -> Epsilon1Report:
    """Largest ``p - 2`` on ``p_grid`` (contiguous from 2) with the gradient-family curve below ``threshold`` x its ``p = 2`` value.

    Sensitivity at thresholds 3 and 30 is always included.
    """
    ps = sorted({2.0, *[float(p) for p in p_grid]})
    curve = {}
    for p in ps:
        if p < 2:
            raise ValueError("p_grid entries must be >= 2")
        curve[p] = pq_bound_sweep(op, FamilyTag.SQRT_T_GRAD, 2.0, p, t_grid, seed=seed).sup_normalized
    rep = Epsilon1Report(_eps_from_curve(curve, threshold), float(threshold), {str(k): v for k, v in curve.items()})
    for th in sorted({3.0, 30.0, float(threshold)}):
        rep.sensitivity[str(th)] = _eps_from_curve(curve, th)
    return rep
