"""Square root, inverse square root and Riesz transform of the lattice operator.

All three are time integrals of the semigroup,

    L^{1/2} f      = pi^{-1/2} int_0^inf e^{-tL} (L f) dt / sqrt(t)
    L^{-1/2} g     = pi^{-1/2} int_0^inf e^{-tL} g     dt / sqrt(t)
    grad L^{-1/2} g = pi^{-1/2} int_0^inf grad e^{-tL} g dt / sqrt(t)

discretized once by :class:`QuadratureSpec` and evaluated with a single shared
contour (every ``t`` node reuses the same resolvent factorizations).

Constants span the kernel of ``M``; ``L^{-1/2}`` and the Riesz transform act on
the mean-zero subspace and vanish on constants.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from ._kernels import sqrt_upper
from .contour import QuadratureError
from .lattice import Field, GridError, difference_matrix, lp_norm, test_family
from .operator import EllipticOperator
from .semigroup import DENSE_LIMIT, SemigroupQuadrature

__all__ = [
    "QuadratureSpec",
    "KatoReport",
    "default_quadrature",
    "poincare_rate",
    "sqrtm_oracle",
    "sqrt_apply",
    "inv_sqrt_apply",
    "riesz_apply",
    "kato_ratio_sweep",
    "MeanError",
]

ORACLE_LIMIT = 1024  # default cap for the dense Schur path inside sweeps


class MeanError(ValueError):
    """Input required to be mean-zero is not."""


# ------------------------------------------------------------------ oracle


def _householder_complement(n: int) -> np.ndarray:
    """Orthonormal basis (n, n-1) of the mean-zero subspace."""
    v = np.full(n, 1.0 / math.sqrt(n))
    v[0] -= 1.0
    H = np.eye(n) - 2.0 * np.outer(v, v) / (v @ v)
    return H[:, 1:]


def sqrtm_oracle(op: EllipticOperator, inverse: bool = False) -> np.ndarray:
    """Dense principal square root of ``M`` on the mean-zero subspace, zero on constants.

    ``M`` preserves the mean-zero subspace, so with an orthonormal basis ``Q``
    of it the restriction ``B = Q^T M Q`` is nonsingular.  ``B = Z T Z^H``
    (complex Schur), ``sqrt(T)`` by the upper triangular recurrence, and the
    result is ``Q Z sqrt(T) Z^H Q^T``.  ``inverse=True`` returns the
    pseudo-inverse square root instead.
    """
    n = op.size
    if n > DENSE_LIMIT:
        raise ValueError(f"dense square root limited to {DENSE_LIMIT} cells")
    Q = _householder_complement(n)
    B = Q.T @ (op.matrix @ Q)
    T, Z = sla.schur(B, output="complex")
    ev = np.diag(T)
    if np.any(ev.real <= 0):
        raise np.linalg.LinAlgError("eigenvalue with non-positive real part off the constants")
    R = sqrt_upper(T)
    if inverse:
        R = sla.solve_triangular(R, np.eye(n - 1), lower=False)
    S = Z @ R @ Z.conj().T
    out = Q @ S @ Q.T
    # M is real, so its principal root is real
    return np.ascontiguousarray(out.real)


# -------------------------------------------------------------- quadrature


def poincare_rate(op: EllipticOperator) -> float:
    """``lambda0 * mu1``: a lower bound on ``Re <Mu,u>/|u|^2`` over mean-zero ``u``.

    ``mu1 = (2/h)^2 sin^2(pi/N)`` is the smallest nonzero eigenvalue of
    ``D^T D``; hence ``|e^{-tL}u| <= exp(-lambda0 mu1 t)|u|`` on mean-zero data.
    """
    g = op.grid
    mu1 = (2.0 / g.h) ** 2 * math.sin(math.pi / g.N) ** 2
    return op.lambda0 * mu1


@dataclass(frozen=True)
class QuadratureSpec:
    """Nodes for ``int_0^T_max g(t) dt / sqrt(t)``.

    Near field ``(0, t0]``: ``t = t0 s^2`` turns the weight into ``2 sqrt(t0) ds``
    and ``near_nodes`` Gauss-Legendre points on ``s in (0, 1)`` follow.  Far
    field ``[t0, T_max]``: panels with geometric edges (ratio ``ratio``) and
    ``panel_nodes`` Gauss-Legendre points each.  All weights are positive.
    """

    t0: float
    T_max: float
    decay_rate: float
    near_nodes: int = 24
    ratio: float = 1.25
    panel_nodes: int = 6
    tail_tol: float = 1e-12

    def __post_init__(self):
        if not 0 < self.t0 < self.T_max:
            raise ValueError("need 0 < t0 < T_max")
        if not self.ratio > 1:
            raise ValueError("ratio must exceed 1")
        if self.near_nodes < 2 or self.panel_nodes < 2:
            raise ValueError("node counts must be >= 2")

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        x, w = np.polynomial.legendre.leggauss(self.near_nodes)
        s = 0.5 * (x + 1)
        t_near = self.t0 * s**2
        w_near = math.sqrt(self.t0) * w  # 2 sqrt(t0) * (1/2) w
        count = max(1, math.ceil(math.log(self.T_max / self.t0) / math.log(self.ratio)))
        edges = self.t0 * (self.T_max / self.t0) ** (np.arange(count + 1) / count)
        xg, wg = np.polynomial.legendre.leggauss(self.panel_nodes)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        t_far = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
        w_far = (half[:, None] * wg[None, :]).ravel() / np.sqrt(t_far)
        return np.concatenate([t_near, t_far]), np.concatenate([w_near, w_far])

    @property
    def tail_bound(self) -> float:
        """``int_T^inf e^{-ct} dt/sqrt(t)`` relative to ``int_0^inf = sqrt(pi/c)``."""
        c, T = self.decay_rate, self.T_max
        return math.exp(-c * T) / math.sqrt(math.pi * c * T)

    def refined(self) -> "QuadratureSpec":
        """Halved node spacing in both fields."""
        return replace(self, near_nodes=2 * self.near_nodes, ratio=math.sqrt(self.ratio))

    @property
    def node_count(self) -> int:
        return self.nodes()[0].size


def default_quadrature(op: EllipticOperator, tail_tol: float = 1e-12) -> QuadratureSpec:
    """``t0 = h^2``; ``T_max`` from the mean-zero decay rate so the tail is below ``tail_tol``."""
    c = poincare_rate(op)
    t0 = op.grid.h**2
    # solve exp(-x)/sqrt(pi x) = tail_tol for x = c T
    x = -math.log(tail_tol)
    for _ in range(20):
        x = -math.log(tail_tol) - 0.5 * math.log(math.pi * x)
    T = max(1.01 * x / c, 4 * t0)
    return QuadratureSpec(t0=t0, T_max=T, decay_rate=c, tail_tol=tail_tol)


def _columns(op: EllipticOperator, f) -> tuple[np.ndarray, bool]:
    if isinstance(f, Field):
        if f.grid != op.grid:
            raise GridError("field and operator live on different grids")
        if f.is_vector:
            raise ValueError("scalar field expected")
        return np.asarray(f.values)[:, None], True
    a = np.asarray(f)
    if a.shape[0] != op.size:
        raise GridError("array rows do not match the grid")
    return (a[:, None], True) if a.ndim == 1 else (a, False)


def _require_mean_zero(g: np.ndarray, tol: float) -> None:
    mean = np.abs(g.mean(axis=0))
    scale = np.maximum(np.sqrt(np.mean(np.abs(g) ** 2, axis=0)), np.finfo(float).tiny)
    if np.any(mean > tol * scale):
        raise MeanError(f"input has relative mean {float((mean / scale).max()):.3e} > {tol:.1e}")


def _integrate(op, rhs, spec: QuadratureSpec, post=None) -> np.ndarray:
    if spec.tail_bound > spec.tail_tol:
        raise QuadratureError(f"tail bound {spec.tail_bound:.2e} exceeds tail_tol {spec.tail_tol:.1e}")
    t, w = spec.nodes()
    bank = SemigroupQuadrature(op, float(t.min()), float(t.max()))
    return bank.weighted(rhs, t, w / math.sqrt(math.pi), post=post)


def _wrap(op, out, single):
    return Field(op.grid, out[:, 0]) if single else out


def sqrt_apply(op: EllipticOperator, f, spec: QuadratureSpec | None = None):
    """``L^{1/2} f`` by quadrature; accepts a Field or an ``(n,)``/``(n, k)`` array."""
    spec = spec or default_quadrature(op)
    X, single = _columns(op, f)
    Mf = op.matrix @ X
    Mf = Mf - Mf.mean(axis=0, keepdims=True)  # exact in exact arithmetic
    return _wrap(op, _integrate(op, Mf, spec), single)


def inv_sqrt_apply(op: EllipticOperator, g, spec: QuadratureSpec | None = None, mean_tol: float = 1e-10):
    """``L^{-1/2} g`` for mean-zero ``g`` (raises :class:`MeanError` otherwise)."""
    spec = spec or default_quadrature(op)
    X, single = _columns(op, g)
    _require_mean_zero(X, mean_tol)
    X = X - X.mean(axis=0, keepdims=True)
    return _wrap(op, _integrate(op, X, spec), single)


def riesz_apply(op: EllipticOperator, g, spec: QuadratureSpec | None = None, mean_tol: float = 1e-10):
    """``grad L^{-1/2} g`` with the gradient applied inside the time integral.

    Returns a vector Field (or an array of shape ``(dim, n, k)`` for array input).
    """
    spec = spec or default_quadrature(op)
    X, single = _columns(op, g)
    _require_mean_zero(X, mean_tol)
    X = X - X.mean(axis=0, keepdims=True)
    D = difference_matrix(op.grid)
    out = _integrate(op, X, spec, post=D)
    out = out.reshape(op.grid.dim, op.size, -1)
    if single:
        return Field(op.grid, out[:, :, 0])
    return out


# -------------------------------------------------------------------- Kato


@dataclass
class KatoReport:
    """Ratios ``|L^{1/2} f|_p / |grad f|_p`` over a test family."""

    p: float
    family: str
    count: int
    seed: int
    path: str
    ratios: list[float] = field(default_factory=list)
    min: float = 0.0
    max: float = 0.0
    median: float = 0.0
    inverse_min: float = 0.0
    inverse_max: float = 0.0
    N: int = 0
    dim: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def kato_ratio_sweep(op: EllipticOperator, p: float, family: str = "mixed", count: int = 8, seed: int = 0,
                     method: str = "auto", spec: QuadratureSpec | None = None) -> KatoReport:
    """Two-sided Kato ratios on deterministic mean-zero test fields.

    ``method`` picks the square root: ``"oracle"`` (dense Schur), ``"quadrature"``
    or ``"auto"`` (oracle up to 1024 cells).  The lower ratios
    ``|grad f|_p / |L^{1/2} f|_p`` are the reciprocals; their extremes are
    ``inverse_min``/``inverse_max``.
    """
    if not 1 < p < math.inf:
        raise ValueError("p must lie in (1, inf)")
    fields = test_family(op.grid, family, count, seed)
    X = np.stack([f.values for f in fields], axis=1)
    if method == "auto":
        method = "oracle" if op.size <= ORACLE_LIMIT else "quadrature"
    if method == "oracle":
        Y = sqrtm_oracle(op) @ X
    elif method == "quadrature":
        Y = sqrt_apply(op, X, spec)
    else:
        raise ValueError(f"unknown method {method!r}")
    D = difference_matrix(op.grid)
    G = (D @ X).reshape(op.grid.dim, op.size, -1)
    ratios = []
    for j in range(X.shape[1]):
        num = lp_norm(Field(op.grid, Y[:, j]), p)
        den = lp_norm(Field(op.grid, G[:, :, j]), p)
        ratios.append(num / den)
    r = np.array(ratios)
    if not np.all(np.isfinite(r)) or np.any(r <= 0):
        raise ArithmeticError("non-positive or non-finite Kato ratio")
    return KatoReport(
        p=float(p), family=family, count=count, seed=seed, path=method, ratios=r.tolist(),
        min=float(r.min()), max=float(r.max()), median=float(np.median(r)),
        inverse_min=float(1 / r.max()), inverse_max=float(1 / r.min()),
        N=op.grid.N, dim=op.grid.dim,
    )
