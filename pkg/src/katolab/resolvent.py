"""Shifted solves ``(lambda + L)^{-1}``, sector sweeps and resolvent-power kernels."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import Field, GridError, difference_matrix
from .operator import ConjugationWeight, EllipticOperator, conjugate, sector_angle

__all__ = [
    "ResolventError",
    "SectorError",
    "DecayFit",
    "SectorSweepReport",
    "shifted_lu",
    "resolve",
    "sector_sweep",
    "fit_decay",
    "resolvent_power_kernel",
    "default_power",
    "DENSE_LIMIT",
    "resolvent_identity_residual",
    "conjugation_residual",
]

DENSE_LIMIT = 4096


class ResolventError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SectorError(ValueError):
    """Shift or contour angle incompatible with the numerical range."""


def theta0(op: EllipticOperator) -> float:
    if op.theta0_estimate is None:
        sector_angle(op)
    return op.theta0_estimate


def _check_shift(op: EllipticOperator, lam: complex) -> None:
    lam = complex(lam)
    if lam == 0:
        raise SectorError("lambda = 0 lies in the spectrum (constants are in the kernel)")
    if lam.real > 0:
        return
    if abs(np.angle(lam)) > np.pi - theta0(op) - 1e-12:
        raise SectorError(f"lambda = {lam} lies in the closed sector containing -Theta(L)")


def shifted_lu(op: EllipticOperator, lam: complex):
    """Sparse LU of ``lambda I + M`` (complex)."""
    A = (op.matrix + complex(lam) * sp.identity(op.size, format="csr")).astype(complex).tocsc()
    return spla.splu(A, permc_spec="MMD_AT_PLUS_A")


def resolve(op: EllipticOperator, lam: complex, rhs: Field, tol: float = 1e-10) -> Field:
    """``u = (lambda I + M)^{-1} rhs`` with ``||(lambda + M)u - rhs|| <= tol ||rhs||``."""
    if rhs.grid != op.grid:
        raise GridError("right-hand side and operator live on different grids")
    _check_shift(op, lam)
    b = np.asarray(rhs.values, dtype=complex)
    try:
        u = shifted_lu(op, lam).solve(b)
    except RuntimeError as exc:  # singular factor
        raise ResolventError(f"factorization failed at lambda = {lam}: {exc}") from exc
    res = np.linalg.norm(op.matrix @ u + lam * u - b)
    nb = np.linalg.norm(b)
    if not np.isfinite(res) or res > tol * max(nb, np.finfo(float).tiny):
        raise ResolventError(f"residual {res / max(nb, 1e-300):.3e} above tol {tol:.1e}", res)
    if not np.iscomplexobj(rhs.values) and complex(lam).imag == 0:
        u = u.real
    return Field(op.grid, u)


# ------------------------------------------------------------------ sweeps


@dataclass
class SectorSweepReport:
    theta1: float
    samples: list[dict] = field(default_factory=list)
    sup_resolvent: float = 0.0
    sup_gradient: float = 0.0
    exact: bool = True

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _op_norm(apply, apply_h, n, rng, steps=50, restarts=3) -> float:
    best = 0.0
    for _ in range(restarts):
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        x /= np.linalg.norm(x)
        for _ in range(steps):
            y = apply(x)
            z = apply_h(y)
            nz = np.linalg.norm(z)
            if nz == 0:
                break
            x = z / nz
        best = max(best, float(np.linalg.norm(apply(x))))
    return best


def sector_sweep(op: EllipticOperator, theta1: float, radii, angles, seed: int = 0) -> SectorSweepReport:
    """Sample ``|lambda| ||(lambda+L)^{-1}||`` and ``|lambda|^{1/2} ||grad (lambda+L)^{-1}||``.

    ``angles`` are arguments of ``lambda`` and must satisfy ``|arg| <= pi - theta1``.
    Norms are exact (dense SVD) up to ``DENSE_LIMIT`` cells, otherwise
    power-iteration lower bounds.
    """
    th0 = theta0(op)
    if not theta1 > th0:
        raise SectorError(f"theta1 = {theta1} must exceed the sector angle estimate {th0}")
    D = difference_matrix(op.grid)
    n = op.size
    dense = n <= DENSE_LIMIT
    Md = op.dense() if dense else None
    rng = np.random.default_rng(seed)
    rep = SectorSweepReport(float(theta1), exact=dense)
    for r in radii:
        for phi in angles:
            if abs(phi) > np.pi - theta1 + 1e-12:
                raise SectorError(f"angle {phi} outside Gamma_(pi - theta1)")
            lam = r * np.exp(1j * phi)
            if dense:
                R = sla.inv(Md + lam * np.eye(n))
                nr = float(sla.svdvals(R)[0])
                ng = float(sla.svdvals((D @ R))[0])
            else:
                lu = shifted_lu(op, lam)
                lu_h = spla.splu((op.matrix.T + np.conj(lam) * sp.identity(n)).astype(complex).tocsc())
                nr = _op_norm(lu.solve, lu_h.solve, n, rng)
                ng = _op_norm(lambda x: D @ lu.solve(x), lambda y: lu_h.solve(D.T @ y), n, rng)
            rep.samples.append({"lambda_re": lam.real, "lambda_im": lam.imag,
                                "resolvent_norm": nr, "grad_resolvent_norm": ng})
            rep.sup_resolvent = max(rep.sup_resolvent, abs(lam) * nr)
            rep.sup_gradient = max(rep.sup_gradient, math.sqrt(abs(lam)) * ng)
    return rep


# ---------------------------------------------------------------- kernels


@dataclass
class DecayFit:
    """Least-squares line ``log|value| ~ log_amplitude - rate * x``."""

    log_amplitude: float
    rate: float
    r_squared: float
    sample_count: int

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def fit_decay(x, values, floor: float = 0.0) -> DecayFit:
    x = np.asarray(x, float).ravel()
    v = np.abs(np.asarray(values)).ravel()
    keep = v > floor
    x, y = x[keep], np.log(v[keep])
    if x.size < 3 or np.ptp(x) == 0:
        raise ValueError("not enough distinct samples for a decay fit")
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (icpt + slope * x)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return DecayFit(float(icpt), float(-slope), float(min(max(r2, 0.0), 1.0)), int(x.size))


def default_power(dim: int) -> int:
    """Smallest ``m`` with ``4m >= dim + 2``."""
    return max(1, math.ceil((dim + 2) / 4))


def resolvent_power_kernel(op: EllipticOperator, lam: complex, m: int | None = None,
                           near: float | None = None, far: float | None = None):
    """Kernel of ``(L + lambda)^{-2m}`` and an exponential fit of its far field.

    Returns ``(G, fit)`` with ``G[x, y]`` the response at ``x`` to a unit mass
    at ``y``.  The fit regresses ``log|G|`` on ``|lambda|^{1/2} d_T(x, y)`` over
    pairs with ``near <= d_T <= far`` (defaults ``max(3h, 0.1 L)`` and ``0.4 L``).
    """
    n = op.size
    if n > DENSE_LIMIT:
        raise ValueError(f"dense kernels limited to {DENSE_LIMIT} cells")
    m = default_power(op.grid.dim) if m is None else int(m)
    if m < 1:
        raise ValueError("m must be >= 1")
    _check_shift(op, lam)
    lu = shifted_lu(op, lam)
    G = np.eye(n, dtype=complex) / op.grid.cell_volume
    for _ in range(2 * m):
        G = lu.solve(G)
    if complex(lam).imag == 0:
        G = G.real
    g = op.grid
    near = max(3 * g.h, 0.1 * g.side_length) if near is None else near
    far = 0.4 * g.side_length if far is None else far
    dist = g.distance_matrix()
    mask = (dist >= near - 1e-12) & (dist <= far + 1e-12)
    vals = np.abs(G[mask])
    fit = fit_decay(math.sqrt(abs(lam)) * dist[mask], vals, floor=1e-14 * np.abs(G).max())
    return G, fit


def resolvent_identity_residual(op: EllipticOperator, lam: complex, mu: complex, f: Field) -> float:
    """``|R(l) f - R(m) f - (m - l) R(l) R(m) f| / |R(l) f|`` with ``R(l) = (l + L)^{-1}``."""
    Rl = shifted_lu(op, lam)
    Rm = shifted_lu(op, mu)
    b = np.asarray(f.values, dtype=complex)
    a = Rl.solve(b)
    c = Rm.solve(b)
    d = Rl.solve(c)
    return float(np.linalg.norm(a - c - (mu - lam) * d) / np.linalg.norm(a))


def conjugation_residual(op: EllipticOperator, w: ConjugationWeight, lam: complex) -> float:
    """Kernel identity ``G_Psi(x, y) = e^{-Psi(x)} G(x, y) e^{Psi(y)}`` for the resolvent at ``lam``.

    ``G`` is the dense resolvent of ``op``, ``G_Psi`` that of the conjugated
    operator; the value is the largest entrywise gap relative to ``max |G_Psi|``.
    """
    if op.size > DENSE_LIMIT:
        raise ValueError(f"dense kernels limited to {DENSE_LIMIT} cells")
    n = op.size
    opw = conjugate(op, w)
    G = sla.inv(op.dense() + lam * np.eye(n))
    Gw = sla.inv(opw.dense() + lam * np.eye(n))
    psi = opw.weight.psi
    pred = np.exp(-psi)[:, None] * G * np.exp(psi)[None, :]
    return float(np.abs(Gw - pred).max() / np.abs(Gw).max())
