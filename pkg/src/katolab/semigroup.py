"""The semigroup ``e^{-tL}``: contour quadrature, dense oracle, heat kernels and fits."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla

from .contour import ContourIntegrator, ContourSpec, QuadratureError, default_contour
from .lattice import Field, GridError, constant
from .operator import EllipticOperator

__all__ = [
    "DENSE_LIMIT",
    "expm_oracle",
    "expm_dense",
    "semigroup_apply",
    "time_derivative",
    "SemigroupQuadrature",
    "heat_kernel",
    "heat_kernels",
    "GaussianFitReport",
    "gaussian_fit",
    "HolderReport",
    "holder_statistic",
    "conservation_check",
    "save_kernel_csv",
]

DENSE_LIMIT = 4096


_FLOOR = 1e-12


def _check_dense(op: EllipticOperator) -> None:
    if op.size > DENSE_LIMIT:
        raise ValueError(f"dense evaluation limited to {DENSE_LIMIT} cells, got {op.size}")


def expm_dense(op: EllipticOperator, t: complex) -> np.ndarray:
    """Dense ``exp(-t M)`` by scaling and squaring with a Pade approximant."""
    _check_dense(op)
    t = complex(t)
    A = op.dense()
    return sla.expm(-t * A) if t.imag else sla.expm(-t.real * A)


def expm_oracle(op: EllipticOperator, t: complex, f: Field) -> Field:
    """Reference ``exp(-t M) f`` computed densely."""
    if f.grid != op.grid:
        raise GridError("field and operator live on different grids")
    if t == 0:
        return Field(f.grid, np.array(f.values, copy=True))
    return Field(op.grid, expm_dense(op, t) @ f.values)


def _contour_apply(op, z, f_vals, order, contour, tol, max_doublings, m=0):
    z = complex(z)
    if abs(z) == 0:
        raise ValueError("time must be non-zero")
    angle = math.atan2(z.imag, z.real)
    if contour is None:
        contour = default_contour(op, abs(z), angle=angle, order=order)
    contour.validate_for(op, angle)
    real = z.imag == 0 and not np.iscomplexobj(f_vals)

    # m > 0: integrate by parts 2m - 1 times, (2m-1)!/t^{2m-1} int e^{t lam} (lam + L)^{-2m}
    power = 2 * m if m else 1
    scale = math.factorial(power - 1) / z ** (power - 1)

    def phi(lam):
        return (scale * lam**order * np.exp(z * lam))[None, :]

    fnorm = float(np.linalg.norm(f_vals))
    prev = None
    spec = contour
    for _ in range(max_doublings + 1):
        out = ContourIntegrator(op, spec).integrate(f_vals, phi, real=real, power=power)[0]
        if prev is not None:
            err = np.linalg.norm(out - prev)
            # results far below |f| t^{-l} are resolved only down to a rounding floor
            if err <= max(tol * np.linalg.norm(out), _FLOOR * fnorm / abs(z) ** order):
                return out
        prev = out
        spec = spec.refined()
    raise QuadratureError(f"contour quadrature did not converge to {tol:.1e} after node doubling")


def semigroup_apply(op: EllipticOperator, t: complex, f: Field, contour: ContourSpec | None = None,
                    tol: float = 1e-8, max_doublings: int = 3, m: int = 0) -> Field:
    """``e^{-tL} f`` by contour quadrature of the resolvent.

    The default contour uses arc radius ``R = 1/|t|``.  Node counts are doubled
    until two successive results agree to ``tol`` (relative), or to an absolute
    rounding floor ``1e-12 |f| |t|^{-l}`` for nearly vanishing results.  Complex ``t``
    with ``|arg t| < pi/2 - theta0`` is accepted.  ``m >= 1`` selects the
    integrated-by-parts form with the resolvent power ``(lambda + L)^{-2m}``.
    """
    if f.grid != op.grid:
        raise GridError("field and operator live on different grids")
    if m < 0:
        raise ValueError("m must be >= 0")
    return Field(op.grid, _contour_apply(op, t, f.values, 0, contour, tol, max_doublings, int(m)))


def time_derivative(op: EllipticOperator, t: complex, l: int, f: Field, contour: ContourSpec | None = None,
                    tol: float = 1e-8, max_doublings: int = 3) -> Field:
    """``d^l/dt^l e^{-tL} f`` via the ``lambda^l``-weighted contour integral."""
    if l < 0:
        raise ValueError("derivative order must be >= 0")
    if f.grid != op.grid:
        raise GridError("field and operator live on different grids")
    return Field(op.grid, _contour_apply(op, t, f.values, int(l), contour, tol, max_doublings))


class SemigroupQuadrature:
    """Shared contour for many times ``t_min <= t <= t_max``.

    The arc radius is ``1/t_max`` and the rays reach far enough for ``t_min``,
    so one set of factorizations serves every time, derivative order and
    right-hand side passed to :meth:`slices` or :meth:`weighted`.
    """

    def __init__(self, op: EllipticOperator, t_min: float, t_max: float, max_order: int = 0,
                 spec: ContourSpec | None = None):
        self.op = op
        self.t_min, self.t_max = float(t_min), float(t_max)
        self.spec = spec or default_contour(op, self.t_min, self.t_max, order=max_order)
        self.spec.validate_for(op)
        self.integrator = ContourIntegrator(op, self.spec)

    def _times(self, times):
        t = np.asarray(times, float).ravel()
        if t.min() < self.t_min * (1 - 1e-12) or t.max() > self.t_max * (1 + 1e-12):
            raise ValueError("requested times outside the contour's design range")
        return t

    def slices(self, rhs, times, orders=(0,), post=None) -> np.ndarray:
        """``d^l/dt^l e^{-tL} rhs`` for every ``l`` in ``orders`` and ``t`` in ``times``.

        Returns an array of shape ``(len(orders), len(times)) + post(rhs).shape``.
        """
        return self.slices_many(times, [(rhs, orders, post)])[0]

    def slices_many(self, times, requests) -> list[np.ndarray]:
        """Like :meth:`slices` for several ``(rhs, orders, post)`` at once (one factorization per node)."""
        t = self._times(times)
        jobs, shapes = [], []
        for rhs, orders, post in requests:
            orders = tuple(int(o) for o in orders)

            def phi(lam, orders=orders):
                e = np.exp(np.multiply.outer(t, lam))
                return np.concatenate([e * lam[None, :] ** o for o in orders])

            jobs.append((rhs, phi, post, not np.iscomplexobj(rhs)))
            shapes.append(len(orders))
        outs = self.integrator.integrate_many(jobs)
        return [o.reshape((k, len(t)) + o.shape[1:]) for o, k in zip(outs, shapes)]

    def weighted(self, rhs, times, weights, post=None) -> np.ndarray:
        """``sum_k weights[k] e^{-t_k L} rhs`` in a single pass."""
        t = self._times(times)
        wts = np.asarray(weights, float).ravel()

        def phi(lam):
            return (wts @ np.exp(np.multiply.outer(t, lam)))[None, :]

        real = not np.iscomplexobj(rhs)
        return self.integrator.integrate(rhs, phi, post=post, real=real)[0]


# ------------------------------------------------------------ heat kernels


def heat_kernel(op: EllipticOperator, t: float, method: str = "expm", l: int = 0) -> np.ndarray:
    """``K[x, y] = (d/dt)^l [e^{-tL} (delta_y / h^dim)](x)`` as a dense matrix."""
    return heat_kernels(op, [t], method=method, l=l)[float(t)]


def heat_kernels(op: EllipticOperator, times, method: str = "expm", l: int = 0) -> dict[float, np.ndarray]:
    """Dense heat kernels (or their ``l``-th time derivatives) for several times.

    ``method="expm"`` uses the dense exponential; ``"contour"`` a shared
    contour with the identity as right-hand side.
    """
    _check_dense(op)
    vol = op.grid.cell_volume
    times = [float(t) for t in times]
    out = {}
    if method == "expm":
        Md = op.dense()
        for t in times:
            E = sla.expm(-t * Md)
            if l:
                E = np.linalg.matrix_power(-Md, l) @ E
            out[t] = E / vol
    elif method == "contour":
        bank = SemigroupQuadrature(op, min(times), max(times), max_order=l)
        res = bank.slices(np.eye(op.size), times, orders=(l,))[0]
        for t, E in zip(times, res):
            out[t] = E / vol
    else:
        raise ValueError(f"unknown method {method!r}")
    return out


@dataclass
class GaussianFitReport:
    """Fit of ``|d_t^l K_t(x,y)| <= C t^{-dim/2 - l} exp(-beta d^2 / t)``."""

    C: float
    beta: float
    r_squared: float
    t_values: list[float]
    l: int = 0
    l_offset: float | None = None
    sample_count: int = 0
    holder: dict | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _pair_mask(grid, dist, t, near, far):
    return (dist <= far + 1e-12) & (dist >= near - 1e-12)


def gaussian_fit(kernels: dict, grid, l: int = 0, near: float | None = None, s_min: float | None = None,
                 floor: float = 1e-12) -> GaussianFitReport:
    """Regress ``log|K_t| + (dim/2) log t`` on ``d^2/t`` (and ``log t`` when ``l > 0``).

    Only times with ``sqrt(t) <= L/4`` and pairs with ``d <= 0.4 L`` enter.
    ``near`` drops pairs closer than that distance (default ``3h`` for ``l > 0``,
    else 0); ``s_min`` drops pairs with ``d^2/t`` below it (default ``4 dim`` for
    ``l > 0``, twice the sign change of the first derivative, else 0).  Values below
    ``floor * max|K_t|`` are rounding noise and are skipped.
    """
    L = grid.side_length
    ts = sorted(t for t in kernels if math.sqrt(t) <= L / 4 + 1e-12)
    if len(ts) < 3:
        raise ValueError("gaussian_fit needs at least three times with sqrt(t) <= L/4")
    near = (3 * grid.h if l else 0.0) if near is None else near
    s_min = (4.0 * grid.dim if l else 0.0) if s_min is None else s_min
    dist = grid.distance_matrix()
    xs, ys, logt = [], [], []
    for t in ts:
        K = np.abs(kernels[t])
        s = dist**2 / t
        mask = _pair_mask(grid, dist, t, near, 0.4 * L) & (s >= s_min) & (K > floor * K.max())
        if not mask.any():
            continue
        xs.append(s[mask])
        ys.append(np.log(K[mask]) + 0.5 * grid.dim * math.log(t))
        logt.append(np.full(mask.sum(), math.log(t)))
    if not xs:
        raise ValueError("far field is empty or below the rounding floor")
    s = np.concatenate(xs)
    y = np.concatenate(ys)
    lt = np.concatenate(logt)
    cols = [np.ones_like(s), -s] + ([-lt] if l else [])
    A = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss = np.sum((y - y.mean()) ** 2)
    r2 = float(1 - np.sum(resid**2) / ss) if ss > 0 else 1.0
    # C is the amplitude that makes the fitted curve an upper envelope
    logC = float(coef[0] + resid.max())
    return GaussianFitReport(
        C=math.exp(logC),
        beta=float(coef[1]),
        r_squared=max(0.0, r2),
        t_values=ts,
        l=l,
        l_offset=float(coef[2]) if l else None,
        sample_count=int(s.size),
    )


@dataclass
class HolderReport:
    quantiles: dict = field(default_factory=dict)  # t -> {q: value}
    p95_max: float = 0.0
    beta: float = 0.0


def holder_statistic(kernels: dict, grid, beta: float, axis: int = 0, columns=None,
                     qs=(0.5, 0.9, 0.95, 0.99, 1.0), floor: float = 1e-12, s_max: float = 16.0) -> HolderReport:
    """Distribution of the normalized one-step difference of ``K_t(., y)``.

    For pairs with ``2h <= sqrt(t) + d``, ``d <= 0.4 L``, ``d^2/t <= s_max`` and a
    kernel value above the rounding floor the statistic is

        |K_t(x + h e_axis, y) - K_t(x, y)| t^{dim/2} (sqrt(t) + d) / (h exp(-beta d^2/t)).

    Beyond ``d^2/t ~ t/h^2`` a lattice kernel has a Poisson-type tail that the
    Gaussian envelope cannot follow, hence the ``s_max`` cut.
    """
    h, L = grid.h, grid.side_length
    coords = grid.index_coords()
    step = coords.copy()
    step[:, axis] = (step[:, axis] + 1) % grid.N
    shifted = np.ravel_multi_index(tuple(step.T), grid.shape)
    dist = grid.distance_matrix()
    cols = slice(None) if columns is None else np.asarray(columns)
    rep = HolderReport(beta=float(beta))
    for t in sorted(kernels):
        K = kernels[t][:, cols]
        d = dist[:, cols]
        diff = np.abs(K[shifted] - K)
        # pairs where both values sit below ``floor * max|K_t|`` carry only rounding noise
        big = np.maximum(np.abs(K), np.abs(K[shifted])) > floor * np.abs(K).max()
        mask = (2 * h <= math.sqrt(t) + d) & (d <= 0.4 * L) & (d**2 <= s_max * t) & big
        stat = diff * t ** (grid.dim / 2) * (math.sqrt(t) + d) / (h * np.exp(-beta * d**2 / t))
        vals = stat[mask]
        rep.quantiles[t] = {float(q): float(np.quantile(vals, q)) for q in qs}
        rep.p95_max = max(rep.p95_max, rep.quantiles[t][0.95] if 0.95 in rep.quantiles[t] else 0.0)
    return rep


def conservation_check(op: EllipticOperator, t_grid, method: str = "contour", tol: float = 1e-10) -> float:
    """``max_t ||e^{-tL} 1 - 1||_inf``."""
    one = constant(op.grid)
    worst = 0.0
    for t in t_grid:
        if method == "contour":
            u = semigroup_apply(op, t, one, tol=tol).values
        else:
            u = expm_oracle(op, t, one).values
        worst = max(worst, float(np.abs(u - 1).max()))
    return worst


def save_kernel_csv(path, K: np.ndarray) -> None:
    """Write ``x_index,y_index,value`` rows."""
    n = K.shape[0]
    ii, jj = np.meshgrid(np.arange(n), np.arange(K.shape[1]), indexing="ij")
    data = np.column_stack([ii.ravel(), jj.ravel(), np.real(K).ravel()])
    np.savetxt(path, data, delimiter=",", header="x_index,y_index,value", comments="",
               fmt=["%d", "%d", "%.17g"])
