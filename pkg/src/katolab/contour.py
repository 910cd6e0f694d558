"""Quadrature of resolvent contour integrals

    (1 / 2 pi i) int_Gamma phi(lambda) (lambda + L)^{-1} f  d lambda

over the path made of the arc ``{R e^{i theta} : |theta| <= pi - theta1}`` and
the two rays ``{r e^{+-i(pi - theta1)} : R <= r <= r_max}``, traversed so that
``-spectrum(L)`` lies on the left.  With ``phi(lambda) = e^{t lambda}`` this
is ``e^{-tL} f``.

Each piece is split into equal panels (in ``theta`` on the arc, in
``log r`` on the rays) carrying ``PANEL`` Gauss-Legendre nodes.  The matrix
is real, so ``(conj(lambda) + M)^{-1} g = conj((lambda + M)^{-1} conj(g))``:
only the upper half of the path is factorized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .operator import EllipticOperator
from .resolvent import SectorError, theta0

__all__ = ["PANEL", "ContourSpec", "ContourIntegrator", "QuadratureError", "default_contour"]

PANEL = 16
ORDERING = "MMD_AT_PLUS_A"  # symmetric pattern: minimum degree on A + A^T gives the least fill
_MARGIN = 0.2


class QuadratureError(RuntimeError):
    """Quadrature did not reach the requested tolerance."""


@dataclass(frozen=True)
class ContourSpec:
    """Contour shape and node counts.

    ``ray_length`` is the absolute truncation radius ``r_max`` of both rays.
    ``nodes_per_ray`` and ``nodes_on_arc`` count nodes on the upper half of
    the path (the lower half mirrors it) and are rounded up to whole panels.
    """

    theta1: float
    arc_radius: float
    ray_length: float
    nodes_per_ray: int
    nodes_on_arc: int

    def __post_init__(self):
        if not 0 < self.theta1 < math.pi / 2:
            raise SectorError("theta1 must lie in (0, pi/2)")
        if not self.arc_radius > 0:
            raise ValueError("arc_radius must be positive")
        if not self.ray_length > self.arc_radius:
            raise ValueError("ray_length must exceed arc_radius")
        if self.nodes_per_ray < 4 or self.nodes_on_arc < 4:
            raise ValueError("node counts must be >= 4")

    def refined(self) -> "ContourSpec":
        return replace(self, nodes_per_ray=2 * self.nodes_per_ray, nodes_on_arc=2 * self.nodes_on_arc)

    def validate_for(self, op: EllipticOperator, angle: float = 0.0) -> None:
        th0 = theta0(op)
        if not self.theta1 > th0:
            raise SectorError(f"theta1 = {self.theta1:.4g} does not exceed theta0 estimate {th0:.4g}")
        if not self.theta1 + abs(angle) < math.pi / 2:
            raise SectorError("complex time too close to the sector edge for this contour")

    def nodes(self):
        """Upper-half nodes ``lambda_j`` and weights ``w_j`` (``d lambda`` included)."""
        phi = math.pi - self.theta1
        R = self.arc_radius
        x, w = np.polynomial.legendre.leggauss(PANEL)

        def panels(a, b, count):
            npan = max(1, math.ceil(count / PANEL))
            edges = np.linspace(a, b, npan + 1)
            half = 0.5 * np.diff(edges)
            mid = 0.5 * (edges[1:] + edges[:-1])
            pts = (mid[:, None] + half[:, None] * x[None, :]).ravel()
            wts = (half[:, None] * w[None, :]).ravel()
            return pts, wts

        th, wth = panels(0.0, phi, self.nodes_on_arc)
        lam_arc = R * np.exp(1j * th)
        w_arc = 1j * lam_arc * wth
        u, wu = panels(0.0, math.log(self.ray_length / R), self.nodes_per_ray)
        lam_ray = R * np.exp(u) * np.exp(1j * phi)
        w_ray = lam_ray * wu
        return np.concatenate([lam_arc, lam_ray]), np.concatenate([w_arc, w_ray])


def default_contour(op: EllipticOperator, t_min: float, t_max: float | None = None,
                    angle: float = 0.0, order: int = 0, margin: float = _MARGIN) -> ContourSpec:
    """Contour valid for ``e^{-zL}`` with ``t_min <= |z| <= t_max`` and ``arg z = angle``.

    ``theta1 = theta0 + margin (pi/2 - |angle| - theta0)``; for a single real
    time this is ``theta0 + 0.2 (pi/2 - theta0)`` with arc radius ``1/t``.
    """
    t_max = t_min if t_max is None else t_max
    if not 0 < t_min <= t_max:
        raise ValueError("need 0 < t_min <= t_max")
    th0 = theta0(op)
    room = math.pi / 2 - abs(angle) - th0
    if room <= 0:
        raise SectorError(f"|arg z| = {abs(angle):.4g} leaves no room beyond theta0 = {th0:.4g}")
    theta1 = th0 + margin * room
    c = math.cos(theta1 + abs(angle))
    # |lambda|^order e^{-|z| r c} below 1e-16 at the ray ends
    x = 40.0
    for _ in range(5):
        x = 37.0 + order * math.log(max(x, 1.0)) - order * math.log(c)
    R = 1.0 / t_max
    r_max = max(x / (t_min * c), 4 * R)
    gap = theta1 - th0
    wu = min(0.5, 3.0 * gap, 20.0 / (x * math.tan(theta1 + abs(angle))))
    wa = min(0.4, 3.0 * gap)
    n_ray = PANEL * math.ceil(math.log(r_max / R) / wu)
    n_arc = PANEL * math.ceil((math.pi - theta1) / wa)
    return ContourSpec(theta1, R, r_max, n_ray, n_arc)


class ContourIntegrator:
    """Evaluate ``(1/2 pi i) int phi(lambda) post((lambda + M)^{-power} rhs) d lambda``.

    One sparse LU per upper-half node serves every ``phi`` row and every
    right-hand-side column passed in the same call.
    """

    def __init__(self, op: EllipticOperator, spec: ContourSpec, chunk: int = 32):
        M = op.matrix
        if np.iscomplexobj(M.data):
            raise TypeError("contour quadrature assumes a real operator matrix")
        self.op = op
        self.spec = spec
        self.matrix = sp.csc_matrix(M)
        self.lam, self.w = spec.nodes()
        self.chunk = chunk

    @property
    def node_count(self) -> int:
        return 2 * self.lam.size

    def integrate(self, rhs, phi, post=None, real: bool = False, power: int = 1) -> np.ndarray:
        """Integrate for each row of ``phi``.

        Parameters
        ----------
        rhs : ndarray, shape (n,) or (n, k)
        phi : callable
            Maps an array of nodes to coefficients of shape ``(n_out, nodes)``.
        post : sparse matrix, optional
            Applied to each resolvent solve before accumulation.
        real : bool
            Declare ``rhs`` real and ``phi(conj l) = conj(phi(l))``; the result
            is then real and only the upper half is accumulated.
        power : int
            Number of resolvent solves per node.

        Returns
        -------
        ndarray of shape ``(n_out,) + post(rhs).shape``.
        """
        return self.integrate_many([(rhs, phi, post, real, power)])[0]

    def integrate_many(self, requests) -> list[np.ndarray]:
        """Several ``(rhs, phi, post, real[, power])`` integrals sharing one factorization per node."""
        jobs = [_Job(*req) for req in requests]
        n = self.matrix.shape[0]
        eye = sp.identity(n, format="csc")
        for job in jobs:
            job.start(self.lam, self.w)
        last = self.lam.size - 1
        for j, lam in enumerate(self.lam):
            lu = spla.splu((self.matrix + lam * eye).tocsc(), permc_spec=ORDERING)
            for job in jobs:
                job.push(j, lu, self.chunk, j == last)
        return [job.result() for job in jobs]


class _Job:
    """Accumulator for one contour integral; see :meth:`ContourIntegrator.integrate`."""

    def __init__(self, rhs, phi, post=None, real=False, power=1):
        if power < 1:
            raise ValueError("power must be >= 1")
        self.power = int(power)
        rhs = np.asarray(rhs)
        self.squeeze = rhs.ndim == 1
        if self.squeeze:
            rhs = rhs[:, None]
        if real and np.iscomplexobj(rhs):
            raise ValueError("real=True requires a real right-hand side")
        self.rhs, self.phi, self.post, self.real = rhs, phi, post, real
        self.rhs_c = rhs.astype(complex)

    def start(self, lam, w):
        self.up = np.atleast_2d(self.phi(lam)) * w[None, :]
        n_out = self.up.shape[0]
        self.rows = self.rhs.shape[0] if self.post is None else self.post.shape[0]
        width = self.rows * self.rhs.shape[1]
        if self.real:
            self.acc = np.zeros((n_out, width))
        else:
            self.low = np.atleast_2d(self.phi(lam.conj())) * (-w.conj())[None, :]
            self.acc = np.zeros((n_out, width), dtype=complex)
        self.buf_s, self.buf_l, self.idx = [], [], []

    def push(self, j, lu, chunk, flush):
        s = self.rhs_c
        for _ in range(self.power):
            s = lu.solve(s)
        if self.post is not None:
            s = self.post @ s
        self.buf_s.append(s.reshape(-1))
        if not self.real:
            s_low = self.rhs_c.conj()
            for _ in range(self.power):
                s_low = lu.solve(s_low)
            s_low = s_low.conj()
            if self.post is not None:
                s_low = self.post @ s_low
            self.buf_l.append(s_low.reshape(-1))
        self.idx.append(j)
        if len(self.idx) == chunk or flush:
            S = np.stack(self.buf_s)
            if self.real:
                c = self.up[:, self.idx]
                # total = Im(sum c S) / pi: the lower half mirrors the upper
                self.acc += c.real @ S.imag + c.imag @ S.real
            else:
                self.acc += self.up[:, self.idx] @ S + self.low[:, self.idx] @ np.stack(self.buf_l)
            self.buf_s, self.buf_l, self.idx = [], [], []

    def result(self):
        out = self.acc / math.pi if self.real else self.acc / (2j * math.pi)
        out = out.reshape((out.shape[0], self.rows, self.rhs.shape[1]))
        if self.squeeze:
            out = out[..., 0]
        return out
