"""Assembly of the lattice operator ``L = -div(A grad)``.

With ``D`` the forward-difference matrix the operator is

    M = D^T  B  D,       B = blockdiag_ij( diag(B_ij) ),

where the symmetric part of ``B`` is the average of ``A^s`` over the ``2^dim``
cells sharing the vertex ``x + h/2 (1, ..., 1)`` (the face mean in 1-D) and the
anti-symmetric part is ``A^a`` of the cell itself.  Averaging keeps the
spectrum of ``B^s`` inside ``[lambda0, 1/lambda0]``, so

    Re <M u, u> >= lambda0 ||D u||^2,   M 1 = 0,   1^T M = 0

hold exactly, and the anti-symmetric part never contributes to ``Re <Mu,u>``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import CoefficientField
from .lattice import Field, Grid, GridError, difference_matrix, divergence, gradient, inner

__all__ = [
    "AccretivityError",
    "EllipticOperator",
    "ConjugationWeight",
    "assemble",
    "form_apply",
    "sector_angle",
    "adjoint",
    "conjugation_weight",
    "conjugate",
    "conjugate_expanded",
    "export_coo",
    "invariant_audit",
]


class AccretivityError(RuntimeError):
    """A form value with non-positive real part on a non-constant vector."""


@dataclass(eq=False)
class EllipticOperator:
    grid: Grid
    coefficients: CoefficientField
    matrix: sp.csr_matrix = field(repr=False)
    theta0_estimate: float | None = None
    sym_matrix: sp.csr_matrix | None = field(default=None, repr=False)
    antisym_matrix: sp.csr_matrix | None = field(default=None, repr=False)
    weight: "ConjugationWeight | None" = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.grid.size

    @property
    def lambda0(self) -> float:
        return self.coefficients.lambda0

    def apply(self, u: Field) -> Field:
        if u.grid != self.grid:
            raise GridError("field and operator live on different grids")
        return Field(self.grid, self.matrix @ u.values)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    @property
    def is_symmetric(self) -> bool:
        return self.weight is None and not np.any(self.coefficients.antisym)


def _vertex_average(grid: Grid, sym: np.ndarray) -> np.ndarray:
    a = sym.reshape(grid.shape + sym.shape[1:])
    acc = np.zeros_like(a)
    count = 0
    for corner in np.ndindex(*(2,) * grid.dim):
        shifted = a
        for ax, c in enumerate(corner):
            if c:
                shifted = np.roll(shifted, -1, axis=ax)
        acc += shifted
        count += 1
    return (acc / count).reshape(sym.shape)


def _block(grid: Grid, B: np.ndarray) -> sp.csr_matrix:
    d = grid.dim
    rows = [[sp.diags(B[:, i, j]) for j in range(d)] for i in range(d)]
    return sp.csr_matrix(sp.bmat(rows))


def _face_coefficients(coeffs: CoefficientField) -> tuple[np.ndarray, np.ndarray]:
    return _vertex_average(coeffs.grid, coeffs.sym), coeffs.antisym


def assemble(coeffs: CoefficientField) -> EllipticOperator:
    g = coeffs.grid
    D = difference_matrix(g)
    Bs, Ba = _face_coefficients(coeffs)
    Ms = (D.T @ _block(g, Bs) @ D).tocsr()
    Ms = ((Ms + Ms.T) * 0.5).tocsr()
    Ma = (D.T @ _block(g, Ba) @ D).tocsr()
    Ma = ((Ma - Ma.T) * 0.5).tocsr()
    M = (Ms + Ma).tocsr()
    for m in (Ms, Ma, M):
        m.eliminate_zeros()
        m.sort_indices()
    theta = 0.0 if not np.any(coeffs.antisym) else None
    return EllipticOperator(g, coeffs, M, theta, Ms, Ma)


def form_apply(op: EllipticOperator, u: Field, v: Field) -> complex:
    """``<M u, v> = h^dim sum (M u) conj(v)``."""
    if u.grid != op.grid or v.grid != op.grid:
        raise GridError("fields and operator live on different grids")
    return complex(op.grid.cell_volume * np.vdot(v.values, op.matrix @ u.values))


def _project_mean_zero(x: np.ndarray) -> np.ndarray:
    return x - x.mean(axis=0, keepdims=True)


def sector_angle(op: EllipticOperator, sample_count: int = 64, seed: int = 0,
                 refine_steps: int = 60, krylov_dim: int = 24) -> float:
    """Lower bound for the half-angle of the sector containing the numerical range.

    With ``S``, ``K`` the symmetric and anti-symmetric parts of ``M``,
    ``<Mu,u> = u^H S u + u^H K u`` and the second term is purely imaginary, so
    the angle is ``atan`` of the largest ``|mu|`` of the Hermitian pencil
    ``(iK, S)`` on mean-zero vectors.  Random complex samples give a first
    value; restarted Krylov spaces of ``S^+ K`` with Rayleigh-Ritz then push it
    up (``refine_steps`` counts operator applications).  Every reported angle
    is attained by an explicit vector.  The result is stored in
    ``op.theta0_estimate``.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    n = op.size
    M = op.matrix
    S = ((M + M.T) * 0.5).tocsc()
    K = ((M - M.T) * 0.5).tocsc()
    scale_m = abs(M).max()

    def angles(U):
        MU = M @ U
        vals = np.einsum("ij,ij->j", U.conj(), MU)
        re, im = vals.real, vals.imag
        scale = np.einsum("ij,ij->j", U.conj(), U).real
        if np.any(re <= 1e-14 * scale * scale_m):
            raise AccretivityError("form value with non-positive real part on a non-constant vector")
        return np.arctan2(np.abs(im), re)

    rng = np.random.default_rng(seed)
    U = rng.standard_normal((n, sample_count)) + 1j * rng.standard_normal((n, sample_count))
    U = _project_mean_zero(U)
    a = angles(U)
    best_angle = float(a.max())
    if K.count_nonzero() and refine_steps > 0 and n > 2:
        pin = sp.csc_matrix(([1.0], ([0], [0])), shape=(n, n))
        lu = spla.splu((S + pin * S.diagonal().max()).tocsc())  # exact on mean-zero data

        def step(x):
            w = _project_mean_zero((K @ x)[:, None])[:, 0]
            return _project_mean_zero(lu.solve(w)[:, None])[:, 0]

        m = max(2, min(krylov_dim, n - 1))
        start = _project_mean_zero(rng.standard_normal((n, 1)))[:, 0]
        used = 0
        while used < refine_steps:
            V = np.zeros((n, m))
            V[:, 0] = start / np.linalg.norm(start)
            k = 1
            for j in range(1, m):
                x = step(V[:, j - 1])
                used += 1
                for _ in range(2):
                    x -= V[:, :j] @ (V[:, :j].T @ x)
                nx = np.linalg.norm(x)
                if nx < 1e-12:
                    break
                V[:, j] = x / nx
                k = j + 1
            V = V[:, :k]
            Kr = V.T @ (K @ V)
            Sr = V.T @ (S @ V)
            mu, Y = sla.eigh(1j * Kr, Sr)
            idx = int(np.argmax(np.abs(mu)))
            u = V @ Y[:, idx]
            best_angle = max(best_angle, float(angles(u[:, None])[0]))
            nxt = u.real + u.imag
            if np.linalg.norm(nxt) < 1e-12 or k < m:
                break
            start = nxt
    if not best_angle < np.pi / 2:
        raise AccretivityError("sector angle reached pi/2")
    op.theta0_estimate = best_angle
    return best_angle


def adjoint(op: EllipticOperator) -> EllipticOperator:
    """Operator with matrix ``M^T`` and coefficients ``A^T``."""
    w = op.weight
    if w is not None:
        w = replace(w, psi=-w.psi)
    return EllipticOperator(
        op.grid,
        op.coefficients.transpose(),
        op.matrix.T.tocsr(),
        op.theta0_estimate,
        op.sym_matrix,
        None if op.antisym_matrix is None else (-op.antisym_matrix).tocsr(),
        w,
    )


@dataclass(frozen=True, eq=False)
class ConjugationWeight:
    """Bounded lattice-Lipschitz weight ``Psi`` for ``e^{-Psi} L e^{Psi}``.

    ``lip_bound`` is ``max |Psi(x + h e_i) - Psi(x)| / h`` over all faces; the
    smallness condition ``lip_bound <= delta / M0`` is recorded, not enforced.
    """

    grid: Grid
    psi: np.ndarray = field(repr=False)
    lip_bound: float = 0.0
    delta: float | None = None


def conjugation_weight(psi: Field, delta: float | None = None) -> ConjugationWeight:
    vals = np.asarray(psi.values, dtype=float)
    vals = vals - vals.mean()
    lip = float(np.abs(difference_matrix(psi.grid) @ vals).max())
    return ConjugationWeight(psi.grid, vals, lip, delta)


def conjugate(op: EllipticOperator, w: ConjugationWeight) -> EllipticOperator:
    """Exact diagonal similarity ``diag(e^{-Psi}) M diag(e^{Psi})``."""
    if w.grid != op.grid:
        raise GridError("weight and operator live on different grids")
    psi = w.psi - w.psi.mean()
    if np.abs(psi).max() > 600:
        raise OverflowError("conjugation weight too large for e^{+-Psi}")
    Dm, Dp = sp.diags(np.exp(-psi)), sp.diags(np.exp(psi))
    mat = (Dm @ op.matrix @ Dp).tocsr()
    out = EllipticOperator(op.grid, op.coefficients, mat, op.theta0_estimate, None, None,
                           replace(w, psi=psi))
    return out


def conjugate_expanded(op: EllipticOperator, w: ConjugationWeight) -> sp.csr_matrix:
    """Matrix of ``L - div(u A grad Psi) - grad Psi . A grad u - (A grad Psi . grad Psi) u``.

    A consistent but not exact discretization of the conjugated operator;
    agrees with :func:`conjugate` to ``O(h)`` on smooth data.
    """
    g = op.grid
    D = difference_matrix(g)
    Bs, Ba = _face_coefficients(op.coefficients)
    B = Bs + Ba
    dpsi = (D @ w.psi).reshape(g.dim, g.size).T  # (ncells, dim)
    Bdpsi = np.einsum("xij,xj->xi", B, dpsi)  # A grad Psi at each cell
    psiB = np.einsum("xi,xij->xj", dpsi, B)  # grad Psi^T A
    drift_in = sp.vstack([sp.diags(Bdpsi[:, i]) for i in range(g.dim)])
    drift_out = sp.hstack([sp.diags(psiB[:, j]) for j in range(g.dim)])
    potential = sp.diags(np.einsum("xi,xi->x", Bdpsi, dpsi))
    mat = op.matrix + D.T @ drift_in - drift_out @ D - potential
    return sp.csr_matrix(mat)


def export_coo(op: EllipticOperator, path) -> None:
    """Write the matrix as ``row col value`` lines (0-based) with a size header."""
    coo = op.matrix.tocoo()
    with Path(path).open("w") as fh:
        fh.write(f"% {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{int(i)} {int(j)} {float(v)!r}\n")


def invariant_audit(op: EllipticOperator, samples: int = 8, seed: int = 0) -> dict:
    """Relative residuals of the exact structural identities on random fields.

    ``kernel``/``cokernel``: ``|M 1|`` and ``|1^T M|``; ``duality``:
    ``<grad u, v> + <u, div v>``; ``accretivity``: shortfall of
    ``Re <Mu,u> >= lambda0 |grad u|^2`` (0 when it holds); ``re_neutrality``:
    ``Re <M_a u, u>``; ``adjoint``: ``<Mu,v> - <u,M^T v>`` together with the
    gap between ``M^T`` and the operator assembled from ``A^T``.
    """
    g = op.grid
    rng = np.random.default_rng(seed)
    M = op.matrix
    nm = float(abs(M).sum(axis=1).max())  # infinity norm
    one = np.ones(g.size)
    out = {
        "kernel": float(np.abs(M @ one).max() / nm),
        "cokernel": float(np.abs(M.T @ one).max() / nm),
    }
    dual = acc = neut = adj = 0.0
    Ma = op.antisym_matrix
    for _ in range(samples):
        u = Field(g, rng.standard_normal(g.size) + 1j * rng.standard_normal(g.size))
        v = Field(g, rng.standard_normal(g.size) + 1j * rng.standard_normal(g.size))
        w = Field(g, rng.standard_normal((g.dim, g.size)))
        gu = gradient(u)
        lhs, rhs = inner(gu, w), -inner(u, divergence(w))
        dual = max(dual, abs(lhs - rhs) / (np.sqrt(abs(inner(gu, gu)) * abs(inner(w, w))) + 1e-300))
        form = form_apply(op, u, u)
        energy = inner(gu, gu).real
        if op.weight is None:
            acc = max(acc, max(0.0, 1.0 - form.real / (op.lambda0 * energy)))
        if Ma is not None:
            val = g.cell_volume * np.vdot(u.values, Ma @ u.values)
            neut = max(neut, abs(val.real) / (g.cell_volume * nm * np.vdot(u.values, u.values).real))
        a = form_apply(op, u, v)
        b = complex(g.cell_volume * np.vdot(M.T @ v.values, u.values))
        adj = max(adj, abs(a - b) / (g.cell_volume * nm * np.linalg.norm(u.values) * np.linalg.norm(v.values)))
    out.update(duality=float(dual), accretivity=float(acc), re_neutrality=float(neut), adjoint=float(adj))
    if op.weight is None:
        other = assemble(op.coefficients.transpose()).matrix
        out["adjoint_assembly"] = float(abs(other - M.T).max() / nm)
    return out
