import itertools
import json
import math

import numpy as np
import pytest
from conftest import make_op

from katolab.bounds import (
    Epsilon1Report,
    FamilyTag,
    _eps_from_curve,
    box,
    epsilon1_estimate,
    family_matrix,
    gamma_pq,
    localized_norm,
    offdiag_fit,
    pq_bound_sweep,
    pq_norm,
    pq_norm_details,
    set_distance,
)
from katolab.lattice import make_grid
from katolab.operator import adjoint
from katolab.resolvent import SectorError

LPQ_TIMES = list(np.geomspace(1e-3, 1 / 16, 9))


def lp(x, p):
    x = np.abs(np.asarray(x))
    return x.max() if math.isinf(p) else np.sum(x**p) ** (1 / p)


def conj(p):
    return math.inf if p == 1 else (1.0 if math.isinf(p) else p / (p - 1))


# ------------------------------------------------------------------ families


def test_family_tags():
    assert FamilyTag("T_LT_ADJ").base is FamilyTag.T_LT
    assert FamilyTag.SQRT_T_GRAD_ADJ.is_adjoint and FamilyTag.SQRT_T_GRAD_ADJ.vector
    assert not FamilyTag.SEMIGROUP.vector


def test_family_matrix_sector_and_shapes():
    op = make_op("BMO_LOG", 2, 8)
    assert family_matrix(op, "SQRT_T_GRAD", 0.01).shape == (128, 64)
    with pytest.raises(SectorError):
        family_matrix(op, "SEMIGROUP", 0.01 * np.exp(1j * (math.pi / 2 - op.theta0_estimate)))
    with pytest.raises(SectorError):
        family_matrix(op, "SEMIGROUP", -1.0)


# ------------------------------------------------------------------ geometry


def test_box_and_distance():
    g = make_grid(2, 8)
    E = box(g, 0, 2)
    assert E.size == 4
    F = box(g, [4, 0], 2)
    assert set_distance(g, E, F) == pytest.approx(3 * g.h)
    W = box(g, [7, 7], 2)  # wraps around both axes
    assert W.size == 4 and set_distance(g, E, W) == 0.0
    with pytest.raises(ValueError):
        box(g, 0, 9)


def test_localized_norm_examples():
    op = make_op("BMO_LOG", 2, 16)
    g = op.grid
    every = np.arange(g.size)
    assert localized_norm(op, "SEMIGROUP", 0.01, every, every) <= 1 + 1e-6
    E = box(g, 0, 2)
    F = box(g, [2 + 3, 0], 2)  # d(E, F) = L/4
    assert set_distance(g, E, F) == pytest.approx(0.25)
    assert localized_norm(op, "SEMIGROUP", 2.5e-4, E, F) <= 1e-6
    with pytest.raises(ValueError):
        localized_norm(op, "SEMIGROUP", 1e-3, E, [])


def test_localized_norm_monotone_and_below_global():
    op = make_op("BMO_LOG", 2, 16)
    g = op.grid
    for fam in ("SEMIGROUP", "T_LT", "SQRT_T_GRAD"):
        T = family_matrix(op, fam, 0.004)
        glob = np.linalg.norm(T, 2)
        E = box(g, 0, 4)
        prev = math.inf
        for size in (6, 4, 2, 1):
            v = localized_norm(op, fam, 0.004, E, box(g, [5, 0], size), matrix=T)
            assert v <= prev * (1 + 1e-12) and v <= glob * (1 + 1e-12)
            prev = v


def test_adjoint_swap_symmetry():
    op = make_op("BMO_LOG", 2, 16)
    g = op.grid
    E, F = box(g, 0, 2), box(g, [5, 1], 2)
    for t in (0.002, 0.01):
        a = localized_norm(op, "SEMIGROUP", t, E, F)
        b = localized_norm(op, "SEMIGROUP_ADJ", t, F, E)
        assert abs(a - b) <= 1e-10 * max(a, 1e-300)


# --------------------------------------------------------------- off-diagonal


def test_offdiag_identity_semigroup():
    op = make_op("IDENTITY", 2, 16)
    h2 = op.grid.h**2
    rep = offdiag_fit(op, "SEMIGROUP", [h2 * k for k in (1, 2, 4, 8)], [2, 3, 4, 5])
    assert rep.alpha > 0 and rep.r_squared >= 0.9
    assert rep.sample_count == 16 and "finite-dimensional" in rep.caveat
    json.loads(rep.to_json())


def test_offdiag_bmo_all_families_and_rays():
    op = make_op("BMO_LOG", 2, 16)
    h2 = op.grid.h**2
    mu = 0.5 * (math.pi / 2 - op.theta0_estimate)
    for fam in ("SEMIGROUP", "T_LT", "SQRT_T_GRAD"):
        for ang in (0.0, mu, -mu):
            rep = offdiag_fit(op, fam, [h2 * k for k in (1, 2, 4, 8)], [2, 3, 4, 5], angle=ang)
            assert rep.alpha > 0, (fam, ang)


def test_offdiag_rejects_wrapping_boxes():
    op = make_op("IDENTITY", 2, 8)
    with pytest.raises(ValueError):
        offdiag_fit(op, "SEMIGROUP", [0.01, 0.02, 0.04], [7], box_cells=2)


# ---------------------------------------------------------------------- pq


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0, math.inf])
def test_identity_norm_is_one(p):
    assert pq_norm(np.eye(6), p, p, weight=0.125) == pytest.approx(1.0, rel=1e-9)


@pytest.mark.parametrize("p,q", [(1, 2), (1, 3), (2, 2), (2, math.inf), (1.5, 3), (1.5, 2), (3, 4)])
def test_rank_one_closed_form(p, q):
    rng = np.random.default_rng(int(10 * p + q if math.isfinite(q) else p))
    u, v = rng.standard_normal(7), rng.standard_normal(5)
    T = np.outer(u, v)
    assert pq_norm(T, p, q) == pytest.approx(lp(u, q) * lp(v, conj(p)), rel=1e-8)
    # the weight enters as w^{1/q - 1/p}
    w = 0.25
    iq = 0 if math.isinf(q) else 1 / q
    assert pq_norm(T, p, q, weight=w) == pytest.approx(w ** (iq - 1 / p) * lp(u, q) * lp(v, conj(p)), rel=1e-8)


def test_one_to_two_brute_force():
    rng = np.random.default_rng(3)
    T = rng.standard_normal((8, 8))
    best = 0.0
    for _ in range(20000):
        x = rng.standard_normal(8) * (rng.random(8) < 0.3)
        if not x.any():
            continue
        best = max(best, lp(T @ x, 2) / lp(x, 1))
    exact = pq_norm(T, 1, 2)
    cols = max(lp(T[:, j], 2) for j in range(8))
    assert exact == pytest.approx(cols, rel=1e-12)
    assert best <= exact * (1 + 1e-12)


def test_duality_corners():
    rng = np.random.default_rng(4)
    T = rng.standard_normal((9, 6)) + 1j * rng.standard_normal((9, 6))
    assert abs(pq_norm(T, 1, 2) - pq_norm(T.conj().T, 2, math.inf)) <= 1e-10 * pq_norm(T, 1, 2)
    assert pq_norm_details(T, 1, 2).exact and pq_norm_details(T.conj().T, 2, math.inf).exact


def test_boyd_lower_bound_below_interpolation_and_brute_force():
    rng = np.random.default_rng(5)
    T = rng.standard_normal((3, 3))
    for p in (1.5, 3.0):
        det = pq_norm_details(T, p, p)
        assert not det.exact and det.trace
        upper = pq_norm(T, 1, 1) ** (1 / p) * pq_norm(T, math.inf, math.inf) ** (1 - 1 / p)
        assert det.value <= upper * (1 + 1e-12)
        grid = np.linspace(-1, 1, 41)
        brute = max(lp(T @ np.array(x), p) / lp(x, p) for x in itertools.product(grid, repeat=3) if any(x))
        assert brute <= det.value * (1 + 1e-6)
        assert det.value <= brute * 1.05  # the grid is fine enough to come close


def test_vector_output_groups():
    rng = np.random.default_rng(6)
    A, B = rng.standard_normal((4, 5)), rng.standard_normal((4, 5))
    T = np.vstack([A, B])
    exact = max(np.linalg.norm(np.vstack([A[i], B[i]]), 2) for i in range(4))
    assert pq_norm(T, 2, math.inf, out_groups=2) == pytest.approx(exact, rel=1e-12)
    with pytest.raises(ValueError):
        pq_norm(T, 2, 2, out_groups=3)


def test_pq_errors_and_gamma():
    with pytest.raises(ValueError):
        pq_norm(np.eye(3), 3, 2)
    assert gamma_pq(2, 1, 2) == 1.0
    assert gamma_pq(1, 1, 2) == 0.5
    assert gamma_pq(3, 2, math.inf) == 1.5


# ------------------------------------------------------------------- sweeps


def test_semigroup_two_two_contraction():
    op = make_op("BMO_LOG", 2, 8)
    rep = pq_bound_sweep(op, "SEMIGROUP", 2, 2, LPQ_TIMES)
    assert rep.sup_normalized <= 1 + 1e-6
    assert rep.gamma == 0 and len(rep.table) == 9
    json.loads(rep.to_json())


def test_semigroup_one_two_slope_identity_1d():
    op = make_op("IDENTITY", 1, 64)
    rep = pq_bound_sweep(op, "SEMIGROUP", 1, 2, LPQ_TIMES)
    assert abs(rep.slope + 0.25) <= 0.15
    assert all(row[3] for row in rep.table)  # (1, 2) is an exact corner


def test_sweep_stability_identity_1d():
    sups = {}
    for N in (32, 64):
        op = make_op("IDENTITY", 1, N)
        sups[N] = pq_bound_sweep(op, "SQRT_T_GRAD", 2, 3, LPQ_TIMES).sup_normalized
    assert abs(sups[64] / sups[32] - 1) <= 0.5


# ----------------------------------------------------------------- epsilon1


def test_eps_contiguous_rule():
    curve = {2.0: 1.0, 2.5: 2.0, 3.0: 50.0, 4.0: 5.0}
    assert _eps_from_curve(curve, 10.0) == 0.5
    assert _eps_from_curve(curve, 100.0) == 2.0
    assert _eps_from_curve(curve, 1.5) == 0.0


def test_epsilon1_symmetric_reaches_top():
    op = make_op("IDENTITY", 2, 8)
    rep = epsilon1_estimate(op, [2.5, 3.0, 4.0], LPQ_TIMES[::2])
    assert isinstance(rep, Epsilon1Report)
    assert rep.value == pytest.approx(2.0)
    assert set(rep.sensitivity) == {"3.0", "10.0", "30.0"}
    assert np.isfinite(rep.curve["2.0"])
    with pytest.raises(ValueError):
        epsilon1_estimate(op, [1.5], LPQ_TIMES[:3])


def test_adjoint_operator_matches_adj_family():
    op = make_op("BMO_LOG", 2, 8)
    a = family_matrix(op, "T_LT_ADJ", 0.01)
    b = family_matrix(adjoint(op), "T_LT", 0.01)
    assert np.abs(a - b).max() <= 1e-12 * np.abs(b).max()
