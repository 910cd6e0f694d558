import json

import numpy as np
import pytest
import scipy.linalg as sla
from conftest import make_op

import katolab.squarefn as sq
from katolab.calculus import sqrtm_oracle
from katolab.lattice import Field, band_limited, constant
from katolab.squarefn import (
    SquareFnKind,
    TimeGrid,
    default_time_grid,
    ggrad_energy,
    square_function,
    square_function_ratio_sweep,
    square_function_ratio_sweeps,
    square_functions,
)

ALL = list(SquareFnKind)


def l2sq(g, v):
    return g.cell_volume * float(np.sum(np.abs(v) ** 2))


def field(op, seed=0, kmax=3):
    return band_limited(op.grid, kmax, np.random.default_rng(seed))


# ------------------------------------------------------------------- grids


def test_time_grid_contract():
    tg = TimeGrid(1e-3, 10.0, 1.2)
    t, w = tg.nodes()
    assert t[0] == 1e-3 and t[-1] >= 10.0
    assert w.sum() == pytest.approx(np.log(t[-1] / t[0]))
    assert tg.refined().ratio == pytest.approx(np.sqrt(1.2))
    for bad in [(1.0, 0.5, 1.1), (1e-3, 1.0, 1.0), (1e-3, 1.0, 1.6)]:
        with pytest.raises(ValueError):
            TimeGrid(*bad)
    g = make_op("IDENTITY", 2, 8).grid
    default_time_grid(g).validate_for(g)
    with pytest.raises(ValueError):
        TimeGrid(0.5, 4.0).validate_for(g)
    with pytest.raises(ValueError):
        TimeGrid(1e-3, 0.5).validate_for(g)


# --------------------------------------------------------------- oracles


def test_constants_vanish():
    op = make_op("BMO_LOG", 2, 8)
    vals, _ = square_functions(op, constant(op.grid, 3.0), ALL)
    for k in ALL:
        assert np.abs(vals[k]).max() <= 1e-12


def _eig_oracle(op, f, weight):
    """sum_j weight(mu_j) |<f, v_j>|^2 with the symmetric matrix diagonalized densely."""
    mu, V = sla.eigh(op.dense())
    c = V.T @ f.values
    return op.grid.cell_volume * float(np.sum(weight(np.maximum(mu, 0)) * c**2))


@pytest.mark.parametrize("kind,args", [("IDENTITY", (2, 16)), ("ANISOTROPIC_SYM", (2, 8))])
def test_plancherel_symmetric(kind, args):
    op = make_op(kind, *args)
    f = field(op, 1, kmax=2)
    vals, _ = square_functions(op, f, ["GL", "G1", "GGRAD"])
    g = op.grid
    var = l2sq(g, f.values - f.values.mean())
    assert l2sq(g, vals[SquareFnKind.GL]) == pytest.approx(var / 4, rel=1e-4)
    sqrt_e = _eig_oracle(op, f, lambda m: m)  # |L^{1/2} f|^2
    assert l2sq(g, vals[SquareFnKind.G1]) == pytest.approx(sqrt_e / 4, rel=1e-4)
    assert l2sq(g, vals[SquareFnKind.GGRAD]) == pytest.approx(var / 2, rel=1e-4)


def test_ggrad_energy_bmo_half_variance():
    # A^s = I and the antisymmetric part is Re-neutral, so d/dt |u|^2 = -2 |grad u|^2 exactly
    op = make_op("BMO_LOG", 2, 16)
    f = field(op, 2)
    var = l2sq(op.grid, f.values - f.values.mean())
    assert ggrad_energy(op, f) == pytest.approx(var / 2, rel=1e-4)


def test_g2t_identity():
    op = make_op("BMO_LOG", 2, 16)
    _, info = square_functions(op, field(op, 3), ["G2T"], with_check=True)
    assert info["g2t_identity_gap"] <= 1e-8


def test_commutation_matrix_identities():
    op = make_op("BMO_LOG", 2, 8)
    M = op.dense()
    S = sqrtm_oracle(op)
    t, r = 0.05, 0.02
    Et, Er = sla.expm(-t**2 * M), sla.expm(-r**2 * M)
    A = S @ M @ Et
    scale = np.linalg.norm(A)
    assert np.linalg.norm(Er @ A - A @ Er) <= 1e-8 * scale
    assert np.linalg.norm(Er @ S - S @ Er) <= 1e-8 * np.linalg.norm(S)


def test_square_function_field_and_errors():
    op = make_op("IDENTITY", 2, 8)
    f = field(op)
    out = square_function(op, f, "G1")
    assert isinstance(out, Field) and np.all(out.values >= 0)
    with pytest.raises(TypeError):
        square_functions(op, f.values + 1j, ["G1"])
    with pytest.raises(ValueError):
        square_function(op, f, "G3")


# ---------------------------------------------------------------- refinement


def test_refinement_and_range_widening():
    op = make_op("BMO_LOG", 2, 8)
    f = field(op, 4)
    base = default_time_grid(op.grid)
    a, _ = square_functions(op, f, ALL, base)
    b, _ = square_functions(op, f, ALL, base.refined())
    wide = TimeGrid(base.t_min / 4, base.t_max * 4, base.ratio)
    c, _ = square_functions(op, f, ALL, wide)
    for k in ALL:
        na, nb, nc = (np.linalg.norm(x[k]) for x in (a, b, c))
        assert abs(nb / na - 1) <= 1e-3, k
        assert abs(nc / na - 1) <= 1e-3, k


# --------------------------------------------------------------------- sweeps


def test_g1_identity_ratio_half():
    op = make_op("IDENTITY", 2, 16)
    rep = square_function_ratio_sweep(op, 2.0, "G1", count=4, seed=1)
    assert all(abs(r - 0.5) <= 1e-3 for r in rep.ratios["2.0"])
    assert rep.skipped == 0
    json.loads(rep.to_json())


def test_sweeps_share_one_pass_and_are_bounded():
    op = make_op("BMO_LOG", 2, 8)
    reps = square_function_ratio_sweeps(op, [1.5, 2.0, 3.0], ["G1", "G2X", "G2T", "GL"], count=3, seed=2)
    for k, rep in reps.items():
        for p in ("1.5", "2.0", "3.0"):
            assert 0 < rep.min[p] <= rep.max[p] < np.inf, (k, p)
    assert reps[SquareFnKind.GL].sqrt_path == "oracle"
    one = square_function_ratio_sweep(op, [1.5, 2.0, 3.0], "G1", count=3, seed=2)
    assert one.ratios == reps[SquareFnKind.G1].ratios
    with pytest.raises(ValueError):
        square_function_ratio_sweep(op, 1.0, "G1")


def test_zero_field_is_skipped(monkeypatch):
    op = make_op("IDENTITY", 2, 8)
    real = sq.test_family

    def family(grid, fam, count, seed):
        return [Field(grid, np.zeros(grid.size))] + real(grid, fam, count - 1, seed)

    monkeypatch.setattr(sq, "test_family", family)
    rep = square_function_ratio_sweep(op, 2.0, "G1", count=3)
    assert rep.skipped == 1 and len(rep.ratios["2.0"]) == 2
    monkeypatch.setattr(sq, "test_family", lambda grid, fam, count, seed: [Field(grid, np.zeros(grid.size))])
    empty = square_function_ratio_sweep(op, 2.0, "G1", count=1)
    assert empty.skipped == 1 and empty.ratios == {}
