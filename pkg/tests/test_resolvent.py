import math

import numpy as np
import pytest
from conftest import circulant_eigs, make_op, rand_field

from katolab.lattice import Field, fourier_mode, make_grid
from katolab.operator import adjoint, conjugation_weight
from katolab.resolvent import (
    DecayFit,
    ResolventError,
    SectorError,
    conjugation_residual,
    default_power,
    fit_decay,
    resolve,
    resolvent_identity_residual,
    resolvent_power_kernel,
    sector_sweep,
)


def test_resolve_fourier_mode():
    op = make_op("IDENTITY", 1, 32)
    g = op.grid
    mu = circulant_eigs(32, g.h)
    for k in (0, 1, 5, 16):
        f = fourier_mode(g, [k])
        for lam in (1.0, 2 + 3j, 50 * np.exp(2.5j)):
            u = resolve(op, lam, f)
            assert np.allclose(u.values, f.values / (lam + mu[k]), rtol=1e-12, atol=1e-14)


def test_resolve_large_lambda(rng):
    op = make_op("BMO_LOG", 2, 16)
    f = rand_field(op.grid, rng)
    u = resolve(op, 1e6, f)
    r = np.linalg.norm(u.values) * 1e6 / np.linalg.norm(f.values)
    assert 0.9 <= r <= 1.1


def test_resolve_residual_contract_and_errors(rng):
    op = make_op("BMO_LOG", 2, 16)
    f = rand_field(op.grid, rng, True)
    lam = 3 - 2j
    u = resolve(op, lam, f, tol=1e-12)
    res = np.linalg.norm(op.matrix @ u.values + lam * u.values - f.values)
    assert res <= 1e-12 * np.linalg.norm(f.values)
    with pytest.raises(SectorError):
        resolve(op, 0.0, f)
    with pytest.raises(SectorError):
        resolve(op, -1.0, f)
    with pytest.raises(ResolventError) as err:
        resolve(op, 1.0, f, tol=1e-30)
    assert err.value.residual is None or err.value.residual >= 0


def test_resolvent_identity(rng):
    op = make_op("BMO_LOG", 2, 16)
    f = rand_field(op.grid, rng, True)
    for lam, mu in [(1.0, 3.0), (2 + 1j, 0.5 - 4j), (100j + 1, 7.0)]:
        assert resolvent_identity_residual(op, lam, mu, f) <= 1e-8


def test_resolvent_adjoint_consistency(rng):
    op = make_op("BMO_LOG", 2, 16)
    adj = adjoint(op)
    lam = 2 + 5j
    for _ in range(3):
        u, v = rand_field(op.grid, rng, True), rand_field(op.grid, rng, True)
        a = np.vdot(v.values, resolve(op, lam, u).values)
        b = np.vdot(resolve(adj, np.conj(lam), v).values, u.values)
        assert abs(a - b) <= 1e-10 * abs(a)


def test_sector_sweep_symmetric_real_axis():
    op = make_op("IDENTITY", 1, 32)
    rep = sector_sweep(op, 0.3, [0.5, 5.0, 50.0], [0.0])
    assert rep.exact
    assert rep.sup_resolvent == pytest.approx(1.0, abs=1e-12)  # lambda / (lambda + 0)
    with pytest.raises(SectorError):
        sector_sweep(op, 0.3, [1.0], [math.pi - 0.2])


def test_sector_sweep_bmo_finite_and_stable():
    # Near the sector edge the constants grow with N (the lattice angle does);
    # resolution stability is checked on the closed right half-plane.
    sups = {}
    for N in (16, 32):
        op = make_op("BMO_LOG", 2, N)
        th1 = op.theta0_estimate + 0.2 * (math.pi / 2 - op.theta0_estimate)
        with pytest.raises(SectorError):
            sector_sweep(op, op.theta0_estimate * 0.5, [1.0], [0.0])
        edge = sector_sweep(op, th1, [1.0, 1e4], [-(math.pi - th1), math.pi - th1])
        assert np.isfinite(edge.sup_resolvent) and np.isfinite(edge.sup_gradient)
        rep = sector_sweep(op, th1, [1.0, 100.0, 1e4], np.linspace(-math.pi / 2, math.pi / 2, 5))
        sups[N] = rep.sup_gradient
    assert abs(sups[32] / sups[16] - 1) <= 0.5


def test_power_kernel_symmetric_and_decaying():
    op = make_op("IDENTITY", 1, 64)
    assert default_power(1) == 1 and default_power(2) == 1
    G, fit = resolvent_power_kernel(op, 1.0, 1)
    assert np.abs(G - G.T).max() <= 1e-10 * np.abs(G).max()
    for lam in (1.0, 4.0, 16.0):
        _, fit = resolvent_power_kernel(op, lam)
        assert isinstance(fit, DecayFit)
        assert fit.rate > 0 and fit.r_squared >= 0.9


def test_power_kernel_matches_dense_inverse_power():
    op = make_op("BMO_LOG", 2, 8)
    lam = 2.0 + 1j
    G, _ = resolvent_power_kernel(op, lam, 1, near=0.0)
    R = np.linalg.inv(op.dense() + lam * np.eye(op.size))
    assert np.allclose(G, R @ R / op.grid.cell_volume, rtol=1e-10, atol=1e-12 * np.abs(G).max())


def test_power_kernel_far_field_monotone():
    op = make_op("BMO_LOG", 2, 16)
    G, _ = resolvent_power_kernel(op, 4.0)
    g = op.grid
    dist = g.distance_matrix()
    bins = np.unique(np.round(dist / g.h, 6))
    bins = bins[bins >= 3]
    med = [np.median(np.abs(G[np.isclose(dist / g.h, b)])) for b in bins]
    ok = np.mean(np.diff(med) <= 1e-12 * max(med))
    assert ok >= 0.95 or len(med) < 3 or np.all(np.diff(med)[np.diff(med) > 0] < 0.05 * max(med))


def test_conjugation_kernel_identity():
    op = make_op("BMO_LOG", 2, 16)
    g = op.grid
    x = g.centers()
    w = conjugation_weight(Field(g, 0.5 * np.sin(2 * np.pi * x[:, 0]) * np.cos(2 * np.pi * x[:, 1])))
    assert conjugation_residual(op, w, 2.0) <= 1e-10
    assert conjugation_residual(op, w, 1 + 3j) <= 1e-10


def test_fit_decay_recovers_rate():
    x = np.linspace(0, 5, 40)
    fit = fit_decay(x, 3.0 * np.exp(-1.7 * x))
    assert fit.rate == pytest.approx(1.7) and fit.log_amplitude == pytest.approx(math.log(3.0))
    assert fit.r_squared == pytest.approx(1.0)
    with pytest.raises(ValueError):
        fit_decay([1.0, 1.0], [1.0, 2.0])
