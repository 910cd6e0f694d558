import functools

import numpy as np
import pytest

from katolab.coefficients import make_coefficients
from katolab.lattice import Field, make_grid
from katolab.operator import assemble, sector_angle


@functools.lru_cache(maxsize=None)
def _op(kind, dim, N, kappa, lambda0):
    g = make_grid(dim, N)
    op = assemble(make_coefficients(kind, g, lambda0=lambda0, kappa=kappa))
    sector_angle(op)
    return op


def make_op(kind="IDENTITY", dim=1, N=16, kappa=0.5, lambda0=1.0):
    """Assembled operator with theta0 filled in; cached, treat as read-only."""
    return _op(kind, dim, N, kappa, lambda0)


def circulant_eigs(N, h):
    """Eigenvalues (2/h)^2 sin^2(pi k / N) of the periodic second difference, k = 0..N-1."""
    k = np.arange(N)
    return (2 / h) ** 2 * np.sin(np.pi * k / N) ** 2


def fft_apply(g, symbol, x):
    """Apply a function of the periodic lattice Laplacian through the FFT (independent oracle)."""
    mu = circulant_eigs(g.N, g.h)
    if g.dim == 2:
        mu = mu[:, None] + mu[None, :]
    a = np.fft.fftn(np.asarray(x).reshape(g.shape))
    return np.fft.ifftn(symbol(mu) * a).reshape(-1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def rand_field(g, rng, complex_=False, vector=False):
    shape = (g.dim, g.size) if vector else (g.size,)
    v = rng.standard_normal(shape)
    if complex_:
        v = v + 1j * rng.standard_normal(shape)
    return Field(g, v)
