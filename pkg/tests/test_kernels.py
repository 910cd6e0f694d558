import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from katolab import _kernels as K
from katolab._accel import use_numba

shapes = st.tuples(st.sampled_from([1, 4, 8]), st.sampled_from([4, 8, 16]))


@settings(max_examples=25, deadline=None)
@given(shape=shapes, sy=st.integers(1, 4), sx=st.integers(1, 4), seed=st.integers(0, 2**31))
def test_cube_oscillation_paths_agree(shape, sy, sx, seed):
    f = np.random.default_rng(seed).standard_normal(shape)
    sy = min(sy, shape[0])
    a = K.cube_oscillation_max_numba(f, sy, sx)
    b = K.cube_oscillation_max_numpy(f, sy, sx)
    assert abs(a - b) <= 1e-12 * max(1.0, abs(b))


@settings(max_examples=25, deadline=None)
@given(shape=shapes, r=st.integers(0, 3), seed=st.integers(0, 2**31))
def test_ball_maxima_paths_agree(shape, r, seed):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    oy, ox = np.mgrid[-r : r + 1, -r : r + 1]
    inside = oy**2 + ox**2 <= r * r
    if shape[0] == 1:
        inside &= oy == 0
    dy, dx = oy[inside], ox[inside]
    a = K.ball_maxima_numba(f, dy, dx)
    b = K.ball_maxima_numpy(f, dy, dx)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(shape=shapes, seed=st.integers(0, 2**31), axes=st.sampled_from([(0,), (1,), (0, 1)]))
def test_smooth_paths_agree(shape, seed, axes):
    f = np.random.default_rng(seed).standard_normal(shape)
    w = np.array([0.1, 0.2, 0.4, 0.2, 0.1])
    assert np.allclose(K.smooth_numba(f, w, axes), K.smooth_numpy(f, w, axes), rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("n", [1, 5, 40])
def test_sqrt_upper_paths_agree_and_square(n):
    rng = np.random.default_rng(n)
    t = np.triu(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) * 0.2
    t[np.diag_indices(n)] = 1 + rng.random(n) + 0.3j * rng.standard_normal(n)
    a, b = K.sqrt_upper_numba(t), K.sqrt_upper_numpy(t)
    assert np.allclose(a, b, rtol=1e-11, atol=1e-12)
    assert np.linalg.norm(a @ a - t) <= 1e-11 * np.linalg.norm(t)
    assert np.allclose(np.tril(a, -1), 0)


def test_dispatch_follows_flag():
    f = np.random.default_rng(0).standard_normal((8, 8))
    ref = K.cube_oscillation_max_numpy(f, 2, 2)
    assert abs(K.cube_oscillation_max(f, 2, 2) - ref) <= 1e-12
    code = "from katolab._accel import use_numba; print(use_numba())"
    env = dict(os.environ, KATOLAB_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "False"
    if use_numba():
        env["KATOLAB_NUMBA"] = "1"
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
        assert out.stdout.strip() == "True"
