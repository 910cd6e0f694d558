"""Hot inner loops, each with a numba path and a pure-numpy path.

Every public function here dispatches on :func:`katolab._accel.use_numba`.
Both paths are kept importable (``*_numba`` / ``*_numpy``) so tests and
``benchmarks/bench_kernels.py`` can compare them directly.

Fields are passed as 2-D arrays; one-dimensional grids use shape ``(1, N)``.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from ._accel import njit, use_numba

# --------------------------------------------------------------------------
# mean oscillation over periodic boxes (BMO seminorm)
# --------------------------------------------------------------------------


@njit(cache=True)
def _cube_oscillation_max_nb(f, sy, sx):
    ny, nx = f.shape
    inv = 1.0 / (sy * sx)
    best = 0.0
    for i in range(ny):
        for j in range(nx):
            s = 0.0
            for a in range(sy):
                ii = (i + a) % ny
                for b in range(sx):
                    s += f[ii, (j + b) % nx]
            m = s * inv
            o = 0.0
            for a in range(sy):
                ii = (i + a) % ny
                for b in range(sx):
                    o += abs(f[ii, (j + b) % nx] - m)
            o *= inv
            if o > best:
                best = o
    return best


def cube_oscillation_max_numba(f, sy, sx):
    return float(_cube_oscillation_max_nb(np.ascontiguousarray(f, dtype=np.float64), sy, sx))


def cube_oscillation_max_numpy(f, sy, sx):
    f = np.asarray(f, dtype=np.float64)
    shifts = [(a, b) for a in range(sy) for b in range(sx)]
    total = np.zeros_like(f)
    for a, b in shifts:
        total += np.roll(f, (-a, -b), axis=(0, 1))
    mean = total / len(shifts)
    osc = np.zeros_like(f)
    for a, b in shifts:
        osc += np.abs(np.roll(f, (-a, -b), axis=(0, 1)) - mean)
    return float(osc.max() / len(shifts))


def cube_oscillation_max(f, sy, sx):
    """Largest mean oscillation of ``f`` over all ``sy x sx`` periodic boxes."""
    if use_numba():
        return cube_oscillation_max_numba(f, sy, sx)
    return cube_oscillation_max_numpy(f, sy, sx)


# --------------------------------------------------------------------------
# local L2 mass and oscillation over lattice balls (Morrey / Campanato)
# --------------------------------------------------------------------------


@njit(cache=True)
def _ball_maxima_nb(f, dy, dx):
    ny, nx = f.shape
    k = dy.shape[0]
    best_mass = 0.0
    best_osc = 0.0
    for i in range(ny):
        for j in range(nx):
            mass = 0.0
            s = 0.0 + 0.0j
            for q in range(k):
                v = f[(i + dy[q]) % ny, (j + dx[q]) % nx]
                mass += v.real * v.real + v.imag * v.imag
                s += v
            m = s / k
            osc = 0.0
            for q in range(k):
                w = f[(i + dy[q]) % ny, (j + dx[q]) % nx] - m
                osc += w.real * w.real + w.imag * w.imag
            if mass > best_mass:
                best_mass = mass
            if osc > best_osc:
                best_osc = osc
    return best_mass, best_osc


def ball_maxima_numba(f, dy, dx):
    f = np.ascontiguousarray(f, dtype=np.complex128)
    m, o = _ball_maxima_nb(f, np.asarray(dy, np.int64), np.asarray(dx, np.int64))
    return float(m), float(o)


def ball_maxima_numpy(f, dy, dx):
    f = np.asarray(f, dtype=np.complex128)
    total = np.zeros_like(f)
    mass = np.zeros(f.shape)
    for a, b in zip(dy, dx):
        g = np.roll(f, (-int(a), -int(b)), axis=(0, 1))
        total += g
        mass += np.abs(g) ** 2
    mean = total / len(dy)
    osc = np.zeros(f.shape)
    for a, b in zip(dy, dx):
        osc += np.abs(np.roll(f, (-int(a), -int(b)), axis=(0, 1)) - mean) ** 2
    return float(mass.max()), float(osc.max())


def ball_maxima(f, dy, dx):
    """Max over centers of ``sum |f|^2`` and of ``sum |f - mean|^2`` on a ball.

    ``dy, dx`` list the integer offsets making up the ball around its center.
    """
    if use_numba():
        return ball_maxima_numba(f, dy, dx)
    return ball_maxima_numpy(f, dy, dx)


# --------------------------------------------------------------------------
# periodic separable smoothing with a symmetric 1-D weight vector
# --------------------------------------------------------------------------


@njit(cache=True)
def _smooth_axis_nb(f, w, axis):
    ny, nx = f.shape
    r = (w.shape[0] - 1) // 2
    out = np.zeros_like(f)
    for i in range(ny):
        for j in range(nx):
            acc = 0.0
            for q in range(w.shape[0]):
                k = q - r
                if axis == 0:
                    acc += w[q] * f[(i - k) % ny, j]
                else:
                    acc += w[q] * f[i, (j - k) % nx]
            out[i, j] = acc
    return out


def smooth_numba(f, w, axes):
    g = np.ascontiguousarray(f, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    for ax in axes:
        g = _smooth_axis_nb(g, w, ax)
    return g


def smooth_numpy(f, w, axes):
    g = np.asarray(f, dtype=np.float64)
    r = (len(w) - 1) // 2
    for ax in axes:
        acc = np.zeros_like(g)
        for q, wq in enumerate(w):
            acc += wq * np.roll(g, q - r, axis=ax)
        g = acc
    return g


def smooth(f, w, axes):
    """Periodic correlation of a real 2-D array with ``w`` along each of ``axes``."""
    if use_numba():
        return smooth_numba(f, w, axes)
    return smooth_numpy(f, w, axes)


# --------------------------------------------------------------------------
# square root of an upper triangular matrix (Schur recurrence)
# --------------------------------------------------------------------------


@njit(cache=True)
def _sqrt_upper_nb(t):
    n = t.shape[0]
    u = np.zeros_like(t)
    for j in range(n):
        u[j, j] = np.sqrt(t[j, j])
        for i in range(j - 1, -1, -1):
            s = t[i, j]
            for k in range(i + 1, j):
                s -= u[i, k] * u[k, j]
            u[i, j] = s / (u[i, i] + u[j, j])
    return u


def sqrt_upper_numba(t):
    return _sqrt_upper_nb(np.ascontiguousarray(t, dtype=np.complex128))


def sqrt_upper_numpy(t):
    t = np.asarray(t, dtype=np.complex128)
    n = t.shape[0]
    u = np.zeros_like(t)
    diag = np.sqrt(np.diag(t))
    u[np.arange(n), np.arange(n)] = diag
    for j in range(1, n):
        block = u[:j, :j].copy()
        block[np.arange(j), np.arange(j)] += diag[j]
        u[:j, j] = solve_triangular(block, t[:j, j], lower=False)
    return u


def sqrt_upper(t):
    """Principal square root of an upper triangular matrix with no eigenvalue on (-inf, 0]."""
    if use_numba():
        return sqrt_upper_numba(t)
    return sqrt_upper_numpy(t)
