"""Compiled Euler-Maruyama path kernels (numba backend).

One kernel per coefficient family, parameterised by a small float vector so
that a single compilation covers every catalog system of that family:

* scalar family: 1-D systems with odd-polynomial drift and even-polynomial
  squared diffusion,  f(x) = a1*x + a3*x^3 + a5*x^5,
  sigma(x)^2 = d0 + d2*x^2 + d4*x^4.  Covers the built-in 1-D catalog
  (geometric Brownian motion with cubic noise, Ornstein-Uhlenbeck,
  polynomial drift with unit noise) and the 1-D closed-loop examples.
* linear family: n-D linear drift G x with constant diffusion matrix C.

Noise draw ``j`` of path ``i`` is ``normal(key_i, j)`` from the counter-based
stream in :mod:`._rng`; draws are consumed in order
``j = step*m*substeps + component*substeps + s``, which the numpy backend
reproduces exactly.  ``substeps > 1`` sums that many Gaussians per increment
(same law; used to couple runs across dt refinements).

Status codes: 1 = hit, 2 = censored at T_max, 3 = escaped, 4 = step limit.
"""

import numpy as np

from ._jit import njit
from ._rng import normal_at, path_key

STATUS_HIT = 1
STATUS_CENSORED = 2
STATUS_ESCAPED = 3
STATUS_STEP_LIMIT = 4


@njit(cache=True, nogil=True)
def scalar_paths(seed, lo, hi, offset, x0, dt, n_steps, substeps, params,
                 dom_lo, dom_hi, r_escape, status, t_end, x_end):
    """Simulate paths lo..hi-1 of the scalar family until hit/censor/escape.

    ``params`` is (a1, a3, a5, d0, d2, d4); the target U is the interval
    [dom_lo, dom_hi] and max(dom_lo - x, x - dom_hi) is the distance to it
    (positive outside, <= 0 on hit).  Path i draws from RNG substream
    ``i + offset``.
    """
    a1 = params[0]; a3 = params[1]; a5 = params[2]
    d0 = params[3]; d2 = params[4]; d4 = params[5]
    sub = substeps
    root = np.sqrt(dt / sub)
    useed = np.uint64(seed)

    for i in range(lo, hi):
        key = path_key(useed, np.uint64(i + offset))

        x = x0
        d_old = max(dom_lo - x, x - dom_hi)
        if d_old <= 0.0:
            status[i] = STATUS_HIT
            t_end[i] = 0.0
            x_end[i] = x
            continue

        st = 0
        tau = 0.0
        j = np.uint64(0)
        for k in range(n_steps):
            z = 0.0
            for _ in range(sub):
                z += normal_at(key, j)
                j += np.uint64(1)
            xx = x * x
            drift = x * (a1 + xx * (a3 + xx * a5))
            var = d0 + xx * (d2 + xx * d4)
            if var < 0.0:
                var = 0.0
            x_new = x + drift * dt + np.sqrt(var) * root * z
            if not np.isfinite(x_new):
                st = STATUS_ESCAPED
                tau = (k + 1.0) * dt
                break
            d_new = max(dom_lo - x_new, x_new - dom_hi)
            if d_new <= 0.0:
                theta = d_old / (d_old - d_new)
                st = STATUS_HIT
                tau = (k + theta) * dt
                x = x_new
                break
            if abs(x_new) >= r_escape:
                st = STATUS_ESCAPED
                tau = (k + 1.0) * dt
                x = x_new
                break
            x = x_new
            d_old = d_new
        status[i] = st
        t_end[i] = tau
        x_end[i] = x


@njit(cache=True, nogil=True)
def linear_paths(seed, lo, hi, offset, x0, dt, n_steps, substeps, G, C,
                 delta, r_escape, status, t_end, x_end):
    """n-D linear drift G x, constant diffusion C; the target U is the
    closed ball of radius delta.  Path i draws from RNG substream
    ``i + offset``."""
    n = G.shape[0]
    m = C.shape[1]
    sub = substeps
    root = np.sqrt(dt / sub)
    useed = np.uint64(seed)

    x = np.empty(n)
    x_new = np.empty(n)
    dw = np.empty(m)

    for i in range(lo, hi):
        key = path_key(useed, np.uint64(i + offset))

        for c in range(n):
            x[c] = x0[c]
        r = 0.0
        for c in range(n):
            r += x[c] * x[c]
        d_old = np.sqrt(r) - delta
        if d_old <= 0.0:
            status[i] = STATUS_HIT
            t_end[i] = 0.0
            for c in range(n):
                x_end[i, c] = x[c]
            continue

        st = 0
        tau = 0.0
        j = np.uint64(0)
        for k in range(n_steps):
            for c in range(m):
                z = 0.0
                for _ in range(sub):
                    z += normal_at(key, j)
                    j += np.uint64(1)
                dw[c] = root * z
            ok = True
            for a in range(n):
                acc = x[a]
                for b in range(n):
                    acc += G[a, b] * x[b] * dt
                for b in range(m):
                    acc += C[a, b] * dw[b]
                x_new[a] = acc
                if not np.isfinite(acc):
                    ok = False
            if not ok:
                st = STATUS_ESCAPED
                tau = (k + 1.0) * dt
                break
            r = 0.0
            for c in range(n):
                r += x_new[c] * x_new[c]
            r = np.sqrt(r)
            d_new = r - delta
            if d_new <= 0.0:
                theta = d_old / (d_old - d_new)
                st = STATUS_HIT
                tau = (k + theta) * dt
                for c in range(n):
                    x[c] = x_new[c]
                break
            if r >= r_escape:
                st = STATUS_ESCAPED
                tau = (k + 1.0) * dt
                for c in range(n):
                    x[c] = x_new[c]
                break
            for c in range(n):
                x[c] = x_new[c]
            d_old = d_new
        status[i] = st
        t_end[i] = tau
        for c in range(n):
            x_end[i, c] = x[c]
