"""Pure-numpy path engines.

Two roles:

* fallback backend for the compiled family kernels in :mod:`._kernels`
  (``scalar_paths_np``, ``linear_paths_np``) — same coefficient families,
  same status codes, and the identical draw sequence
  ``j = step*m*substeps + component*substeps + s``, so a fixed seed gives
  the same path law on either backend (bitwise-equal except for possible
  last-ulp differences in the inverse-CDF tail branch);
* generic engine (``generic_paths_np``) that integrates an arbitrary
  DSL-defined system through callables built from its expressions.

All engines vectorise over a block of paths ``lo..hi-1`` and compact the
active set as paths terminate.  Expression failures inside the generic
engine surface as non-finite states and are recorded as escapes, matching
the overflow-as-escape policy of the compiled kernels.
"""

import numpy as np

from ._kernels import STATUS_ESCAPED, STATUS_HIT
from ._rng import normal_np, path_keys_np


def _finish(outputs, idx, st, tau, xv):
    status, t_end, x_end = outputs
    status[idx] = st
    t_end[idx] = tau
    x_end[idx] = xv


def scalar_paths_np(seed, lo, hi, offset, x0, dt, n_steps, substeps, params,
                    dom_lo, dom_hi, r_escape, status, t_end, x_end):
    """Vectorised counterpart of :func:`._kernels.scalar_paths`."""
    a1, a3, a5, d0, d2, d4 = params
    sub = int(substeps)
    root = np.sqrt(dt / sub)
    keys = path_keys_np(seed, lo + offset, hi + offset)
    n = hi - lo

    outputs = (status[lo:hi], t_end[lo:hi], x_end[lo:hi])
    outputs[0][:] = 0
    outputs[1][:] = 0.0
    outputs[2][:] = x0

    d_start = max(dom_lo - x0, x0 - dom_hi)
    if d_start <= 0.0:
        outputs[0][:] = STATUS_HIT
        return

    idx = np.arange(n)
    x = np.full(n, float(x0))
    d_old = np.full(n, d_start)

    for k in range(int(n_steps)):
        if idx.size == 0:
            break
        z = np.zeros(idx.size)
        base = k * sub
        for s in range(sub):
            z += normal_np(keys[idx], base + s)
        xx = x * x
        drift = x * (a1 + xx * (a3 + xx * a5))
        var = np.maximum(d0 + xx * (d2 + xx * d4), 0.0)
        with np.errstate(all="ignore"):
            x_new = x + drift * dt + np.sqrt(var) * root * z

        bad = ~np.isfinite(x_new)
        d_new = np.where(bad, 1.0, np.maximum(dom_lo - x_new, x_new - dom_hi))
        hit = ~bad & (d_new <= 0.0)
        esc = bad | (~hit & (np.abs(x_new) >= r_escape))

        if np.any(hit):
            theta = d_old[hit] / (d_old[hit] - d_new[hit])
            _finish(outputs, idx[hit], STATUS_HIT,
                    (k + theta) * dt, x_new[hit])
        if np.any(esc):
            _finish(outputs, idx[esc], STATUS_ESCAPED,
                    (k + 1.0) * dt, np.where(bad[esc], x[esc], x_new[esc]))

        keep = ~(hit | esc)
        if not np.all(keep):
            idx = idx[keep]
            x = x_new[keep]
            d_old = d_new[keep]
        else:
            x = x_new
            d_old = d_new

    if idx.size:
        outputs[2][idx] = x


def linear_paths_np(seed, lo, hi, offset, x0, dt, n_steps, substeps, G, C,
                    delta, r_escape, status, t_end, x_end):
    """Vectorised counterpart of :func:`._kernels.linear_paths`."""
    m = C.shape[1]
    sub = int(substeps)
    root = np.sqrt(dt / sub)
    keys = path_keys_np(seed, lo + offset, hi + offset)
    n = hi - lo

    outputs = (status[lo:hi], t_end[lo:hi], x_end[lo:hi])
    outputs[0][:] = 0
    outputs[1][:] = 0.0
    outputs[2][:] = x0

    d_start = np.sqrt(np.dot(x0, x0)) - delta
    if d_start <= 0.0:
        outputs[0][:] = STATUS_HIT
        return

    idx = np.arange(n)
    x = np.tile(np.asarray(x0, dtype=float), (n, 1))
    d_old = np.full(n, d_start)
    Gt = np.asarray(G, dtype=float).T
    Ct = np.asarray(C, dtype=float).T

    for k in range(int(n_steps)):
        if idx.size == 0:
            break
        dw = np.empty((idx.size, m))
        for c in range(m):
            z = np.zeros(idx.size)
            base = (k * m + c) * sub
            for s in range(sub):
                z += normal_np(keys[idx], base + s)
            dw[:, c] = root * z
        with np.errstate(all="ignore"):
            x_new = x + (x @ Gt) * dt + dw @ Ct

        bad = ~np.all(np.isfinite(x_new), axis=1)
        r = np.where(bad, np.inf, np.sqrt(np.sum(np.where(bad[:, None], 0.0, x_new) ** 2, axis=1)))
        d_new = r - delta
        hit = ~bad & (d_new <= 0.0)
        esc = bad | (~hit & (r >= r_escape))

        if np.any(hit):
            theta = d_old[hit] / (d_old[hit] - d_new[hit])
            _finish(outputs, idx[hit], STATUS_HIT, (k + theta) * dt, x_new[hit])
        if np.any(esc):
            _finish(outputs, idx[esc], STATUS_ESCAPED, (k + 1.0) * dt,
                    np.where(bad[esc, None], x[esc], x_new[esc]))

        keep = ~(hit | esc)
        idx = idx[keep]
        x = x_new[keep]
        d_old = d_new[keep]

    if idx.size:
        outputs[2][idx] = x


def generic_paths_np(seed, lo, hi, offset, x0, dt, n_steps, substeps, drift_fn,
                     diff_fn, dist_fn, r_escape, status, t_end, x_end):
    """Integrate an arbitrary system given as array callables.

    ``drift_fn(t, X) -> (k, n)``, ``diff_fn(t, X) -> (k, n, m)`` and
    ``dist_fn(X) -> (k,)`` operate on blocks of states ``X`` with shape
    ``(k, n)``; ``dist_fn`` is the domain's boundary distance (positive
    outside the target set, <= 0 on hit).
    """
    x0 = np.asarray(x0, dtype=float)
    sub = int(substeps)
    root = np.sqrt(dt / sub)
    keys = path_keys_np(seed, lo + offset, hi + offset)
    n = hi - lo

    outputs = (status[lo:hi], t_end[lo:hi], x_end[lo:hi])
    outputs[0][:] = 0
    outputs[1][:] = 0.0
    outputs[2][:] = x0

    d_start = float(dist_fn(x0[None, :])[0])
    if d_start <= 0.0:
        outputs[0][:] = STATUS_HIT
        return

    m = np.asarray(diff_fn(0.0, x0[None, :])).shape[2]
    idx = np.arange(n)
    x = np.tile(x0, (n, 1))
    d_old = np.full(n, d_start)

    for k in range(int(n_steps)):
        if idx.size == 0:
            break
        t = k * dt
        dw = np.empty((idx.size, m))
        for c in range(m):
            z = np.zeros(idx.size)
            base = (k * m + c) * sub
            for s in range(sub):
                z += normal_np(keys[idx], base + s)
            dw[:, c] = root * z
        with np.errstate(all="ignore"):
            f = np.asarray(drift_fn(t, x), dtype=float)
            sig = np.asarray(diff_fn(t, x), dtype=float)
            x_new = x + f * dt + np.einsum("knm,km->kn", sig, dw)

        bad = ~np.all(np.isfinite(x_new), axis=1)
        safe = np.where(bad[:, None], 0.0, x_new)
        with np.errstate(all="ignore"):
            d_new = np.where(bad, 1.0, np.asarray(dist_fn(safe), dtype=float))
        bad |= ~np.isfinite(d_new)
        d_new = np.where(bad, 1.0, d_new)
        r = np.sqrt(np.sum(safe ** 2, axis=1))
        hit = ~bad & (d_new <= 0.0)
        esc = bad | (~hit & (r >= r_escape))

        if np.any(hit):
            theta = d_old[hit] / (d_old[hit] - d_new[hit])
            _finish(outputs, idx[hit], STATUS_HIT, (k + theta) * dt, x_new[hit])
        if np.any(esc):
            _finish(outputs, idx[esc], STATUS_ESCAPED, (k + 1.0) * dt,
                    np.where(bad[esc, None], x[esc], x_new[esc]))

        keep = ~(hit | esc)
        idx = idx[keep]
        x = x_new[keep]
        d_old = d_new[keep]

    if idx.size:
        outputs[2][idx] = x
