"""Counter-based random number generation for reproducible Monte Carlo.

Every uniform draw is a pure function of ``(master seed, path index, draw
index)``, so simulations are bit-for-bit reproducible no matter how paths are
chunked over worker threads, and any path can be regenerated in isolation.

Construction (all arithmetic mod 2**64):

* ``mix64`` is the SplitMix64 finaliser (shift-xor / multiply chain).
* path key:    ``key_i = mix64(seed + (i+1)*GOLDEN)``
* draw value:  ``u64(i, j) = mix64(key_i ^ mix64((j+1)*GAMMA))``
* uniform:     top 53 bits mapped into the open interval (0, 1)
* normal:      inverse CDF by Acklam's rational approximation (peak relative
  error ~1.15e-9, far below Monte Carlo resolution at any feasible path count)

The same integer recipe is implemented three times: scalar Python (reference),
scalar numba (hot kernels) and vectorised numpy (fallback backend).  The
scalar and vectorised paths agree exactly on the integer stream and on the
central branch of the inverse CDF; trajectories may differ by float rounding
in the ~2.4% tail branch, so cross-backend equality is asserted statistically,
not bitwise.
"""

import numpy as np

from ._jit import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
GAMMA = np.uint64(0xD1B54A32D192ED03)

_MASK = (1 << 64) - 1

# Acklam's inverse normal CDF coefficients.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def mix64_py(z):
    """SplitMix64 finaliser on a Python int (reference implementation)."""
    z &= _MASK
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK
    z ^= z >> 31
    return z


def path_key_py(seed, i):
    return mix64_py((seed + (i + 1) * 0x9E3779B97F4A7C15) & _MASK)


def u64_py(key, j):
    return mix64_py(key ^ mix64_py(((j + 1) * 0xD1B54A32D192ED03) & _MASK))


def uniform_py(key, j):
    return ((u64_py(key, j) >> 11) + 0.5) * 2.0 ** -53


def derive_seed(seed, *indices):
    """Fold integer indices into a 64-bit sub-seed (for named experiments)."""
    k = mix64_py(seed)
    for idx in indices:
        k = mix64_py((k ^ mix64_py((idx + 1) * 0x9E3779B97F4A7C15)) + 0xD1B54A32D192ED03)
    return k


@njit(cache=True, nogil=True)
def mix64(z):
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(0xBF58476D1CE4E5B9)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return z


@njit(cache=True, nogil=True)
def path_key(seed, i):
    return mix64(seed + (i + np.uint64(1)) * GOLDEN)


@njit(cache=True, nogil=True)
def uniform_at(key, j):
    u = mix64(key ^ mix64((j + np.uint64(1)) * GAMMA))
    return (np.float64(u >> np.uint64(11)) + 0.5) * 2.0 ** -53


@njit(cache=True, nogil=True)
def norm_inv_cdf(p):
    """Acklam's inverse of the standard normal CDF, scalar."""
    if p < _P_LOW:
        q = np.sqrt(-2.0 * np.log(p))
        return ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
                / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    if p > 1.0 - _P_LOW:
        q = np.sqrt(-2.0 * np.log(1.0 - p))
        return -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
                 / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    q = p - 0.5
    r = q * q
    return (q * (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5])
            / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))


@njit(cache=True, nogil=True)
def normal_at(key, j):
    return norm_inv_cdf(uniform_at(key, j))


def path_keys_np(seed, lo, hi):
    """Vectorised path keys for path indices lo..hi-1 (numpy backend)."""
    with np.errstate(over="ignore"):
        idx = np.arange(lo + 1, hi + 1, dtype=np.uint64)
        return mix64_np(np.uint64(seed) + idx * GOLDEN)


def mix64_np(z):
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(0xBF58476D1CE4E5B9)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return z


def uniform_np(keys, j):
    """Uniform draw j for an array of path keys."""
    with np.errstate(over="ignore"):
        u = mix64_np(keys ^ mix64_np((np.uint64(j) + np.uint64(1)) * GAMMA))
    return ((u >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def norm_inv_cdf_np(p):
    """Vectorised Acklam inverse normal CDF."""
    p = np.asarray(p, dtype=np.float64)
    x = np.empty_like(p)

    lo = p < _P_LOW
    hi = p > 1.0 - _P_LOW
    mid = ~(lo | hi)

    q = p[mid] - 0.5
    r = q * q
    x[mid] = (q * (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5])
              / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))

    for sel, tail_p, sign in ((lo, p[lo], 1.0), (hi, 1.0 - p[hi], -1.0)):
        if np.any(sel):
            q = np.sqrt(-2.0 * np.log(tail_p))
            x[sel] = sign * ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
                             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    return x


def normal_np(keys, j):
    return norm_inv_cdf_np(uniform_np(keys, j))
