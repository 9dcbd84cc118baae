"""Stochastic systems, target domains, and Euler-Maruyama path simulation.

An :class:`SdeSystem` holds drift ``f(t, x)`` and diffusion ``sigma(t, x)``
as DSL expressions (see :mod:`.expr`); catalog constructors build the
common study systems.  A :class:`Domain` is the *target* set ``U``: paths
start outside it and the residence time tau is the first time the boundary
distance reaches zero.

Simulation of a batch of paths is dispatched to the fastest applicable
engine:

* compiled family kernels (:mod:`._kernels`) when the coefficients fit a
  supported family — 1-D odd-polynomial drift / even-polynomial squared
  diffusion with an interval target, or n-D linear drift / constant
  diffusion with a ball target — detected by numerically probing the
  expressions and verifying the fit at random points;
* the equivalent vectorised numpy engines (:mod:`._engines`) when numba is
  unavailable or ``RESIDENCE_LAB_BACKEND=numpy``;
* a generic vectorised engine that evaluates the DSL expressions on path
  blocks, for everything else.

Every noise increment is a pure function of ``(seed, path index, draw
index)``, so results are bit-identical for a fixed configuration no matter
how paths are chunked over worker threads.  Batch engines map non-finite
states (and expression domain violations) to ``escaped`` status;
the single-path :func:`simulate_until_hit` raises on genuine domain errors
and records only overflow as escape.
"""

import csv
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _engines, _kernels
from ._jit import HAVE_NUMBA, default_backend
from ._kernels import (STATUS_CENSORED, STATUS_ESCAPED, STATUS_HIT,
                       STATUS_STEP_LIMIT)
from ._rng import norm_inv_cdf, path_key_py, uniform_py
from .expr import EvalDomainError, ExprError, eval_expr, parse, to_source

__all__ = [
    "Domain", "SdeSystem", "PathOutcome", "SimulationResult",
    "STATUS_HIT", "STATUS_CENSORED", "STATUS_ESCAPED", "STATUS_STEP_LIMIT",
    "STATUS_NAMES", "DEFAULT_SEED",
    "gbm_cubic", "ou", "poly_drift_unit_noise", "linear_system", "closed_loop",
    "em_step", "simulate_until_hit", "simulate_paths", "resolve_threads",
    "write_outcomes_csv", "write_path_csv",
]

DEFAULT_SEED = 1729

STATUS_NAMES = {
    STATUS_HIT: "hit",
    STATUS_CENSORED: "censored",
    STATUS_ESCAPED: "escaped",
    STATUS_STEP_LIMIT: "step_limit",
}


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------

class Domain:
    """Target set U with boundary-distance function.

    The boundary distance is positive strictly outside U (where paths
    reside), zero exactly on the boundary, negative inside; a path "hits"
    when its distance first reaches <= 0.

    Kinds: ``ball {delta}`` (closed ball, any dimension), ``interval
    {a, b}`` (1-D, must contain 0), ``shell {alpha, beta}`` (closed
    annulus), ``complement_ball {delta}`` (everything at radius >= delta;
    residence inside the open ball).
    """

    def __init__(self, kind, params):
        self.kind = kind
        self.params = tuple(float(p) for p in params)
        self._validate()

    @classmethod
    def ball(cls, delta):
        return cls("ball", (delta,))

    @classmethod
    def interval(cls, a, b):
        return cls("interval", (a, b))

    @classmethod
    def shell(cls, alpha, beta):
        return cls("shell", (alpha, beta))

    @classmethod
    def complement_ball(cls, delta):
        return cls("complement_ball", (delta,))

    def _validate(self):
        k, p = self.kind, self.params
        if k == "ball" or k == "complement_ball":
            if len(p) != 1 or p[0] <= 0:
                raise ValueError(f"{k} requires a radius > 0, got {p}")
        elif k == "interval":
            if len(p) != 2 or not (p[0] < 0.0 < p[1]):
                raise ValueError(
                    f"interval requires a < 0 < b (0 interior to U), got {p}")
        elif k == "shell":
            if len(p) != 2 or not (0 < p[0] < p[1]):
                raise ValueError(f"shell requires 0 < alpha < beta, got {p}")
        else:
            raise ValueError(f"unknown domain kind {k!r}")

    def __repr__(self):
        args = ", ".join(f"{p:g}" for p in self.params)
        return f"Domain.{self.kind}({args})"

    @property
    def inner_radius(self):
        """r = inf over the boundary of |x|."""
        k, p = self.kind, self.params
        if k == "ball" or k == "complement_ball":
            return p[0]
        if k == "interval":
            return min(abs(p[0]), abs(p[1]))
        return p[0]

    @property
    def bounding_radius(self):
        """Largest radius of the target set (its boundary radius when the
        target is unbounded, as for complement_ball)."""
        k, p = self.kind, self.params
        if k == "ball" or k == "complement_ball":
            return p[0]
        if k == "interval":
            return max(abs(p[0]), abs(p[1]))
        return p[1]

    def boundary_distance(self, x):
        """Signed distance for a single state vector."""
        return float(self.distance_many(np.atleast_2d(np.asarray(x, float)))[0])

    def contains(self, x):
        return self.boundary_distance(x) <= 0.0

    def distance_many(self, X):
        """Signed distances for a block of states, shape (k, n) -> (k,)."""
        k, p = self.kind, self.params
        if k == "interval":
            x = X[:, 0]
            return np.maximum(p[0] - x, x - p[1])
        r = np.sqrt(np.sum(X * X, axis=1))
        if k == "ball":
            return r - p[0]
        if k == "complement_ball":
            return p[0] - r
        return np.maximum(p[0] - r, r - p[1])

    def as_target_interval(self, dim):
        """(lo, hi) such that hitting means entering [lo, hi], when the
        1-D target is a single interval; None otherwise."""
        if dim != 1:
            return None
        if self.kind == "ball":
            return (-self.params[0], self.params[0])
        if self.kind == "interval":
            return self.params
        return None


# ---------------------------------------------------------------------------
# Systems
# ---------------------------------------------------------------------------

def _as_expr(e, dim, constants):
    if isinstance(e, str):
        return parse(e, dim=dim, constants=constants)
    return e


@dataclass(frozen=True)
class SdeSystem:
    """Ito system dX = f(t,X) dt + sigma(t,X) dB over R^n, m noise channels."""

    dim: int
    noise_dim: int
    drift: tuple
    diffusion: tuple
    constants: dict = field(default_factory=dict)
    tag: str = "generic"
    params: dict = field(default_factory=dict)

    @classmethod
    def from_expressions(cls, drift, diffusion, dim=None, constants=None,
                         tag="generic", params=None):
        """Build a system from expression strings (or parsed trees).

        ``drift`` is a sequence of n expressions; ``diffusion`` a sequence
        of n rows of m expressions (a single string is accepted for 1-D,
        single-noise systems).
        """
        constants = dict(constants or {})
        names = tuple(constants)
        if isinstance(drift, str):
            drift = [drift]
        if isinstance(diffusion, str):
            diffusion = [[diffusion]]
        elif diffusion and isinstance(diffusion[0], str):
            diffusion = [[d] for d in diffusion]
        n = dim if dim is not None else len(drift)
        if len(drift) != n:
            raise ValueError(f"need {n} drift expressions, got {len(drift)}")
        drift = tuple(_as_expr(e, n, names) for e in drift)
        if len(diffusion) != n:
            raise ValueError(f"need {n} diffusion rows, got {len(diffusion)}")
        m = len(diffusion[0])
        rows = []
        for row in diffusion:
            if len(row) != m:
                raise ValueError("ragged diffusion matrix")
            rows.append(tuple(_as_expr(e, n, names) for e in row))
        return cls(dim=n, noise_dim=m, drift=drift, diffusion=tuple(rows),
                   constants=constants, tag=tag, params=dict(params or {}))

    def drift_value(self, t, x):
        """f(t, x) as an ndarray of shape (n,). Raises on domain errors."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.array([float(eval_expr(e, t, x, self.constants))
                         for e in self.drift])

    def diffusion_value(self, t, x):
        """sigma(t, x) as an ndarray of shape (n, m)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.array([[float(eval_expr(e, t, x, self.constants))
                          for e in row] for row in self.diffusion])

    def diffusion_squared(self, t, x):
        """a(t, x) = sigma sigma^T, shape (n, n)."""
        s = self.diffusion_value(t, x)
        return s @ s.T

    def __repr__(self):
        f = ", ".join(to_source(e) for e in self.drift)
        return f"SdeSystem({self.tag}, n={self.dim}, m={self.noise_dim}, f=[{f}])"


def gbm_cubic(alpha1, alpha2, alpha3):
    """dX = alpha1*X dt + X*sqrt(alpha2 + alpha3*X^2) dB."""
    if alpha2 < 0 or alpha3 < 0:
        raise ValueError("alpha2, alpha3 must be nonnegative")
    return SdeSystem.from_expressions(
        "a1 * x1", "x1 * sqrt(a2 + a3 * x1^2)",
        constants={"a1": float(alpha1), "a2": float(alpha2), "a3": float(alpha3)},
        tag="gbm_cubic",
        params={"alpha1": float(alpha1), "alpha2": float(alpha2),
                "alpha3": float(alpha3)})


def ou(mu, sigma):
    """dX = mu*X dt + sigma dB (linear drift, additive noise)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return SdeSystem.from_expressions(
        "mu * x1", "sigma",
        constants={"mu": float(mu), "sigma": float(sigma)},
        tag="ou", params={"mu": float(mu), "sigma": float(sigma)})


def poly_drift_unit_noise(m):
    """dX = -X^m dt + dB with odd exponent m."""
    m = int(m)
    if m < 1 or m % 2 == 0:
        raise ValueError("exponent m must be odd and positive")
    return SdeSystem.from_expressions(
        f"-x1^{m}", "1", tag="poly_drift_unit_noise", params={"m": m})


def _matrix_exprs(M, kind, dim, constants=()):
    out = []
    for row in np.atleast_2d(np.asarray(M, dtype=float)):
        terms = None
        for j, coef in enumerate(row):
            coef = float(coef)
            if coef == 0.0:
                continue
            term = parse(f"{coef!r} * x{j + 1}", dim=dim)
            terms = term if terms is None else parse(
                f"{to_source(terms)} + {to_source(term)}", dim=dim)
        out.append(terms if terms is not None else parse("0"))
    return out


def linear_system(A, B, C):
    """Open-loop linear system dX = A X dt + C dB (control matrix B kept
    for synthesis; the uncontrolled drift is A X)."""
    A = np.asarray(A, dtype=float)
    B = None if B is None else np.asarray(B, dtype=float)
    C = np.asarray(C, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or C.shape[0] != n:
        raise ValueError("A must be n x n and C must have n rows")
    drift = _matrix_exprs(A, "drift", n)
    diffusion = [[parse(repr(float(C[i, j])), dim=n) for j in range(C.shape[1])]
                 for i in range(n)]
    return SdeSystem(dim=n, noise_dim=C.shape[1], drift=tuple(drift),
                     diffusion=tuple(tuple(r) for r in diffusion),
                     constants={}, tag="linear",
                     params={"A": A, "B": B, "C": C})


def closed_loop(base, feedback, input_matrix=None, tag="closed_loop"):
    """Apply state feedback u(t, x) to ``base``: drift becomes
    f(t,x) + B u(t,x); the diffusion is unchanged.

    ``feedback`` is a sequence of expression strings/trees (one per input
    channel); ``input_matrix`` defaults to the base system's B matrix, or
    identity when absent.
    """
    names = tuple(base.constants)
    if isinstance(feedback, str):
        feedback = [feedback]
    u = [_as_expr(e, base.dim, names) for e in feedback]
    B = input_matrix if input_matrix is not None else base.params.get("B")
    if B is None:
        if len(u) != base.dim:
            raise ValueError("feedback dimension must match state dimension "
                             "when no input matrix is given")
        B = np.eye(base.dim)
    B = np.asarray(B, dtype=float)
    if B.shape != (base.dim, len(u)):
        raise ValueError(f"input matrix must be {base.dim} x {len(u)}")

    new_drift = []
    for i, f_i in enumerate(base.drift):
        combined = f_i
        for j, u_j in enumerate(u):
            if B[i, j] == 0.0:
                continue
            term = u_j if B[i, j] == 1.0 else parse(
                f"{float(B[i, j])!r} * ({to_source(u_j)})", dim=base.dim,
                constants=names)
            combined = parse(f"{to_source(combined)} + {to_source(term)}",
                             dim=base.dim, constants=names)
        new_drift.append(combined)
    return SdeSystem(dim=base.dim, noise_dim=base.noise_dim,
                     drift=tuple(new_drift), diffusion=base.diffusion,
                     constants=dict(base.constants), tag=tag,
                     params={"base_tag": base.tag, "feedback": tuple(u),
                             **{k: v for k, v in base.params.items()}})


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------

def em_step(sys, t, x, dt, dW):
    """One Euler-Maruyama step: x + f(t,x) dt + sigma(t,x) dW.

    Expression domain errors propagate with (t, x) attached.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    dW = np.atleast_1d(np.asarray(dW, dtype=float))
    if dW.size != sys.noise_dim:
        raise ValueError(f"dW must have {sys.noise_dim} components")
    f = sys.drift_value(t, x)
    sig = sys.diffusion_value(t, x)
    return x + f * dt + sig @ dW


# ---------------------------------------------------------------------------
# Outcomes
# ---------------------------------------------------------------------------

@dataclass
class PathOutcome:
    """Terminal record of one simulated path.

    ``t_end`` is the hit time for status "hit", the horizon for
    "censored", the (clamped) termination time otherwise.  ``path`` is the
    optional thinned trajectory, rows ``[step, t, x1..xn]``.
    """

    path_id: int
    status: str
    t_end: float
    x_final: np.ndarray
    path: np.ndarray = None

    @property
    def tau(self):
        return self.t_end if self.status == "hit" else None


@dataclass
class SimulationResult:
    """Batch simulation output with the resolved run parameters."""

    status: np.ndarray          # int codes, see STATUS_NAMES
    t_end: np.ndarray
    x_final: np.ndarray         # (n_paths, dim)
    dt: float
    t_max: float
    seed: int
    r_escape: float
    substeps: int
    n_steps: int
    engine: str                 # scalar | linear | generic
    backend: str                # numba | numpy
    threads: int
    elapsed_s: float

    @property
    def n_paths(self):
        return self.status.size

    def counts(self):
        return {name: int(np.sum(self.status == code))
                for code, name in STATUS_NAMES.items()}

    def outcomes(self):
        """Iterate PathOutcome views (no per-path trajectory)."""
        for i in range(self.n_paths):
            yield PathOutcome(i, STATUS_NAMES[int(self.status[i])],
                              float(self.t_end[i]), self.x_final[i])


def resolve_threads(threads=None):
    """Worker count: argument, else RESIDENCE_LAB_THREADS, else CPU count."""
    if threads is None:
        env = os.environ.get("RESIDENCE_LAB_THREADS", "").strip()
        if env:
            threads = int(env)
    if threads is None:
        threads = os.cpu_count() or 1
    return max(1, int(threads))


def default_r_escape(domain, x0):
    """100 * max(|x0|, outer radius of the target set)."""
    norm = float(np.sqrt(np.sum(np.atleast_1d(np.asarray(x0, float)) ** 2)))
    return 100.0 * max(norm, domain.bounding_radius)


# ---------------------------------------------------------------------------
# Family detection (numeric probing, verified at random points)
# ---------------------------------------------------------------------------

_PROBE_X = np.array([0.6, 1.3, 2.1, 2.9, 3.7, 4.6])


def _probe_scalar(e, constants, xs, ts=(0.0,)):
    vals = np.array([float(eval_expr(e, ts[0], [xi], constants)) for xi in xs])
    for t in ts[1:]:
        again = np.array([float(eval_expr(e, t, [xi], constants)) for xi in xs])
        if not np.array_equal(vals, again):
            return None
    return vals


def fit_scalar_poly(sys):
    """(a1, a3, a5, d0, d2, d4) for f = a1 x + a3 x^3 + a5 x^5 and
    sigma^2 = d0 + d2 x^2 + d4 x^4, or None if the system does not match."""
    if sys.dim != 1 or sys.noise_dim != 1:
        return None
    try:
        fv = _probe_scalar(sys.drift[0], sys.constants, _PROBE_X,
                           ts=(0.0, 0.73, 1.91))
        gv = _probe_scalar(sys.diffusion[0][0], sys.constants, _PROBE_X,
                           ts=(0.0, 0.73, 1.91))
        if fv is None or gv is None:
            return None
        basis_f = np.stack([_PROBE_X, _PROBE_X ** 3, _PROBE_X ** 5], axis=1)
        cf, *_ = np.linalg.lstsq(basis_f, fv, rcond=None)
        basis_v = np.stack([np.ones_like(_PROBE_X), _PROBE_X ** 2,
                            _PROBE_X ** 4], axis=1)
        cv, *_ = np.linalg.lstsq(basis_v, gv ** 2, rcond=None)

        check = np.array([-4.9, -2.45, -1.1, -0.35, 0.15, 0.85, 1.65, 3.3, 5.2])
        for xi in check:
            f_true = float(eval_expr(sys.drift[0], 0.41, [xi], sys.constants))
            f_fit = xi * (cf[0] + xi * xi * (cf[1] + xi * xi * cf[2]))
            if abs(f_true - f_fit) > 1e-9 * (1.0 + abs(f_true)):
                return None
            g_true = float(eval_expr(sys.diffusion[0][0], 0.41, [xi],
                                     sys.constants)) ** 2
            g_fit = cv[0] + xi * xi * (cv[1] + xi * xi * cv[2])
            if abs(g_true - g_fit) > 1e-9 * (1.0 + abs(g_true)):
                return None
    except ExprError:
        return None
    return (float(cf[0]), float(cf[1]), float(cf[2]),
            float(cv[0]), float(cv[1]), float(cv[2]))


def fit_linear_const(sys):
    """(G, C) for drift G x with constant diffusion C, or None."""
    n, m = sys.dim, sys.noise_dim
    try:
        ts = (0.0, 0.73, 1.91)
        zero = np.zeros(n)
        if np.max(np.abs(sys.drift_value(0.0, zero))) > 1e-12:
            return None
        G = np.empty((n, n))
        for j in range(n):
            e_j = np.zeros(n)
            e_j[j] = 1.0
            G[:, j] = sys.drift_value(0.0, e_j)
        C = sys.diffusion_value(0.0, zero)

        rng = np.random.default_rng(7)
        for _ in range(5):
            x = rng.uniform(-3.0, 3.0, n)
            t = float(rng.choice(ts))
            f = sys.drift_value(t, x)
            if not np.allclose(f, G @ x, rtol=1e-9, atol=1e-9):
                return None
            if not np.allclose(sys.diffusion_value(t, x), C,
                               rtol=1e-12, atol=1e-12):
                return None
    except ExprError:
        return None
    return G, C


# ---------------------------------------------------------------------------
# Batch simulation
# ---------------------------------------------------------------------------

def _plan_engine(sys, domain):
    """Pick (engine, payload): 'scalar'/'linear' family or 'generic'."""
    iv = domain.as_target_interval(sys.dim)
    if iv is not None:
        p = fit_scalar_poly(sys)
        if p is not None:
            return "scalar", (np.array(p, dtype=float), iv)
    if domain.kind == "ball" and sys.dim >= 1:
        lin = fit_linear_const(sys)
        if lin is not None:
            G, C = lin
            return "linear", (np.ascontiguousarray(G), np.ascontiguousarray(C))
    return "generic", None


def _array_system_fns(sys):
    from .expr import eval_relaxed

    consts = sys.constants
    n, m = sys.dim, sys.noise_dim

    def drift_fn(t, X):
        cols = [X[:, i] for i in range(n)]
        out = np.empty_like(X)
        for i, e in enumerate(sys.drift):
            out[:, i] = np.broadcast_to(
                np.asarray(eval_relaxed(e, t, cols, consts), dtype=float),
                (X.shape[0],))
        return out

    def diff_fn(t, X):
        cols = [X[:, i] for i in range(n)]
        out = np.empty((X.shape[0], n, m))
        for i, row in enumerate(sys.diffusion):
            for j, e in enumerate(row):
                out[:, i, j] = np.broadcast_to(
                    np.asarray(eval_relaxed(e, t, cols, consts), dtype=float),
                    (X.shape[0],))
        return out

    return drift_fn, diff_fn


def _chunk_ranges(n, threads):
    chunks = max(1, min(n, threads * 4 if threads > 1 else 1))
    size = (n + chunks - 1) // chunks
    return [(lo, min(lo + size, n)) for lo in range(0, n, size)]


def simulate_paths(sys, domain, x0, n_paths, dt, t_max, seed=DEFAULT_SEED,
                   r_escape=None, substeps=1, max_steps=None, threads=None,
                   backend=None, path_offset=0):
    """Simulate ``n_paths`` independent paths until hit/censor/escape.

    Paths are numbered ``path_offset .. path_offset+n_paths-1``; path i's
    noise comes from substream i of ``seed``, so the same (system, domain,
    parameters, seed) give bit-identical results for any thread count.

    Returns a :class:`SimulationResult`.
    """
    if dt <= 0 or t_max <= 0:
        raise ValueError("dt and t_max must be positive")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != sys.dim:
        raise ValueError(f"x0 must have dimension {sys.dim}")
    if domain.kind == "interval" and sys.dim != 1:
        raise ValueError("interval domains are one-dimensional")
    if r_escape is None:
        r_escape = default_r_escape(domain, x0)
    if r_escape <= domain.bounding_radius:
        raise ValueError("r_escape must exceed the domain's outer radius")

    n_steps_horizon = int(math.ceil(t_max / dt - 1e-12))
    n_steps = n_steps_horizon
    if max_steps is not None:
        n_steps = min(n_steps, int(max_steps))
    threads = resolve_threads(threads)
    backend = backend or default_backend()

    engine, payload = _plan_engine(sys, domain)
    use_numba = backend == "numba" and HAVE_NUMBA and engine != "generic"
    backend_used = "numba" if use_numba else "numpy"

    n = int(n_paths)
    status = np.zeros(n, dtype=np.int64)
    t_end = np.zeros(n, dtype=np.float64)
    seed_u = int(seed) & ((1 << 64) - 1)

    if engine == "scalar":
        params, (lo_t, hi_t) = payload
        x_end = np.zeros(n, dtype=np.float64)
        fn = _kernels.scalar_paths if use_numba else _engines.scalar_paths_np

        def run_block(lo, hi):
            fn(np.uint64(seed_u), lo, hi, int(path_offset),
               float(x0[0]), float(dt), n_steps, int(substeps), params,
               float(lo_t), float(hi_t), float(r_escape),
               status, t_end, x_end)
    elif engine == "linear":
        G, C = payload
        x_end = np.zeros((n, sys.dim), dtype=np.float64)
        fn = _kernels.linear_paths if use_numba else _engines.linear_paths_np

        def run_block(lo, hi):
            fn(np.uint64(seed_u), lo, hi, int(path_offset),
               np.ascontiguousarray(x0), float(dt), n_steps, int(substeps),
               G, C, float(domain.params[0]), float(r_escape),
               status, t_end, x_end)
    else:
        drift_fn, diff_fn = _array_system_fns(sys)
        x_end = np.zeros((n, sys.dim), dtype=np.float64)

        def run_block(lo, hi):
            _engines.generic_paths_np(
                seed_u, lo, hi, int(path_offset), x0, float(dt),
                n_steps, int(substeps), drift_fn, diff_fn,
                domain.distance_many, float(r_escape), status, t_end, x_end)

    t0 = time.perf_counter()
    ranges = _chunk_ranges(n, threads)
    if threads == 1 or len(ranges) == 1:
        for lo, hi in ranges:
            run_block(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda r: run_block(*r), ranges))
    elapsed = time.perf_counter() - t0

    # Paths that exhausted the loop: censored at the horizon, or stopped by
    # an explicit step budget.
    leftover = status == 0
    if n_steps == n_steps_horizon:
        status[leftover] = STATUS_CENSORED
        t_end[leftover] = t_max
    else:
        status[leftover] = STATUS_STEP_LIMIT
        t_end[leftover] = n_steps * dt
    # Grid overshoot: events timed past the horizon did not happen by t_max.
    late_hits = (status == STATUS_HIT) & (t_end > t_max)
    status[late_hits] = STATUS_CENSORED
    t_end[late_hits] = t_max
    np.minimum(t_end, t_max, out=t_end)

    if x_end.ndim == 1:
        x_end = x_end[:, None]
    return SimulationResult(
        status=status, t_end=t_end, x_final=x_end, dt=float(dt),
        t_max=float(t_max), seed=seed_u, r_escape=float(r_escape),
        substeps=int(substeps), n_steps=n_steps, engine=engine,
        backend=backend_used, threads=threads, elapsed_s=elapsed)


# ---------------------------------------------------------------------------
# Single-path simulation with trajectory recording
# ---------------------------------------------------------------------------

def _normal_scalar(key, j):
    return float(norm_inv_cdf(uniform_py(key, j)))


def simulate_until_hit(sys, domain, x0, t_max, dt, r_escape=None,
                       seed=DEFAULT_SEED, path_index=0, record_stride=1,
                       substeps=1, max_steps=None):
    """Simulate one path, recording the trajectory every ``record_stride``
    steps (0 disables recording).

    Uses exactly the noise substream of ``path_index``, so the outcome
    matches path ``path_index`` of :func:`simulate_paths` under the same
    parameters.  Genuine expression domain errors are raised; arithmetic
    overflow terminates the path with status "escaped".
    """
    if dt <= 0 or t_max <= 0:
        raise ValueError("dt and t_max must be positive")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    if x.size != sys.dim:
        raise ValueError(f"x0 must have dimension {sys.dim}")
    if r_escape is None:
        r_escape = default_r_escape(domain, x)
    n_steps_horizon = int(math.ceil(t_max / dt - 1e-12))
    n_steps = n_steps_horizon
    if max_steps is not None:
        n_steps = min(n_steps, int(max_steps))
    sub = int(substeps)
    root = math.sqrt(dt / sub)
    m = sys.noise_dim
    key = path_key_py(int(seed) & ((1 << 64) - 1), path_index)

    rows = []

    def record(k, t, xv):
        if record_stride:
            rows.append((k, t) + tuple(xv))

    d_old = domain.boundary_distance(x)
    record(0, 0.0, x)
    if d_old <= 0.0:
        path = np.array(rows) if rows else None
        return PathOutcome(path_index, "hit", 0.0, x, path)

    dW = np.empty(m)
    status, end_t = None, None
    for k in range(n_steps):
        t = k * dt
        for c in range(m):
            z = 0.0
            base = (k * m + c) * sub
            for s in range(sub):
                z += _normal_scalar(key, base + s)
            dW[c] = root * z
        try:
            x_new = em_step(sys, t, x, dt, dW)
        except EvalDomainError as err:
            if err.kind == "overflow":
                status, end_t = "escaped", (k + 1) * dt
                break
            raise
        if not np.all(np.isfinite(x_new)):
            status, end_t = "escaped", (k + 1) * dt
            break
        d_new = domain.boundary_distance(x_new)
        if d_new <= 0.0:
            theta = d_old / (d_old - d_new)
            status, end_t = "hit", (k + theta) * dt
            x = x_new
            record(k + 1, end_t, x)
            break
        if np.sqrt(np.sum(x_new * x_new)) >= r_escape:
            status, end_t = "escaped", (k + 1) * dt
            x = x_new
            record(k + 1, end_t, x)
            break
        x = x_new
        d_old = d_new
        if record_stride and ((k + 1) % record_stride == 0):
            record(k + 1, (k + 1) * dt, x)

    if status is None:
        if n_steps == n_steps_horizon:
            status, end_t = "censored", t_max
        else:
            status, end_t = "step_limit", n_steps * dt
        record(n_steps, end_t, x)
    if status == "hit" and end_t > t_max:
        status, end_t = "censored", t_max
    end_t = min(end_t, t_max)
    path = np.array(rows) if rows else None
    return PathOutcome(path_index, status, float(end_t), x, path)


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def write_outcomes_csv(result, path_or_file):
    """Outcome summary: ``path_id,status,tau,final_norm`` (tau blank for
    paths that never hit)."""
    close, fh = _open(path_or_file)
    try:
        w = csv.writer(fh)
        w.writerow(["path_id", "status", "tau", "final_norm"])
        norms = np.sqrt(np.sum(result.x_final ** 2, axis=1))
        for i in range(result.n_paths):
            code = int(result.status[i])
            tau = f"{result.t_end[i]:.12g}" if code == STATUS_HIT else ""
            w.writerow([i, STATUS_NAMES[code], tau, f"{norms[i]:.12g}"])
    finally:
        if close:
            fh.close()


def write_path_csv(outcome, path_or_file):
    """Trajectory dump: ``path_id,step,t,x1..xn``."""
    if outcome.path is None:
        raise ValueError("outcome has no recorded path "
                         "(simulate with record_stride >= 1)")
    n = outcome.path.shape[1] - 2
    close, fh = _open(path_or_file)
    try:
        w = csv.writer(fh)
        w.writerow(["path_id", "step", "t"] + [f"x{i + 1}" for i in range(n)])
        for row in outcome.path:
            w.writerow([outcome.path_id, int(row[0]), f"{row[1]:.12g}"]
                       + [f"{v:.12g}" for v in row[2:]])
    finally:
        if close:
            fh.close()


def _open(path_or_file):
    if hasattr(path_or_file, "write"):
        return False, path_or_file
    return True, open(path_or_file, "w", newline="")
