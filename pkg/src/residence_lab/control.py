"""Domain-aiming controller synthesis.

Given a horizon T, a target probability p, and a target ball of radius
delta, synthesizes feedback laws that make the closed-loop state reach
the ball by time T with probability at least p: exact-cancellation
controllers for nonlinear scalar systems (mean-time and exponential-decay
variants), and a linear design built on the Lyapunov matrix equation
D P + P D^T = -C C^T with a minimal damping gain found by search.

The small dense linear algebra this needs (characteristic polynomial,
Routh-Hurwitz stability, rank by pivoted elimination, cyclic Jacobi
eigenvalues, linear solves) is implemented here at desk scale (n <= 8).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import lyap
from .expr import eval_expr, parse, to_source
from .sde import Domain, SdeSystem, closed_loop, linear_system, simulate_paths
from .mc import aggregate

__all__ = [
    "AimingProblem",
    "SynthesisResult",
    "ControlInfeasible",
    "char_poly",
    "routh_hurwitz",
    "matrix_rank",
    "jacobi_eigh",
    "solve_dense",
    "invert_pd",
    "hurwitz_and_disturbable",
    "lyapunov_solve",
    "synthesize_linear",
    "synthesize_nonlinear",
    "verify_probability",
    "format_synthesis",
    "write_synthesis_csv",
]

_MAX_DIM = 8


class ControlInfeasible(RuntimeError):
    """Synthesis cannot proceed (structural or admissibility failure)."""


@dataclass(frozen=True)
class AimingProblem:
    """Reach the ball of radius ``delta`` by time ``T`` with probability
    at least ``p``, starting from ``x0`` outside the ball."""

    T: float
    p: float
    delta: float
    x0: tuple

    def __post_init__(self):
        object.__setattr__(self, "x0",
                           tuple(float(v) for v in np.atleast_1d(self.x0)))
        if self.T <= 0:
            raise ValueError("horizon T must be positive")
        if not 0.0 < self.p < 1.0:
            raise ValueError("target probability must lie in (0,1)")
        if self.delta <= 0:
            raise ValueError("ball radius must be positive")
        if self.x0_norm <= self.delta:
            raise ValueError("x0 must start outside the closed target ball")

    @property
    def x0_norm(self):
        return math.sqrt(sum(v * v for v in self.x0))

    @property
    def dim(self):
        return len(self.x0)


# ---------------------------------------------------------------------------
# Desk-scale dense linear algebra
# ---------------------------------------------------------------------------

def char_poly(D) -> np.ndarray:
    """Characteristic polynomial coefficients [1, c1, ..., cn] of
    det(sI - D), by the Faddeev-LeVerrier recursion."""
    D = np.asarray(D, float)
    n = D.shape[0]
    coeffs = np.empty(n + 1)
    coeffs[0] = 1.0
    Mk = np.eye(n)
    for k in range(1, n + 1):
        DM = D @ Mk
        ck = -np.trace(DM) / k
        coeffs[k] = ck
        Mk = DM + ck * np.eye(n)
    return coeffs


def routh_hurwitz(coeffs) -> bool:
    """True when every root of the polynomial has negative real part.

    Zero or sign-changing entries in the first Routh column mean the
    polynomial is not strictly stable; marginal cases report False.
    """
    c = np.asarray(coeffs, float)
    if c[0] < 0:
        c = -c
    if np.any(c <= 0.0):
        return False
    n = c.size - 1
    if n == 0:
        return True
    rows = [c[0::2].copy(), c[1::2].copy()]
    width = rows[0].size
    rows[1] = np.append(rows[1], np.zeros(width - rows[1].size))
    for _ in range(n - 1):
        a, b = rows[-2], rows[-1]
        if abs(b[0]) < 1e-300:
            return False
        nxt = np.zeros(width)
        for j in range(width - 1):
            nxt[j] = (b[0] * a[j + 1] - a[0] * b[j + 1]) / b[0]
        rows.append(nxt)
    first = np.array([r[0] for r in rows[: n + 1]])
    return bool(np.all(first > 0.0))


def matrix_rank(M, tol_factor: float = 1e-10) -> int:
    """Rank by elimination with full pivoting; the pivot threshold is
    ``tol_factor`` times the Frobenius norm."""
    A = np.array(M, float)
    if A.size == 0:
        return 0
    tol = tol_factor * math.sqrt(float(np.sum(A * A)))
    rank = 0
    rows, cols = A.shape
    for _ in range(min(rows, cols)):
        sub = np.abs(A[rank:, rank:])
        i, j = np.unravel_index(int(np.argmax(sub)), sub.shape)
        if sub[i, j] <= tol:
            break
        A[[rank, rank + i]] = A[[rank + i, rank]]
        A[:, [rank, rank + j]] = A[:, [rank + j, rank]]
        piv = A[rank, rank]
        for r in range(rank + 1, rows):
            A[r, rank:] -= (A[r, rank] / piv) * A[rank, rank:]
        rank += 1
    return rank


def jacobi_eigh(S, tol: float = 1e-12, max_sweeps: int = 60):
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric
    matrix by the cyclic Jacobi rotation method."""
    A = np.array(S, float)
    n = A.shape[0]
    if not np.allclose(A, A.T, atol=1e-10 * max(1.0, float(np.max(np.abs(A))))):
        raise ValueError("jacobi_eigh expects a symmetric matrix")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    scale = max(1.0, float(np.max(np.abs(A))))
    for _ in range(max_sweeps):
        # cancellation can drive the off-diagonal mass epsilon-negative
        off = math.sqrt(max(0.0, float(np.sum(A * A) - np.sum(np.diag(A) ** 2))))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) <= 1e-300:
                    continue
                theta = 0.5 * (A[q, q] - A[p, p]) / A[p, q]
                if abs(theta) > 1e150:  # theta^2 overflows; use the limit
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (
                        abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q] = s
                J[q, p] = -s
                A = J.T @ A @ J
                V = V @ J
    order = np.argsort(np.diag(A))
    return np.diag(A)[order].copy(), V[:, order].copy()


def solve_dense(A, b):
    """Solve A x = b by Gaussian elimination with partial pivoting."""
    A = np.array(A, float)
    b = np.array(b, float)
    n = A.shape[0]
    single = b.ndim == 1
    B = b.reshape(n, -1)
    for k in range(n):
        p = k + int(np.argmax(np.abs(A[k:, k])))
        if abs(A[p, k]) < 1e-300:
            raise ControlInfeasible("singular linear system")
        if p != k:
            A[[k, p]] = A[[p, k]]
            B[[k, p]] = B[[p, k]]
        for r in range(k + 1, n):
            m = A[r, k] / A[k, k]
            A[r, k:] -= m * A[k, k:]
            B[r] -= m * B[k]
    X = np.zeros_like(B)
    for k in range(n - 1, -1, -1):
        X[k] = (B[k] - A[k, k + 1:] @ X[k + 1:]) / A[k, k]
    return X[:, 0] if single else X


def invert_pd(P, cond_limit: float = 1e12):
    """Inverse of a symmetric positive definite matrix with a condition
    estimate from its Jacobi eigenvalues; refuses ill-conditioned input."""
    P = np.asarray(P, float)
    evals, _ = jacobi_eigh(P)
    if evals[0] <= 0.0:
        raise ControlInfeasible(
            f"matrix not positive definite (min eigenvalue {evals[0]:.3e})")
    cond = evals[-1] / evals[0]
    if cond > cond_limit:
        raise ControlInfeasible(
            f"condition estimate {cond:.3e} exceeds {cond_limit:.0e}; "
            "refusing to invert")
    n = P.shape[0]
    inv = solve_dense(P, np.eye(n))
    return 0.5 * (inv + inv.T), cond


# ---------------------------------------------------------------------------
# Structure checks and the matrix Lyapunov equation
# ---------------------------------------------------------------------------

def hurwitz_and_disturbable(D, C):
    """(stable, disturbable): D strictly Hurwitz by Routh-Hurwitz, and
    rank [C, DC, ..., D^(n-1) C] = n by pivoted elimination."""
    D = np.atleast_2d(np.asarray(D, float))
    C = np.asarray(C, float)
    if C.ndim == 1:
        C = C.reshape(-1, 1)
    n = D.shape[0]
    if D.shape != (n, n) or n > _MAX_DIM:
        raise ValueError(f"D must be square with n <= {_MAX_DIM}")
    if C.shape[0] != n:
        raise ValueError("C must have as many rows as D")
    hurwitz = routh_hurwitz(char_poly(D))
    blocks = [C]
    for _ in range(n - 1):
        blocks.append(D @ blocks[-1])
    disturbable = matrix_rank(np.hstack(blocks)) == n
    return hurwitz, disturbable


def lyapunov_solve(D, C) -> np.ndarray:
    """Solve D P + P D^T = -C C^T for symmetric P via the Kronecker/vec
    linear system; requires D Hurwitz.

    Residual is checked against 1e-10 * ||CC^T||; the disturbability of
    (D, C) is only advisory (a warning) since P can be semidefinite
    without it.
    """
    D = np.atleast_2d(np.asarray(D, float))
    C = np.asarray(C, float)
    if C.ndim == 1:
        C = C.reshape(-1, 1)
    n = D.shape[0]
    hurwitz, disturbable = hurwitz_and_disturbable(D, C)
    if not hurwitz:
        raise ControlInfeasible("D is not Hurwitz; the Lyapunov equation "
                                "has no stable solution")
    if not disturbable:
        warnings.warn("(D, C) not completely disturbable; the solution may "
                      "be singular", stacklevel=2)
    Q = C @ C.T
    eye = np.eye(n)
    K = np.kron(eye, D) + np.kron(D, eye)
    vec_p = solve_dense(K, -Q.flatten(order="F"))
    P = vec_p.reshape((n, n), order="F")
    P = 0.5 * (P + P.T)
    norm_q = math.sqrt(float(np.sum(Q * Q)))
    res = D @ P + P @ D.T + Q
    res_norm = math.sqrt(float(np.sum(res * res)))
    if res_norm > 1e-10 * max(norm_q, 1e-300):
        raise ControlInfeasible(
            f"Lyapunov residual {res_norm:.3e} exceeds tolerance")
    return P


# ---------------------------------------------------------------------------
# Synthesis results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthesisResult:
    """Synthesized feedback with its admissibility record.

    ``lhs <= rhs`` is the admissibility inequality of the chosen branch;
    ``guarantee_p`` restates the problem's probability when admissible.
    """

    branch: str
    feedback: tuple
    closed_loop: SdeSystem
    problem: AimingProblem
    admissible: bool
    lhs: float
    rhs: float
    gain: np.ndarray = None
    gamma: float = None
    M: np.ndarray = None
    M_inv: np.ndarray = None
    a_gamma: float = None
    m_eigs: tuple = None
    cc_eigs: tuple = None
    regularity: object = None
    notes: str = ""

    @property
    def guarantee_p(self):
        return self.problem.p if self.admissible else 0.0

    def feedback_source(self):
        return tuple(to_source(e) for e in self.feedback)


def _matrix_feedback_exprs(K, dim):
    rows = []
    for i in range(K.shape[0]):
        terms = " + ".join(f"{float(K[i, j])!r} * x{j + 1}"
                           for j in range(dim) if K[i, j] != 0.0)
        rows.append(parse(terms if terms else "0", dim=dim))
    return tuple(rows)


def _regularity_report(sys, r_box):
    region = lyap.Region(lows=(-r_box,) * sys.dim, highs=(r_box,) * sys.dim,
                         n_x=max(9, 33 // sys.dim))
    cert = lyap.Certificate(kind="monotone-growth", region=region)
    return lyap.check(cert, sys)


def synthesize_linear(A, B, C, D, problem: AimingProblem) -> SynthesisResult:
    """Minimal-gain linear aiming design.

    Solves D P + P D^T = -CC^T, sets M = P^(-1) and V(x) = x.P x/2, and
    picks the smallest damping ``gamma`` (log-grid bracket plus bisection,
    reported to 9 digits) for which

        x0.P x0/2 <= delta^2/(2 max_eig M) + T (1-p) a_gamma,
        a_gamma = (min_eig CC^T/2 + gamma/max_eig M) delta^2
                  - sum_eigs CC^T/(2 min_eig M) > 0.

    The feedback is u = B^(-1)(-A + D^T - gamma I)x, closing the loop to
    dX = (D^T - gamma I)X dt + C dB.
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    C = np.asarray(C, float)
    if C.ndim == 1:
        C = C.reshape(-1, 1)
    D = np.atleast_2d(np.asarray(D, float))
    n = A.shape[0]
    if problem.dim != n:
        raise ValueError("problem dimension does not match A")
    if B.shape != (n, n):
        raise ControlInfeasible("B must be square (full-rank input); the "
                                "non-square reduction is out of scope")
    if matrix_rank(B) < n:
        raise ControlInfeasible("B is singular; cancellation gain undefined")
    hurwitz, disturbable = hurwitz_and_disturbable(D, C)
    if not hurwitz:
        raise ControlInfeasible("D is not Hurwitz")
    if not disturbable:
        raise ControlInfeasible("(D, C) is not completely disturbable")

    P = lyapunov_solve(D, C)
    M, cond = invert_pd(P)
    m_eigs, _ = jacobi_eigh(M)
    cc_eigs, _ = jacobi_eigh(C @ C.T)
    lam_min_m, lam_max_m = m_eigs[0], m_eigs[-1]
    lam1 = cc_eigs[0]
    sum_cc = float(np.sum(cc_eigs))
    d2 = problem.delta ** 2
    x0 = np.array(problem.x0)
    lhs = 0.5 * float(x0 @ P @ x0)
    base_rhs = d2 / (2.0 * lam_max_m)
    slack = problem.T * (1.0 - problem.p)

    def a_gamma(g):
        return (lam1 / 2.0 + g / lam_max_m) * d2 - sum_cc / (2.0 * lam_min_m)

    def admissible(g):
        return a_gamma(g) > 0.0 and lhs <= base_rhs + slack * a_gamma(g)

    grid = 10.0 ** np.arange(-6.0, 9.0, 0.25)
    g_hi = next((g for g in grid if admissible(g)), None)
    if g_hi is None:
        raise ControlInfeasible(
            "no admissible gamma up to 1e9; admissibility inequality "
            f"lhs={lhs:.6g} cannot be met")
    g_lo = 0.0
    for _ in range(200):
        mid = 0.5 * (g_lo + g_hi)
        if mid == g_lo or mid == g_hi:
            break
        if admissible(mid):
            g_hi = mid
        else:
            g_lo = mid
    gamma = round(g_hi, 9)
    if not admissible(gamma):
        gamma = g_hi

    K = solve_dense(B, (-A + D.T - gamma * np.eye(n)))
    feedback = _matrix_feedback_exprs(K, n)
    loop = linear_system(D.T - gamma * np.eye(n), None, C)
    loop = SdeSystem(dim=loop.dim, noise_dim=loop.noise_dim,
                     drift=loop.drift, diffusion=loop.diffusion,
                     constants=loop.constants, tag="aimed_linear",
                     params={"gamma": gamma})
    reg = _regularity_report(loop, max(2.0 * problem.x0_norm, 5.0))
    return SynthesisResult(
        branch="linear",
        feedback=feedback,
        closed_loop=loop,
        problem=problem,
        admissible=True,
        lhs=lhs,
        rhs=base_rhs + slack * a_gamma(gamma),
        gain=K,
        gamma=float(gamma),
        M=M,
        M_inv=P,
        a_gamma=float(a_gamma(gamma)),
        m_eigs=tuple(float(v) for v in m_eigs),
        cc_eigs=tuple(float(v) for v in cc_eigs),
        regularity=reg,
        notes=f"P condition estimate {cond:.3e}",
    )


# ---------------------------------------------------------------------------
# Nonlinear cancellation synthesis (scalar)
# ---------------------------------------------------------------------------

def _scalar_source(e):
    return to_source(e) if not isinstance(e, str) else e


def synthesize_nonlinear(g, sigma_hat, problem: AimingProblem,
                         mode: str = "mean", target=None, V=None,
                         mu=None, mu1=None, rate: float = 1.0,
                         alpha: float = 1.0, constants=None,
                         check_region: lyap.Region = None) -> SynthesisResult:
    """Cancellation controller for dX = (g(t,X) + u) dt + sigma_hat(X) X dB.

    mode "mean": u = -g - sigma_hat^2 x, yielding drift -sigma_hat^2(x) x;
    with sigma_hat^2(x) >= alpha (1 + x^2) the mean-time certificate gives
    admissibility |x0|^2 <= delta^2 (1 + alpha (1+delta^2) T (1-p)).

    mode "exponential": u = -g - sigma_hat^2 x/2 - rate x/2, yielding
    drift -(sigma_hat^2 + rate) x/2; the exponential-moment certificate
    gives admissibility |x0|^2 <= e^(rate T)(1-p) delta^2.

    mode "target": u = -g + target with user-supplied V and mu (mean
    branch) or mu1 with rate (exponential branch).

    The closed loop is certificate-checked before admissibility is
    declared; a failed check raises :class:`ControlInfeasible`.
    """
    if problem.dim != 1:
        raise ValueError("nonlinear cancellation synthesis is scalar")
    consts = dict(constants or {})
    names = tuple(consts)
    g_src = _scalar_source(g)
    s_src = _scalar_source(sigma_hat)
    x0 = problem.x0[0]
    delta, T, p = problem.delta, problem.T, problem.p
    d2, x02 = delta * delta, x0 * x0

    if mode == "mean":
        u_src = f"-({g_src}) - ({s_src})^2 * x1"
        f_src = f"-(({s_src})^2) * x1"
        V_expr = "x1^2 / 2"
        mu_src = f"{alpha!r} * x1^2 * (1 + x1^2) / 2"
        lhs = 0.5 * x02
        rhs = 0.5 * d2 + T * (1.0 - p) * alpha * d2 * (1.0 + d2) / 2.0
        cert_kind = "mean"
    elif mode == "exponential":
        u_src = f"-({g_src}) - ({s_src})^2 * x1 / 2 - {rate!r} * x1 / 2"
        f_src = f"-(({s_src})^2 + {rate!r}) * x1 / 2"
        V_expr = "x1^2 / 2"
        mu_src = "x1^2 / 2"  # mu1
        lhs = 0.5 * x02
        rhs = math.exp(rate * T) * (1.0 - p) * 0.5 * d2
        cert_kind = "exponential"
    elif mode == "target":
        if target is None or V is None:
            raise ValueError("mode 'target' needs target drift and V")
        t_src = _scalar_source(target)
        u_src = f"-({g_src}) + ({t_src})"
        f_src = t_src
        V_expr = V
        if mu is not None:
            mu_src = _scalar_source(mu)
            cert_kind = "mean"
        elif mu1 is not None:
            mu_src = _scalar_source(mu1)
            cert_kind = "exponential"
        else:
            raise ValueError("mode 'target' needs mu (mean branch) or "
                             "mu1 (exponential branch)")
        V_parsed = parse(V_expr, dim=1, constants=names) \
            if isinstance(V_expr, str) else V_expr
        v0 = float(eval_expr(V_parsed, 0.0, [x0], consts))
        v_delta = min(float(eval_expr(V_parsed, 0.0, [s * delta], consts))
                      for s in (1.0, -1.0))
        mu_at = float(eval_expr(parse(mu_src, dim=1, constants=names)
                                if isinstance(mu_src, str) else mu_src,
                                0.0, [delta], consts))
        lhs = v0
        if cert_kind == "mean":
            rhs = v_delta + T * (1.0 - p) * mu_at
        else:
            rhs = math.exp(rate * T) * (1.0 - p) * mu_at
        V_expr = V_parsed
    else:
        raise ValueError("mode must be 'mean', 'exponential', or 'target'")

    diffusion_src = f"({s_src}) * x1"
    loop = SdeSystem.from_expressions(f_src, diffusion_src,
                                      constants=consts, tag="aimed_nonlinear")
    region = check_region
    if region is None:
        r_box = max(2.0 * abs(x0), 2.0 * delta, 4.0)
        region = lyap.Region(lows=(-r_box,), highs=(r_box,), n_x=41,
                             exclude=Domain.ball(delta))

    notes = []
    if cert_kind == "mean":
        # cancellation loops satisfy the decay inequality with equality, so
        # the margin floor is finite-difference noise amplified by a(x)
        cert = lyap.Certificate(kind="recurrence-decay", region=region,
                                V=V_expr, slots={"nu": "0", "mu": mu_src},
                                params={"growth_threshold":
                                        min(1.0, 0.5 * delta * delta)},
                                margin_tol=1e-5, constants=consts)
        report = lyap.check(cert, loop)
    else:
        # exponential-moment certificate: V >= mu1(|x|), L V <= -rate V
        report = _exponential_certificate(loop, V_expr, mu_src, rate,
                                          region, consts)
    if not report.passed:
        raise ControlInfeasible(
            "closed-loop certificate failed: "
            f"margin {report.worst_margin:.3e} at x={report.witness_x}")
    reg = _regularity_report(loop, max(2.0 * abs(x0), 5.0))
    notes.append(f"certificate margin {report.worst_margin:.3e}")

    admissible = lhs <= rhs + 1e-12
    u_expr = parse(u_src, dim=1, constants=names)
    return SynthesisResult(
        branch=mode,
        feedback=(u_expr,),
        closed_loop=loop,
        problem=problem,
        admissible=bool(admissible),
        lhs=float(lhs),
        rhs=float(rhs),
        regularity=reg,
        notes="; ".join(notes),
    )


def _exponential_certificate(sys, V, mu1_src, rate, region, consts):
    """Grid check of V >= mu1(|x|) and L V <= -rate V outside the target."""
    names = tuple(consts)
    V_e = parse(V, dim=1, constants=names) if isinstance(V, str) else V
    mu1_e = parse(mu1_src, dim=1, constants=names) \
        if isinstance(mu1_src, str) else mu1_src
    worst = -math.inf
    wit = (0.0, (0.0,))
    for x in region.x_points():
        v = float(eval_expr(V_e, 0.0, x, consts))
        m1 = float(eval_expr(mu1_e, 0.0, [abs(float(x[0]))], consts))
        lv = lyap.generator(sys, V_e, 0.0, x)
        margin = max(m1 - v, lv + rate * v)
        if margin > worst:
            worst = margin
            wit = (0.0, tuple(float(xi) for xi in x))
    return lyap.CheckReport(kind="exponential-moment", passed=worst <= 1e-5,
                            worst_margin=float(worst), witness_t=wit[0],
                            witness_x=wit[1], grid=region.describe())


# ---------------------------------------------------------------------------
# Monte Carlo verification and reporting
# ---------------------------------------------------------------------------

def verify_probability(result: SynthesisResult, n_paths: int = 20000,
                       dt: float = 1e-3, seed: int = None,
                       threads: int = None):
    """Empirical check of the aiming guarantee on the closed loop.

    Returns ``(p_hat, se, ok)`` where ``ok`` means the hit probability by
    the horizon is at least p - 3 se.
    """
    prob = result.problem
    dom = Domain.ball(prob.delta)
    kwargs = {} if seed is None else {"seed": seed}
    res = simulate_paths(result.closed_loop, dom, x0=list(prob.x0),
                         n_paths=n_paths, dt=dt, t_max=prob.T,
                         threads=threads, **kwargs)
    stats = aggregate(res, T_list=(prob.T,))
    p_hat, se = stats.p_hit(prob.T)
    return p_hat, se, bool(p_hat >= prob.p - 3.0 * se)


def format_synthesis(result: SynthesisResult, mc_summary=None) -> str:
    """Human-readable synthesis report."""
    lines = [f"branch {result.branch}: "
             f"{'admissible' if result.admissible else 'NOT admissible'} "
             f"(lhs {result.lhs:.6g} vs rhs {result.rhs:.6g})"]
    for i, src in enumerate(result.feedback_source()):
        lines.append(f"  u{i + 1} = {src}")
    if result.gamma is not None:
        lines.append(f"  gamma = {result.gamma:.9g}, "
                     f"a_gamma = {result.a_gamma:.6g}")
        lines.append("  gain rows: " + " | ".join(
            ", ".join(f"{v:.6g}" for v in row) for row in result.gain))
        lines.append("  M eigenvalues: " +
                     ", ".join(f"{v:.6g}" for v in result.m_eigs))
    if result.regularity is not None:
        lines.append(f"  closed-loop growth check: "
                     f"{'pass' if result.regularity.passed else 'fail'} "
                     f"({result.regularity.notes})")
    if mc_summary is not None:
        p_hat, se, ok = mc_summary
        lines.append(f"  MC verification: p_hat={p_hat:.4f} (se {se:.4f}) "
                     f"{'meets' if ok else 'MISSES'} target "
                     f"p={result.problem.p}")
    if result.notes:
        lines.append(f"  notes: {result.notes}")
    return "\n".join(lines)


def write_synthesis_csv(path, result: SynthesisResult, mc_summary=None):
    """Key-value CSV dump of a synthesis result."""
    rows = [("branch", result.branch),
            ("admissible", "true" if result.admissible else "false"),
            ("lhs", f"{result.lhs:.10g}"),
            ("rhs", f"{result.rhs:.10g}"),
            ("T", f"{result.problem.T:.10g}"),
            ("p", f"{result.problem.p:.10g}"),
            ("delta", f"{result.problem.delta:.10g}"),
            ("x0", ";".join(f"{v:.10g}" for v in result.problem.x0))]
    for i, src in enumerate(result.feedback_source()):
        rows.append((f"u{i + 1}", src))
    if result.gamma is not None:
        rows.append(("gamma", f"{result.gamma:.10g}"))
        rows.append(("a_gamma", f"{result.a_gamma:.10g}"))
        for i, row in enumerate(result.gain):
            rows.append((f"gain_row{i + 1}",
                         ";".join(f"{v:.10g}" for v in row)))
        rows.append(("m_eigs", ";".join(f"{v:.10g}" for v in result.m_eigs)))
        rows.append(("cc_eigs",
                     ";".join(f"{v:.10g}" for v in result.cc_eigs)))
    if mc_summary is not None:
        p_hat, se, ok = mc_summary
        rows.append(("mc_p_hat", f"{p_hat:.10g}"))
        rows.append(("mc_se", f"{se:.10g}"))
        rows.append(("mc_meets_target", "true" if ok else "false"))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["field", "value"])
        w.writerows(rows)
