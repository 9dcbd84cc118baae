"""Lyapunov-style certificate checking for Ito SDE systems.

Evaluates the generator L V = dV/dt + f . grad V + (1/2) tr(a hess V)
(a = sigma sigma^T) by finite differences or analytic derivative hooks,
and checks inequality certificates for regularity (global existence),
non-regularity, domain recurrence (with mean-residence and
exponential-moment bounds), and non-recurrence (with an explicit
probability bound from a radial comparison function) on finite
space-time grids.  Verdicts are grid-certified, never symbolic proofs.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad, simpson

from ._rng import norm_inv_cdf, path_key_py, uniform_py
from .expr import eval_expr, grad_hess, parse
from .sde import Domain, SdeSystem

__all__ = [
    "CertificateError",
    "Region",
    "Certificate",
    "CheckReport",
    "RadialIntegralV",
    "generator",
    "check",
    "construct_bounded_complement_V",
    "PhiTable",
    "nonrecurrence_phi",
    "nonrecurrence_bound",
    "mean_residence_bound",
    "mgf_bound",
    "lipschitz_spot_check",
    "write_check_reports_csv",
    "format_check_report",
    "CERTIFICATE_KINDS",
]


class CertificateError(ValueError):
    """Certificate is malformed or a precondition fails on the region."""


# ---------------------------------------------------------------------------
# Regions and grids
# ---------------------------------------------------------------------------

def _directions(dim, n):
    """Deterministic unit directions: signs in 1-D, uniform angles in 2-D,
    normalized seeded Gaussians beyond."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        ang = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
        return np.column_stack([np.cos(ang), np.sin(ang)])
    out = np.empty((n, dim))
    for i in range(n):
        key = path_key_py(2718, i)
        v = np.array([norm_inv_cdf(uniform_py(key, j)) for j in range(dim)])
        out[i] = v / math.sqrt(float(v @ v))
    return out


@dataclass(frozen=True)
class Region:
    """Check region: a time range crossed with a box grid, optionally
    restricted to points strictly outside a target set.

    ``n_t = 1`` collapses the time range to {0} (time-homogeneous data).
    """

    t_max: float = 0.0
    n_t: int = 1
    lows: tuple = (-5.0,)
    highs: tuple = (5.0,)
    n_x: int = 41
    exclude: Domain = None

    def __post_init__(self):
        if len(self.lows) != len(self.highs):
            raise CertificateError("lows and highs must have equal length")
        if any(l >= h for l, h in zip(self.lows, self.highs)):
            raise CertificateError("each low must be below its high")
        if self.n_x < 2 or self.n_t < 1:
            raise CertificateError("grid too small to be meaningful")

    @property
    def dim(self):
        return len(self.lows)

    @property
    def r_max(self):
        return math.sqrt(sum(max(l * l, h * h)
                             for l, h in zip(self.lows, self.highs)))

    def t_points(self):
        if self.n_t == 1:
            return np.array([0.0])
        return np.linspace(0.0, self.t_max, self.n_t)

    def x_points(self, with_exclusion=True):
        axes = [np.linspace(l, h, self.n_x)
                for l, h in zip(self.lows, self.highs)]
        mesh = np.meshgrid(*axes, indexing="ij")
        X = np.column_stack([m.ravel() for m in mesh])
        if with_exclusion and self.exclude is not None:
            X = X[self.exclude.distance_many(X) > 1e-9]
        return X

    def refined(self):
        """Same region with doubled grid density (original points kept)."""
        return Region(t_max=self.t_max,
                      n_t=self.n_t if self.n_t == 1 else 2 * self.n_t - 1,
                      lows=self.lows, highs=self.highs,
                      n_x=2 * self.n_x - 1, exclude=self.exclude)

    def describe(self):
        box = " x ".join(f"[{l:g},{h:g}]" for l, h in zip(self.lows, self.highs))
        s = f"t[0,{self.t_max:g}]x{self.n_t} * {box} n={self.n_x}"
        if self.exclude is not None:
            s += f" minus {self.exclude!r}"
        return s


# ---------------------------------------------------------------------------
# Lyapunov function inputs
# ---------------------------------------------------------------------------

class RadialIntegralV:
    """Radial Lyapunov function V(x) = int_0^|x| g(y) dy with analytic
    derivatives, for integrands supplied as 1-D expressions.

    Covers the linear-drift constant-noise catalog case where this V makes
    L V vanish identically. Values are computed by adaptive quadrature and
    cached; gradient and Hessian come from g and a finite-difference g'.
    """

    def __init__(self, g, constants=None):
        self.g = parse(g, dim=1, constants=tuple(constants or ())) \
            if isinstance(g, str) else g
        self.constants = dict(constants or {})
        self._cache = {}

    def _g(self, r):
        return float(eval_expr(self.g, 0.0, [r], self.constants))

    def _value(self, r):
        if r not in self._cache:
            self._cache[r], _ = quad(self._g, 0.0, r, limit=200)
        return self._cache[r]

    def derivatives(self, t, x):
        x = np.atleast_1d(np.asarray(x, float))
        r = math.sqrt(float(x @ x))
        if r < 1e-10:
            raise CertificateError(
                "radial integral V has a kink at the origin; exclude it "
                "from the region")
        g = self._g(r)
        h = 1e-4 * max(1.0, r)
        gp = (self._g(r - 2 * h) - 8 * self._g(r - h) + 8 * self._g(r + h)
              - self._g(r + 2 * h)) / (12.0 * h)
        n = x.size
        unit = x / r
        grad = g * unit
        hess = (gp * np.outer(unit, unit)
                + (g / r) * (np.eye(n) - np.outer(unit, unit)))
        return self._value(r), grad, hess, 0.0


def _v_derivatives(V, t, x, constants):
    if hasattr(V, "derivatives"):
        return V.derivatives(t, x)
    # second-derivative roundoff scales like eps/h^2; a coarser step than
    # the gradient default keeps equality-case margins near 1e-8
    step = 1e-4 * max(1.0, float(np.max(np.abs(x))))
    value, grad, hess, dt = grad_hess(V, t, x, h=step, constants=constants)
    return value, grad, hess, dt


def generator(sys: SdeSystem, V, t, x) -> float:
    """L V(t, x) for the given system.

    ``V`` is an expression tree or source string (finite-difference
    derivatives) or any object with a
    ``derivatives(t, x) -> (value, grad, hess, dt)`` method.
    """
    x = np.atleast_1d(np.asarray(x, float))
    if isinstance(V, str):
        V = parse(V, dim=x.size, constants=tuple(sys.constants))
    _, grad, hess, dvdt = _v_derivatives(V, t, x, sys.constants)
    f = sys.drift_value(t, x)
    a = sys.diffusion_squared(t, x)
    return float(dvdt + f @ grad + 0.5 * np.sum(a * hess))


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------

# kind -> (required slots, allowed extra params, needs V, needs exclusion)
_KIND_TABLE = {
    "regularity-affine":      (("gamma", "alpha"), ("growth_threshold",),
                               True, False),
    "regularity-bihari":      (("gamma", "alpha"), ("r", "growth_threshold"),
                               True, False),
    "monotone-growth":        ((), ("K",), False, False),
    "nonregularity-bounded":  (("alpha_bar",), ("v_sup", "x0"), True, False),
    "recurrence-min":         (("nu", "mu"), ("growth_threshold",),
                               True, True),
    "recurrence-decay":       (("nu", "mu"), ("growth_threshold",),
                               True, True),
    "recurrence-time-decay":  (("alpha",), ("growth_threshold",), True, True),
    "recurrence-radial-log":  (("mu",), ("alpha_const",), False, True),
    "nonrecurrence-radial":   (("theta",), ("a",), False, False),
}

CERTIFICATE_KINDS = tuple(sorted(_KIND_TABLE))

_RADIAL_SLOTS = ("mu", "mu1", "theta")
_CLASS_K_SLOTS = ("mu", "mu1")
_GROWTH_KINDS = ("regularity-affine", "regularity-bihari", "recurrence-min",
                 "recurrence-decay", "recurrence-time-decay")


def _fn_of_t(e, constants):
    return lambda tv: float(eval_expr(e, tv, [0.0], constants))


def _fn_of_radius(e, constants):
    return lambda s: float(eval_expr(e, 0.0, [s], constants))


def _check_class_k(fn, name, r_max):
    grid = np.linspace(0.0, r_max, 201)
    vals = np.array([fn(s) for s in grid])
    if abs(vals[0]) > 1e-12:
        raise CertificateError(
            f"{name}(0) = {vals[0]:.3e}; gauge functions must vanish at 0")
    if np.any(np.diff(vals) <= 0.0):
        k = int(np.argmax(np.diff(vals) <= 0.0))
        raise CertificateError(
            f"{name} is not strictly increasing near s={grid[k]:.4g}")


@dataclass(frozen=True)
class Certificate:
    """A checkable inequality certificate.

    ``slots`` maps comparison-function names (gamma, alpha, nu, alpha_bar
    as functions of t; mu, mu1, theta as functions of the radius, written
    in ``x1``) to expressions.  ``params`` holds scalar knobs specific to
    the kind.  Gauge functions mu/mu1 are validated to vanish at zero and
    increase strictly on the sampled radial range.
    """

    kind: str
    region: Region
    V: object = None
    slots: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    margin_tol: float = 1e-6
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _KIND_TABLE:
            raise CertificateError(
                f"unknown certificate kind {self.kind!r}; "
                f"known: {', '.join(CERTIFICATE_KINDS)}")
        required, allowed_params, needs_v, needs_excl = _KIND_TABLE[self.kind]
        missing = [s for s in required if s not in self.slots]
        if missing:
            raise CertificateError(
                f"kind {self.kind!r} requires slots {missing}")
        extra = [s for s in self.slots if s not in required]
        if extra:
            raise CertificateError(
                f"kind {self.kind!r} does not accept slots {extra}")
        bad_params = [p for p in self.params if p not in allowed_params]
        if bad_params:
            raise CertificateError(
                f"kind {self.kind!r} does not accept params {bad_params}")
        if needs_v and self.V is None:
            raise CertificateError(f"kind {self.kind!r} requires V")
        if not needs_v and self.V is not None:
            raise CertificateError(f"kind {self.kind!r} does not take V")
        if needs_excl and self.region.exclude is None:
            raise CertificateError(
                f"kind {self.kind!r} is checked outside the target set; "
                "set region.exclude to the target domain")
        if self.kind == "regularity-bihari":
            r = self.params.get("r")
            if r is None or not 0.0 <= r < 1.0:
                raise CertificateError("bihari exponent r must lie in [0,1)")
        if self.kind == "nonrecurrence-radial" and "a" not in self.params:
            raise CertificateError("nonrecurrence-radial requires param a")
        parsed = {}
        names = tuple(self.constants)
        for name, e in self.slots.items():
            parsed[name] = parse(e, dim=1, constants=names) \
                if isinstance(e, str) else e
        object.__setattr__(self, "slots", parsed)
        v = self.V
        if isinstance(v, str):
            object.__setattr__(
                self, "V", parse(v, dim=self.region.dim, constants=names))
        for name in _CLASS_K_SLOTS:
            if name in parsed:
                _check_class_k(_fn_of_radius(parsed[name], self.constants),
                               name, self.region.r_max)


@dataclass(frozen=True)
class CheckReport:
    """Outcome of one grid certification run."""

    kind: str
    passed: bool
    worst_margin: float
    witness_t: float
    witness_x: tuple
    grid: str
    notes: str = ""


def _radial_inf_growth(V, constants, region, n_dirs=16, threshold=1.0):
    """Infimum of V over sampled spheres of growing radius; returns
    (ok, note).  The spheres start at the region's outer radius."""
    dim = region.dim
    dirs = _directions(dim, n_dirs)
    radii = region.r_max * np.array([1.0, 2.0, 4.0, 8.0])
    ts = region.t_points()
    infs = []
    for R in radii:
        vals = [_v_derivatives(V, t, R * d, constants)[0]
                for t in ts for d in dirs]
        infs.append(min(vals))
    note = ("sphere infima " +
            ", ".join(f"V|_{R:g}>={v:.4g}" for R, v in zip(radii, infs)))
    ok = all(b >= a - 1e-12 for a, b in zip(infs, infs[1:]))
    ok = ok and infs[-1] >= threshold
    return ok, note


def _require_nonneg_v(values, points, what="V"):
    worst = min(values)
    if worst < -1e-9:
        k = int(np.argmin(values))
        raise CertificateError(
            f"{what} is negative ({worst:.3e}) at x={tuple(points[k])}")


def check(cert: Certificate, sys: SdeSystem) -> CheckReport:
    """Certify ``cert`` against ``sys`` on the region grid.

    Margins are oriented so that nonpositive means the inequality holds;
    the report carries the worst margin and its witness point.  A pass is
    grid-certified only: it asserts the inequality on the sampled points,
    not a proof over the continuum.
    """
    if cert.region.dim != sys.dim:
        raise CertificateError(
            f"region dimension {cert.region.dim} != system dim {sys.dim}")
    consts = {**sys.constants, **cert.constants}
    ts = cert.region.t_points()
    X = cert.region.x_points()
    if X.shape[0] == 0:
        raise CertificateError("region grid is empty after exclusion")
    notes = []

    def slot_t(name):
        return _fn_of_t(cert.slots[name], consts)

    def slot_r(name):
        return _fn_of_radius(cert.slots[name], consts)

    worst = -math.inf
    wit = (0.0, tuple(X[0]))

    def consider(margin, t, x):
        nonlocal worst, wit
        if margin > worst:
            worst = margin
            wit = (float(t), tuple(float(v) for v in x))

    kind = cert.kind
    if kind in ("regularity-affine", "regularity-bihari"):
        gam, alp = slot_t("gamma"), slot_t("alpha")
        r_exp = cert.params.get("r") if kind == "regularity-bihari" else 1.0
        for t in ts:
            gt, at = gam(t), alp(t)
            for x in X:
                v, grad, hess, dvdt = _v_derivatives(cert.V, t, x, consts)
                if v < -1e-9:
                    raise CertificateError(
                        f"V is negative ({v:.3e}) at x={tuple(x)}")
                f = sys.drift_value(t, x)
                a = sys.diffusion_squared(t, x)
                lv = dvdt + f @ grad + 0.5 * np.sum(a * hess)
                consider(lv - (gt * v ** r_exp + at), t, x)
        ok_growth, note = _radial_inf_growth(
            cert.V, consts, cert.region,
            threshold=cert.params.get("growth_threshold", 1.0))
        notes.append(note)
        notes.append("time integrability of gamma, alpha is user-asserted")
        passed = worst <= cert.margin_tol and ok_growth
        if not ok_growth:
            notes.append("radial infimum growth check failed")

    elif kind == "monotone-growth":
        ratios = []
        for t in ts:
            for x in X:
                f = sys.drift_value(t, x)
                s = sys.diffusion_value(t, x)
                q = float(x @ f) + 0.5 * float(np.sum(s * s))
                ratios.append((q / (1.0 + float(x @ x)), t, x))
        k_grid = max(r for r, _, _ in ratios)
        k_eff = cert.params.get("K", k_grid)
        for r, t, x in ratios:
            consider(r - k_eff, t, x)
        notes.append(f"grid growth constant K={k_grid:.6g}")
        passed = worst <= cert.margin_tol

    elif kind == "nonregularity-bounded":
        abar = slot_t("alpha_bar")
        v_seen = -math.inf
        for t in ts:
            at = abar(t)
            for x in X:
                v, grad, hess, dvdt = _v_derivatives(cert.V, t, x, consts)
                if v < -1e-9:
                    raise CertificateError(
                        f"V is negative ({v:.3e}) at x={tuple(x)}")
                v_seen = max(v_seen, v)
                f = sys.drift_value(t, x)
                a = sys.diffusion_squared(t, x)
                lv = dvdt + f @ grad + 0.5 * np.sum(a * hess)
                consider(at * v - lv, t, x)
        passed = worst <= cert.margin_tol
        notes.append(f"grid sup V = {v_seen:.6g}")
        if "v_sup" in cert.params and v_seen > cert.params["v_sup"] + 1e-9:
            passed = False
            notes.append("declared essential bound on V violated on grid")
        if "x0" in cert.params:
            x0 = np.atleast_1d(np.asarray(cert.params["x0"], float))
            v0 = _v_derivatives(cert.V, 0.0, x0, consts)[0]
            notes.append(f"V(0,x0)={v0:.6g}")
            if v0 <= 0.0:
                passed = False
                notes.append("V(0,x0) must be positive")
        notes.append("divergence of the alpha_bar time integral is "
                     "user-asserted")

    elif kind in ("recurrence-min", "recurrence-decay"):
        nu, mu = slot_t("nu"), slot_r("mu")
        for t in ts:
            nut = nu(t)
            for x in X:
                v, grad, hess, dvdt = _v_derivatives(cert.V, t, x, consts)
                if v < -1e-9:
                    raise CertificateError(
                        f"V is negative ({v:.3e}) at x={tuple(x)}")
                f = sys.drift_value(t, x)
                sig = sys.diffusion_value(t, x)
                a = sig @ sig.T
                lv = dvdt + f @ grad + 0.5 * np.sum(a * hess)
                mur = mu(math.sqrt(float(x @ x)))
                if kind == "recurrence-decay":
                    bound = nut - mur
                else:
                    noise = float(np.sum((grad @ sig) ** 2))
                    bound = min(nut, nut + noise - mur)
                consider(lv - bound, t, x)
        ok_growth, note = _radial_inf_growth(
            cert.V, consts, cert.region,
            threshold=cert.params.get("growth_threshold", 1.0))
        notes.append(note)
        notes.append("time integrability of nu is user-asserted")
        passed = worst <= cert.margin_tol and ok_growth
        if not ok_growth:
            notes.append("radial infimum growth check failed")

    elif kind == "recurrence-time-decay":
        alp = slot_t("alpha")
        for t in ts:
            at = alp(t)
            for x in X:
                v, grad, hess, dvdt = _v_derivatives(cert.V, t, x, consts)
                if v < -1e-9:
                    raise CertificateError(
                        f"V is negative ({v:.3e}) at x={tuple(x)}")
                f = sys.drift_value(t, x)
                a = sys.diffusion_squared(t, x)
                lv = dvdt + f @ grad + 0.5 * np.sum(a * hess)
                consider(lv + at, t, x)
        ok_growth, note = _radial_inf_growth(
            cert.V, consts, cert.region,
            threshold=cert.params.get("growth_threshold", 1.0))
        notes.append(note)
        notes.append("divergence of the alpha time integral is user-asserted")
        passed = worst <= cert.margin_tol and ok_growth
        if not ok_growth:
            notes.append("radial infimum growth check failed")

    elif kind == "recurrence-radial-log":
        mu = slot_r("mu")
        X_all = cert.region.x_points(with_exclusion=False)
        glob = []
        for t in ts:
            for x in X_all:
                f = sys.drift_value(t, x)
                a = sys.diffusion_squared(t, x)
                r2 = float(x @ x)
                q = 2.0 * float(x @ f) + float(np.trace(a))
                xax = float(x @ a @ x)
                glob.append((q / (1.0 + r2) - 2.0 * xax / (1.0 + r2) ** 2,
                             t, x))
        alpha_grid = max(g for g, _, _ in glob)
        alpha_const = cert.params.get("alpha_const", alpha_grid)
        for g, t, x in glob:
            consider(g - alpha_const, t, x)
        notes.append(f"grid log-radial growth constant {alpha_grid:.6g}")
        for t in ts:
            for x in X:
                r2 = float(x @ x)
                if r2 < 1e-18:
                    continue
                f = sys.drift_value(t, x)
                a = sys.diffusion_squared(t, x)
                q = 2.0 * float(x @ f) + float(np.trace(a))
                xax = float(x @ a @ x)
                consider(q / r2 - 2.0 * xax / r2 ** 2
                         + mu(math.sqrt(r2)), t, x)
        passed = worst <= cert.margin_tol

    elif kind == "nonrecurrence-radial":
        theta = slot_r("theta")
        a_in = cert.params["a"]
        pd_ok = True
        for t in ts:
            for x in X:
                r = math.sqrt(float(x @ x))
                if r < a_in:
                    continue
                amat = sys.diffusion_squared(t, x)
                if not _positive_definite(amat):
                    pd_ok = False
                    consider(math.inf, t, x)
                    continue
                consider(theta(r) - _radial_ratio(sys, t, x, amat), t, x)
        passed = pd_ok and worst <= cert.margin_tol
        if not pd_ok:
            notes.append("diffusion matrix not positive definite on grid")
        if worst == -math.inf:
            raise CertificateError("no grid points at radius >= a")

    else:  # pragma: no cover - guarded by __post_init__
        raise CertificateError(f"unknown kind {kind!r}")

    return CheckReport(kind=kind, passed=bool(passed),
                       worst_margin=float(worst), witness_t=wit[0],
                       witness_x=wit[1], grid=cert.region.describe(),
                       notes="; ".join(notes))


# ---------------------------------------------------------------------------
# Radial comparison machinery for non-recurrence
# ---------------------------------------------------------------------------

def _positive_definite(a):
    """Sylvester leading-minor test with a hand-rolled determinant (the
    matrices here are tiny)."""
    a = np.asarray(a, float)
    n = a.shape[0]
    for k in range(1, n + 1):
        if _det(a[:k, :k]) <= 0.0:
            return False
    return True


def _det(m):
    m = np.array(m, float)
    n = m.shape[0]
    sign = 1.0
    for i in range(n):
        p = i + int(np.argmax(np.abs(m[i:, i])))
        if abs(m[p, i]) < 1e-300:
            return 0.0
        if p != i:
            m[[i, p]] = m[[p, i]]
            sign = -sign
        for j in range(i + 1, n):
            m[j, i:] -= (m[j, i] / m[i, i]) * m[i, i:]
    return sign * float(np.prod(np.diag(m)))


def _radial_ratio(sys, t, x, amat=None):
    """S(t,x) = (B + C - A)/A with A the radial diffusion coefficient,
    B the trace, C twice the radial drift component."""
    x = np.atleast_1d(np.asarray(x, float))
    r2 = float(x @ x)
    if amat is None:
        amat = sys.diffusion_squared(t, x)
    A = float(x @ amat @ x) / r2
    B = float(np.trace(amat))
    C = 2.0 * float(x @ sys.drift_value(t, x))
    return (B + C - A) / A


@dataclass(frozen=True)
class PhiTable:
    """Tabulated decreasing radial comparison function.

    ``phi`` holds positive, strictly decreasing values on the radii ``r``;
    ``tail`` is the exponential-extrapolation estimate of the mass beyond
    the table (already included in ``phi``).  ``integrable`` records the
    dyadic-decay probe of the defining integral; when False the
    probability bound does not apply.
    """

    r: np.ndarray
    phi: np.ndarray
    integrable: bool
    tail: float
    a: float

    def __call__(self, radius: float) -> float:
        if not self.r[0] <= radius <= self.r[-1]:
            raise ValueError(f"radius {radius!r} outside the table")
        # interpolate on log(phi): the values span many decades
        return float(math.exp(np.interp(radius, self.r, np.log(self.phi))))


def nonrecurrence_phi(sys: SdeSystem, a: float, theta, constants=None,
                      r_check: float = None, t_check: float = 0.0,
                      n_tab: int = 2001, n_dirs: int = 8) -> PhiTable:
    """Build the radial comparison function certifying non-recurrence.

    Verifies on a grid that the diffusion matrix is positive definite and
    that the radial ratio S dominates ``theta`` for radii at and beyond
    ``a``, then tabulates

        Phi(r) = int_r^inf exp(-int_a^t theta(s)/s ds) dt

    on ``[a, R]`` with R grown until the integrand is negligible or the
    dyadic probe reports divergence.  The tail beyond R is estimated from
    the terminal log-slope of the integrand (an underestimate for
    subexponential decay) and folded into the table.

    Raises
    ------
    CertificateError
        If positive definiteness or the S >= theta comparison fails.
    """
    theta_e = parse(theta, dim=1, constants=tuple(constants or ())) \
        if isinstance(theta, str) else theta
    consts = {**sys.constants, **(constants or {})}
    th = _fn_of_radius(theta_e, consts)
    if a <= 0:
        raise ValueError("inner radius a must be positive")

    r_check = r_check if r_check is not None else 4.0 * a
    dirs = _directions(sys.dim, n_dirs)
    ts = [0.0] if t_check == 0.0 else np.linspace(0.0, t_check, 5)
    for t in ts:
        for r in np.linspace(a, r_check, 25):
            for d in dirs:
                x = r * d
                amat = sys.diffusion_squared(t, x)
                if not _positive_definite(amat):
                    raise CertificateError(
                        f"diffusion matrix not positive definite at "
                        f"t={t:g}, x={tuple(x)}")
                s_val = _radial_ratio(sys, t, x, amat)
                if s_val < th(r) - 1e-9:
                    raise CertificateError(
                        f"radial ratio S={s_val:.6g} below theta({r:g})="
                        f"{th(r):.6g} at t={t:g}, x={tuple(x)}")

    def exponent(tv):
        val, _ = quad(lambda s: th(s) / s, a, tv, limit=200)
        return val

    # grow the table until the integrand decays out, probing dyadic blocks
    R = max(4.0 * a, 10.0)
    blocks = []
    g_at = lambda tv: math.exp(-exponent(tv))
    prev_R = a
    while True:
        val, _ = quad(g_at, prev_R, R, limit=400)
        blocks.append(val)
        if g_at(R) < 1e-18 * g_at(a):
            integrable = True
            break
        if R > 1e4 * a:
            ratio = blocks[-1] / blocks[-2] if len(blocks) > 1 else 1.0
            integrable = ratio <= 0.98 and blocks[-1] < blocks[-2]
            break
        prev_R = R
        R *= 2.0

    tab_r = np.linspace(a, R, n_tab)
    log_g = np.array([-exponent(tv) for tv in tab_r])
    g = np.exp(log_g)
    # reverse cumulative integral of g on the table
    phi = np.concatenate([
        np.array([simpson(g[i:], x=tab_r[i:]) for i in range(n_tab - 2)]),
        [0.5 * (g[-2] + g[-1]) * (tab_r[-1] - tab_r[-2]), 0.0]])
    lam = (log_g[-2] - log_g[-1]) / (tab_r[-1] - tab_r[-2])
    tail = g[-1] / lam if (integrable and lam > 0) else 0.0
    phi = phi + tail
    if np.any(np.diff(phi) >= 0.0) or np.any(phi[:-1] <= 0.0):
        raise CertificateError("comparison function failed to decrease "
                               "strictly; widen the table")
    if not integrable:
        warnings.warn("defining integral shows no decay; the probability "
                      "bound does not apply", stacklevel=2)
    if phi[0] > 0 and (tail + phi[-1]) / phi[0] > 1e-6 and integrable:
        warnings.warn("table tail is not negligible; the bound may be "
                      "loose", stacklevel=2)
    return PhiTable(r=tab_r, phi=phi, integrable=integrable,
                    tail=float(tail), a=float(a))


def nonrecurrence_bound(phi: PhiTable, x0, alpha: float) -> float:
    """Upper bound on the probability of ever reaching radius ``alpha``
    from ``x0``: the ratio phi(|x0|)/phi(alpha).
    """
    if not phi.integrable:
        raise ValueError("comparison function not integrable; "
                         "the bound does not apply")
    x0 = np.atleast_1d(np.asarray(x0, float))
    r0 = math.sqrt(float(x0 @ x0))
    if r0 < alpha - 1e-12:
        raise ValueError("starting radius must be at least alpha")
    if abs(r0 - alpha) <= 1e-12:
        warnings.warn("starting point on the target sphere; bound is the "
                      "trivial 1", stacklevel=2)
        return 1.0
    return phi(r0) / phi(alpha)


# ---------------------------------------------------------------------------
# Bounds from recurrence certificates
# ---------------------------------------------------------------------------

def _boundary_points(domain: Domain, dim: int, n_dirs=16):
    dirs = _directions(dim, n_dirs)
    k, p = domain.kind, domain.params
    if k == "interval":
        if dim != 1:
            raise ValueError("interval target is 1-D only")
        return np.array([[p[0]], [p[1]]])
    if k in ("ball", "complement_ball"):
        return p[0] * dirs
    return np.vstack([p[0] * dirs, p[1] * dirs])


def _inf_on_boundary(V, domain, dim, constants, t_check=1.0, n_t=5):
    pts = _boundary_points(domain, dim)
    ts = np.linspace(0.0, t_check, n_t) if t_check > 0 else np.array([0.0])
    return min(_v_derivatives(V, t, x, constants)[0]
               for t in ts for x in pts)


def mean_residence_bound(V, nu, mu, domain: Domain, x0, constants=None,
                         t_check: float = 1.0, t_tail: float = 100.0,
                         nu_tail: float = 0.0) -> float:
    """Upper bound on the mean residence time outside the target set:

        (V(0,x0) + int_0^inf nu(t) dt - inf_boundary V) / mu(r)

    with r the smallest boundary radius of the target.  Valid once the
    matching recurrence certificate has passed (caller's responsibility).
    The nu integral is adaptive on [0, t_tail]; any analytic remainder is
    supplied via ``nu_tail``.
    """
    consts = dict(constants or {})
    x0 = np.atleast_1d(np.asarray(x0, float))
    dim = x0.size
    names = tuple(consts)
    if isinstance(V, str):
        V = parse(V, dim=dim, constants=names)
    nu_e = parse(nu, dim=1, constants=names) if isinstance(nu, str) else nu
    mu_e = parse(mu, dim=1, constants=names) if isinstance(mu, str) else mu
    r = domain.inner_radius
    mur = _fn_of_radius(mu_e, consts)(r)
    if mur <= 0.0:
        raise ValueError("mu at the boundary radius must be positive")
    nu_int, _ = quad(_fn_of_t(nu_e, consts), 0.0, t_tail, limit=400)
    nu_int += nu_tail
    v0 = _v_derivatives(V, 0.0, x0, consts)[0]
    inf_v = _inf_on_boundary(V, domain, dim, consts, t_check)
    return max(0.0, (v0 + nu_int - inf_v) / mur)


def mgf_bound(V, rate: float, domain: Domain, x0, constants=None,
              t_check: float = 1.0) -> float:
    """Upper bound on E[exp(rate * tau)]: V(0,x0)/inf_boundary V.

    Requires the exponential-decay certificate L V <= -rate V with
    V >= mu1(|x|) (caller's responsibility); the rate itself does not
    enter the ratio.  The ratio is 1 exactly on the boundary.
    """
    consts = dict(constants or {})
    x0 = np.atleast_1d(np.asarray(x0, float))
    dim = x0.size
    if isinstance(V, str):
        V = parse(V, dim=dim, constants=tuple(consts))
    inf_v = _inf_on_boundary(V, domain, dim, consts, t_check)
    if inf_v <= 0.0:
        raise ValueError("V must be positive on the target boundary")
    v0 = _v_derivatives(V, 0.0, x0, consts)[0]
    ratio = v0 / inf_v
    if ratio < 1.0 - 1e-9:
        raise ValueError(
            "V(0,x0) below its boundary infimum; the starting point does "
            "not sit outside the target set for this V")
    return max(1.0, float(ratio))


# ---------------------------------------------------------------------------
# Explicit constructions and diagnostics
# ---------------------------------------------------------------------------

def construct_bounded_complement_V(kind: str, R: float, c_R: float,
                                   c_hat: float, coordinate: int = 0,
                                   dim: int = 1):
    """Explicit bounded V with guaranteed generator decay on {|x| <= R}.

    For unit-lower-bounded diagonal diffusion with drift bounded by
    ``c_R`` (coordinate-wise as encoded by ``c_hat``), returns a bounded,
    nonnegative V of one coordinate together with the decay constant d
    such that L V <= -d holds on the ball; the caller verifies the
    inequality on an actual system via :func:`generator`.

    kind "poly": V = K - (x_i - 2R)^(2m), smallest m with 2m-1 >= 6 R c_R,
    K = (3R)^(2m); decay 2 m c_hat R^(2m-1).
    kind "exp":  V = e^(q R) - e^(q x_i), q = sqrt(2 c_R);
    decay q e^(-q R) c_hat.
    """
    if R <= 0 or c_R <= 0 or c_hat <= 0:
        raise ValueError("R, c_R, c_hat must be positive")
    if not 0 <= coordinate < dim:
        raise ValueError("coordinate index out of range")
    xi = f"x{coordinate + 1}"
    if kind == "poly":
        m = math.ceil((6.0 * R * c_R + 1.0) / 2.0)
        K = (3.0 * R) ** (2 * m)
        src = f"{K!r} - ({xi} - {2.0 * R!r})^{2 * m}"
        decay = 2.0 * m * c_hat * R ** (2 * m - 1)
    elif kind == "exp":
        q = math.sqrt(2.0 * c_R)
        src = f"{math.exp(q * R)!r} - exp({q!r} * {xi})"
        decay = q * math.exp(-q * R) * c_hat
    else:
        raise ValueError("kind must be 'poly' or 'exp'")
    return parse(src, dim=dim), float(decay)


def lipschitz_spot_check(sys: SdeSystem, lows, highs, n_pairs: int = 200,
                         t: float = 0.0, seed: int = 97) -> float:
    """Largest observed difference quotient of the drift over random point
    pairs in a box; a reported diagnostic, never a proof of Lipschitz
    continuity."""
    lows = np.asarray(lows, float)
    highs = np.asarray(highs, float)
    dim = lows.size
    worst = 0.0
    for i in range(n_pairs):
        key = path_key_py(seed, i)
        u = np.array([uniform_py(key, j) for j in range(2 * dim)])
        x = lows + (highs - lows) * u[:dim]
        y = lows + (highs - lows) * u[dim:]
        d = math.sqrt(float((x - y) @ (x - y)))
        if d < 1e-12:
            continue
        fx = sys.drift_value(t, x)
        fy = sys.drift_value(t, y)
        worst = max(worst, math.sqrt(float((fx - fy) @ (fx - fy))) / d)
    return worst


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

def format_check_report(report: CheckReport) -> str:
    """One-paragraph text rendering of a check report."""
    verdict = "PASS" if report.passed else "FAIL"
    x = ", ".join(f"{v:.6g}" for v in report.witness_x)
    lines = [f"{report.kind}: {verdict} (grid-certified)",
             f"  worst margin {report.worst_margin:.6g} at "
             f"t={report.witness_t:.6g}, x=({x})",
             f"  grid {report.grid}"]
    if report.notes:
        lines.append(f"  notes: {report.notes}")
    return "\n".join(lines)


def write_check_reports_csv(path, reports):
    """CSV dump: kind,pass,worst_margin,witness_t,witness_x,grid."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "pass", "worst_margin", "witness_t",
                    "witness_x", "grid"])
        for r in reports:
            w.writerow([r.kind, "true" if r.passed else "false",
                        f"{r.worst_margin:.10g}", f"{r.witness_t:.10g}",
                        ";".join(f"{v:.10g}" for v in r.witness_x),
                        r.grid])
