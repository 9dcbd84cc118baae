"""Full-pipeline checks at fixed operating points.

Each test ties several modules together: the Dirichlet solver against the
quadrature oracle and against simulation, certificate verdicts against
closed-form recurrence classifications, and synthesized controllers against
simulated hit probabilities.  Path counts, step sizes, and horizons are
pinned so repeated runs see identical numbers.
"""

import math
import time
from types import SimpleNamespace

import numpy as np
import pytest

from residence_lab.cli import bench_table1
from residence_lab.control import (AimingProblem, lyapunov_solve,
                                   synthesize_linear, synthesize_nonlinear,
                                   verify_probability)
from residence_lab.expr import eval_expr, grad_hess, parse, to_source
from residence_lab.lyap import (Certificate, Region, check, generator,
                                mean_residence_bound, mgf_bound)
from residence_lab.mc import (aggregate, chebyshev_mean_bound,
                              chebyshev_mgf_bound)
from residence_lab.pde import (DirichletSpec, quadrature_oracle,
                               solve_mean_residence_1d)
from residence_lab.sde import (Domain, gbm_cubic, linear_system, ou,
                               poly_drift_unit_noise, simulate_paths)

TARGET = Domain.ball(1.0)
X0_GRID = (1.5, 2.0, 2.5, 3.0)

# half-order boundary offset of a discretely monitored hitting time:
# the effective barrier sits ~0.5826 * sigma * sqrt(dt) inside the true one
_BOUNDARY_OFFSET = 0.5826


@pytest.fixture(scope="module")
def table1_rows():
    t0 = time.time()
    rows = bench_table1(n_nodes=10000)
    return SimpleNamespace(rows=rows, elapsed=time.time() - t0)


@pytest.fixture(scope="module")
def residence_cells():
    """Solver, oracle, and 1e5-path simulation for all eight table cells."""
    t0 = time.time()
    cells = []
    for m, drift, x_right in ((1, "-x1", 6.0), (3, "-x1^3", 3.0)):
        table = solve_mean_residence_1d(
            DirichletSpec(drift, x_right=x_right, n_nodes=10000))
        h = table.x[1] - table.x[0]
        slope = (-3.0 * table.tau[0] + 4.0 * table.tau[1]
                 - table.tau[2]) / (2.0 * h)
        for x0 in X0_GRID:
            stats = aggregate(simulate_paths(poly_drift_unit_noise(m),
                                             TARGET, [x0], 100000, 1e-4,
                                             50.0))
            cells.append(SimpleNamespace(
                m=m, drift=drift, x0=x0, tau_pde=float(table.tau_at(x0)),
                tau_oracle=quadrature_oracle(drift, 1.0, x0), stats=stats,
                boundary_slope=slope))
    return SimpleNamespace(cells=cells, elapsed=time.time() - t0)


# ---------------------------------------------------------------------------
# Mean residence table: runtime, self-consistency, recorded values
# ---------------------------------------------------------------------------

def test_residence_table_is_fast_and_self_consistent(table1_rows):
    assert table1_rows.elapsed <= 10.0
    rows = table1_rows.rows
    assert len(rows) == 8
    for drift, x0, tau_pde, tau_oracle, tau_mc, bound in rows:
        assert tau_pde == pytest.approx(tau_oracle, abs=1e-4)
        assert bound == pytest.approx(x0 ** 2 - 1.0)
        assert math.isnan(tau_mc)
    assert [r[0] for r in rows] == ["-x1"] * 4 + ["-x1^3"] * 4


_RECORDED_MEANS = (0.4812779, 0.7956221, 1.0306462, 1.2193076,
                   0.3231637, 0.4235235, 0.4690177, 0.4935798)


@pytest.mark.xfail(strict=True, reason=(
    "the recorded means disagree with the solver, the quadrature oracle, "
    "and simulation, which all agree with one another to 5e-3"))
def test_residence_table_matches_recorded_values(table1_rows):
    for row, want in zip(table1_rows.rows, _RECORDED_MEANS):
        assert row[2] == pytest.approx(want, abs=2e-3)


# ---------------------------------------------------------------------------
# Three-way agreement: solver, quadrature oracle, simulation
# ---------------------------------------------------------------------------

def test_solver_matches_quadrature_oracle(residence_cells):
    assert residence_cells.elapsed <= 300.0
    for cell in residence_cells.cells:
        assert cell.tau_pde == pytest.approx(cell.tau_oracle, abs=1e-3)
        assert cell.stats.n_censored == 0 and cell.stats.n_escaped == 0


@pytest.mark.xfail(strict=True, reason=(
    "discrete-time hit detection biases the mean hitting time upward by "
    "about 0.58 * sigma * sqrt(dt) * tau'(delta), which exceeds three "
    "standard errors of a 1e5-path mean at dt = 1e-4"))
def test_simulation_matches_solver_within_three_standard_errors(
        residence_cells):
    for cell in residence_cells.cells:
        gap = abs(cell.stats.mean_tau - cell.tau_pde)
        assert gap <= 3.0 * cell.stats.se_mean


def test_simulation_bias_is_half_order_in_dt(residence_cells):
    for cell in residence_cells.cells:
        allowance = _BOUNDARY_OFFSET * math.sqrt(1e-4) * cell.boundary_slope
        gap = cell.stats.mean_tau - cell.tau_pde
        assert 0.0 < gap <= allowance + 3.0 * cell.stats.se_mean

    fine = next(c for c in residence_cells.cells
                if c.m == 1 and c.x0 == 2.0)
    coarse = aggregate(simulate_paths(poly_drift_unit_noise(1), TARGET,
                                      [2.0], 100000, 4e-4, 50.0))
    coarse_gap = coarse.mean_tau - fine.tau_pde
    allowance = _BOUNDARY_OFFSET * math.sqrt(4e-4) * fine.boundary_slope
    assert 0.0 < coarse_gap <= allowance + 3.0 * coarse.se_mean
    assert fine.stats.mean_tau - fine.tau_pde < coarse_gap


# ---------------------------------------------------------------------------
# Bound dominance
# ---------------------------------------------------------------------------

def test_empirical_means_respect_quadratic_bound(residence_cells):
    for cell in residence_cells.cells:
        bound = cell.x0 ** 2 - 1.0
        assert cell.stats.mean_tau <= bound + 3.0 * cell.stats.se_mean


def test_closed_loop_tail_and_mgf_bounds_dominate():
    problem = AimingProblem(T=float(np.log(4.0)), p=0.5, delta=1.0,
                            x0=(1.4,))
    result = synthesize_nonlinear("sin(x1)", "sqrt(1 + x1^2)", problem,
                                  mode="exponential")
    assert result.admissible

    stats = aggregate(simulate_paths(result.closed_loop, TARGET, [1.4],
                                     20000, 2e-4, 20.0),
                      T_list=(0.5, 1.0, 2.0), lambda_list=(1.0,))
    assert stats.n_censored == 0

    # E[e^tau] <= V(x0) / inf_boundary V for V = x^2/2 with L V = -V
    ratio = mgf_bound("0.5 * x1^2", 1.0, TARGET, [1.4])
    assert ratio == pytest.approx(1.96)
    est, se = stats.mgf_at(1.0)
    assert est <= ratio + 3.0 * se

    # P(tau > T) <= ratio * e^{-T}
    for T in (0.5, 1.0, 2.0):
        p, se = stats.p_hit(T)
        tail_bound = chebyshev_mgf_bound(0.5 * 1.4 ** 2, 0.5, 1.0, T)
        assert 1.0 - p <= tail_bound + 3.0 * se

    # mean route: E[tau] <= (V(x0) - inf V) / mu(1), then Markov
    mean_cap = mean_residence_bound("0.5 * x1^2", "0", "0.5 * x1^2",
                                    TARGET, [1.4])
    assert mean_cap == pytest.approx(0.96)
    assert stats.mean_tau + 3.0 * stats.se_mean <= mean_cap
    p2, se2 = stats.p_hit(2.0)
    assert 1.0 - p2 <= chebyshev_mean_bound(mean_cap, 2.0) + 3.0 * se2


# ---------------------------------------------------------------------------
# Recurrence dichotomy under multiplicative noise
# ---------------------------------------------------------------------------

def _decay_certificate():
    return Certificate(
        "recurrence-decay",
        Region(lows=(1.0,), highs=(8.0,), exclude=Domain.ball(1.0)),
        V="abs(x1)^0.25",
        slots={"nu": "0", "mu": "0.03125 * x1^0.25"})


def test_subcritical_multiplicative_noise_always_hits():
    stats = aggregate(simulate_paths(gbm_cubic(0.25, 1.0, 0.0), TARGET,
                                     [2.0], 20000, 1e-3, 200.0,
                                     r_escape=1e8),
                      T_list=(200.0,))
    p, _ = stats.p_hit(200.0)
    assert p >= 0.999
    assert check(_decay_certificate(), gbm_cubic(0.25, 1.0, 0.0)).passed


def test_critical_multiplicative_noise_hits_half_the_time():
    stats = aggregate(simulate_paths(gbm_cubic(1.0, 1.0, 0.0), TARGET,
                                     [2.0], 20000, 2e-5, 200.0,
                                     r_escape=1e4),
                      T_list=(200.0,))
    p, se = stats.p_hit(200.0)
    # closed form: hit probability from x0 is (x0/delta)^(1 - 2 a1/a2) = 1/2
    assert abs(p - 0.5) <= 3.0 * se
    assert not check(_decay_certificate(), gbm_cubic(1.0, 1.0, 0.0)).passed


# ---------------------------------------------------------------------------
# Linear-drift dichotomy
# ---------------------------------------------------------------------------

def test_outward_linear_drift_rarely_hits():
    stats = aggregate(simulate_paths(ou(1.0, 1.0), TARGET, [2.0], 20000,
                                     1e-3, 100.0),
                      T_list=(100.0,))
    p, se = stats.p_hit(100.0)
    assert p <= math.erfc(2.0) / math.erfc(1.0) + 3.0 * se


def test_inward_linear_drift_always_hits():
    stats = aggregate(simulate_paths(ou(-1.0, 1.0), TARGET, [2.0], 20000,
                                     1e-3, 50.0),
                      T_list=(50.0,))
    p, _ = stats.p_hit(50.0)
    assert p >= 0.999


# ---------------------------------------------------------------------------
# Linear synthesis end to end
# ---------------------------------------------------------------------------

def test_linear_synthesis_hand_case_end_to_end():
    problem = AimingProblem(T=1.0, p=0.9, delta=1.0, x0=(2.0, 0.0))
    result = synthesize_linear(np.zeros((2, 2)), np.eye(2), np.eye(2),
                               -np.eye(2), problem)
    assert result.admissible
    assert result.gamma == pytest.approx(15.0, abs=1e-8)
    np.testing.assert_allclose(result.gain, -16.0 * np.eye(2), atol=1e-7)
    np.testing.assert_allclose(result.M, 2.0 * np.eye(2), atol=1e-9)
    assert result.a_gamma == pytest.approx(7.5)
    assert result.regularity.passed

    p_hat, se, ok = verify_probability(result, n_paths=100000, dt=2e-4)
    assert ok
    assert p_hat >= 0.9 - 3.0 * se


# ---------------------------------------------------------------------------
# Property sweeps
# ---------------------------------------------------------------------------

def test_expression_round_trip_and_derivatives():
    cases = [
        ("x1^3 - 2 * x1 * x2 + 1", lambda x: 3 * x[0] ** 2 - 2 * x[1]),
        ("log(1 + x1^2) * x2", lambda x: 2 * x[0] * x[1] / (1 + x[0] ** 2)),
    ]
    points = [np.array([0.7, -1.3]), np.array([2.0, 0.5])]
    for src, d_dx1 in cases:
        node = parse(src, dim=2)
        reparsed = parse(to_source(node), dim=2)
        for x in points:
            assert eval_expr(reparsed, 0.0, x) == \
                pytest.approx(eval_expr(node, 0.0, x), rel=1e-12)
            _, grad, _, _ = grad_hess(node, 0.0, x)
            assert grad[0] == pytest.approx(d_dx1(x), rel=1e-4)


def test_lyapunov_equation_residuals_on_random_stable_systems():
    rng = np.random.default_rng(314)
    for _ in range(100):
        n = int(rng.integers(1, 5))
        raw = rng.normal(size=(n, n))
        shift = max(np.linalg.eigvals(raw).real.max(), 0.0) + 1.0
        A = raw - shift * np.eye(n)
        C = rng.normal(size=(n, n))
        P = lyapunov_solve(A, C)
        Q = C @ C.T
        residual = np.abs(A @ P + P @ A.T + Q).max()
        assert residual <= 1e-10 * max(1.0, np.abs(Q).max())


def test_generator_matches_closed_forms():
    # powers of |x| under multiplicative noise
    for a1 in (0.25, 1.0):
        sys = gbm_cubic(a1, 1.0, 0.0)
        for x in (1.5, 3.0):
            want = 0.25 * (a1 - 0.375) * x ** 0.25
            assert generator(sys, "abs(x1)^0.25", 0.0, [x]) == \
                pytest.approx(want, rel=1e-5, abs=1e-8)

    # quadratic form on a linear system, against the matrix identity
    A = np.array([[0.0, 1.0], [-2.0, -3.0]])
    sys = linear_system(A, None, np.eye(2))
    for x in (np.array([1.0, 2.0]), np.array([-0.5, 0.3])):
        want = float(x @ (A + A.T) @ x) + 2.0
        assert generator(sys, "x1^2 + x2^2", 0.0, x) == \
            pytest.approx(want, rel=1e-6)

    # drift -x annihilates the radial integral of its scale density exp(y^2)
    from residence_lab.lyap import RadialIntegralV
    V = RadialIntegralV("exp(x1^2)")
    for x in (1.2, 2.0, -1.7):
        assert abs(generator(ou(-1.0, 1.0), V, 0.0, [x])) <= 1e-6


def test_simulation_deterministic_across_thread_counts():
    runs = []
    for threads in (1, 3):
        res = simulate_paths(gbm_cubic(0.25, 1.0, 0.0), TARGET, [2.0], 500,
                             1e-3, 20.0, threads=threads)
        runs.append([(o.path_id, o.status, o.t_end, tuple(map(float,
                                                              o.x_final)))
                     for o in res.outcomes()])
    assert runs[0] == runs[1]
