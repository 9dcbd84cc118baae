"""Aiming synthesis and its desk-scale linear algebra against numpy/scipy."""

import csv
import math
import warnings

import numpy as np
import pytest
from scipy.linalg import solve_continuous_lyapunov

from residence_lab.control import (AimingProblem, ControlInfeasible,
                                   char_poly, format_synthesis,
                                   hurwitz_and_disturbable, invert_pd,
                                   jacobi_eigh, lyapunov_solve, matrix_rank,
                                   routh_hurwitz, solve_dense,
                                   synthesize_linear, synthesize_nonlinear,
                                   verify_probability, write_synthesis_csv)


# ---------------------------------------------------------------------------
# Dense linear algebra against numpy/scipy oracles
# ---------------------------------------------------------------------------

def test_char_poly_matches_numpy():
    rng = np.random.RandomState(7)
    for _ in range(50):
        n = rng.randint(1, 5)
        D = rng.randn(n, n)
        np.testing.assert_allclose(char_poly(D), np.poly(D),
                                   rtol=1e-8, atol=1e-10)


def test_routh_hurwitz_matches_eigenvalue_sign():
    rng = np.random.RandomState(11)
    checked = 0
    for _ in range(200):
        n = rng.randint(1, 5)
        D = rng.randn(n, n)
        re_max = float(np.max(np.real(np.linalg.eigvals(D))))
        if abs(re_max) < 1e-3:
            continue  # too close to marginal for either method
        assert routh_hurwitz(char_poly(D)) == (re_max < 0.0)
        checked += 1
    assert checked > 150


def test_routh_hurwitz_hand_cases():
    assert routh_hurwitz([1.0, 2.0])            # s + 2
    assert not routh_hurwitz([1.0, -1.0])       # s - 1
    assert not routh_hurwitz([1.0, 0.0, 1.0])   # s^2 + 1, marginal
    assert not routh_hurwitz([1.0, 1.0, 0.0])   # root at the origin
    assert routh_hurwitz([1.0])                 # constant
    assert routh_hurwitz([-1.0, -3.0, -2.0])    # sign-normalized


def test_matrix_rank_matches_numpy():
    rng = np.random.RandomState(13)
    for _ in range(50):
        rows, cols = rng.randint(1, 6, size=2)
        r = rng.randint(0, min(rows, cols) + 1)
        A = rng.randn(rows, r) @ rng.randn(r, cols) if r else \
            np.zeros((rows, cols))
        assert matrix_rank(A) == np.linalg.matrix_rank(A)
    assert matrix_rank(np.zeros((3, 3))) == 0


def test_jacobi_eigh_matches_numpy():
    rng = np.random.RandomState(17)
    for _ in range(30):
        n = rng.randint(1, 6)
        G = rng.randn(n, n)
        S = 0.5 * (G + G.T)
        evals, V = jacobi_eigh(S)
        np.testing.assert_allclose(evals, np.linalg.eigvalsh(S), atol=1e-9)
        np.testing.assert_allclose(V.T @ V, np.eye(n), atol=1e-9)
        np.testing.assert_allclose(S @ V, V @ np.diag(evals), atol=1e-8)


def test_jacobi_eigh_rejects_asymmetric():
    with pytest.raises(ValueError, match="symmetric"):
        jacobi_eigh([[0.0, 1.0], [0.0, 0.0]])


def test_solve_dense_matches_numpy():
    rng = np.random.RandomState(19)
    for _ in range(30):
        n = rng.randint(1, 6)
        A = rng.randn(n, n) + n * np.eye(n)
        b = rng.randn(n)
        np.testing.assert_allclose(solve_dense(A, b), np.linalg.solve(A, b),
                                   rtol=1e-9, atol=1e-12)
    with pytest.raises(ControlInfeasible, match="singular"):
        solve_dense(np.zeros((2, 2)), np.ones(2))


def test_invert_pd_matches_numpy():
    rng = np.random.RandomState(23)
    for _ in range(20):
        n = rng.randint(1, 5)
        G = rng.randn(n, n)
        P = G @ G.T + np.eye(n)
        inv, cond = invert_pd(P)
        np.testing.assert_allclose(inv, np.linalg.inv(P), rtol=1e-8,
                                   atol=1e-10)
        assert cond == pytest.approx(np.linalg.cond(P), rel=1e-6)


def test_invert_pd_refusals():
    with pytest.raises(ControlInfeasible, match="not positive definite"):
        invert_pd(np.diag([1.0, -1.0]))
    with pytest.raises(ControlInfeasible, match="refusing to invert"):
        invert_pd(np.diag([1e-13, 10.0]))


def test_hurwitz_and_disturbable_cases():
    assert hurwitz_and_disturbable(-np.eye(2), np.eye(2)) == (True, True)
    # D = -I makes [C, DC] rank one for a single input column
    assert hurwitz_and_disturbable(-np.eye(2), np.array([1.0, 0.0])) == \
        (True, False)
    assert hurwitz_and_disturbable(np.eye(2), np.eye(2))[0] is False
    with pytest.raises(ValueError, match="square"):
        hurwitz_and_disturbable(np.zeros((2, 3)), np.eye(2))


def test_lyapunov_solve_matches_scipy_on_seeded_stable_systems():
    rng = np.random.RandomState(29)
    done = 0
    while done < 100:
        n = rng.randint(1, 5)
        G = rng.randn(n, n)
        shift = float(np.max(np.real(np.linalg.eigvals(G)))) + 0.5
        D = G - shift * np.eye(n)
        C = rng.randn(n, n)
        if not all(hurwitz_and_disturbable(D, C)):
            continue
        Q = C @ C.T
        P = lyapunov_solve(D, C)
        np.testing.assert_allclose(P, solve_continuous_lyapunov(D, -Q),
                                   rtol=1e-7, atol=1e-9)
        res = D @ P + P @ D.T + Q
        assert np.max(np.abs(res)) <= 1e-10 * max(1.0, float(np.max(np.abs(Q))))
        done += 1


def test_lyapunov_solve_requires_hurwitz():
    with pytest.raises(ControlInfeasible, match="not Hurwitz"):
        lyapunov_solve(np.eye(2), np.eye(2))


def test_lyapunov_solve_warns_without_disturbability():
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        P = lyapunov_solve(-np.eye(2), np.array([1.0, 0.0]))
    assert any("disturbable" in str(w.message) for w in rec)
    np.testing.assert_allclose(P, np.diag([0.5, 0.0]), atol=1e-12)


# ---------------------------------------------------------------------------
# Problem validation
# ---------------------------------------------------------------------------

def test_aiming_problem_validation():
    good = AimingProblem(T=1.0, p=0.9, delta=1.0, x0=(2.0, 0.0))
    assert good.x0_norm == pytest.approx(2.0)
    assert good.dim == 2
    for kwargs in [dict(T=0.0, p=0.9, delta=1.0, x0=(2.0,)),
                   dict(T=1.0, p=1.0, delta=1.0, x0=(2.0,)),
                   dict(T=1.0, p=0.9, delta=0.0, x0=(2.0,)),
                   dict(T=1.0, p=0.9, delta=1.0, x0=(0.5,))]:
        with pytest.raises(ValueError):
            AimingProblem(**kwargs)


# ---------------------------------------------------------------------------
# Linear synthesis: fully hand-computable case
# ---------------------------------------------------------------------------

HAND = dict(A=np.zeros((2, 2)), B=np.eye(2), C=np.eye(2), D=-np.eye(2))
HAND_PROBLEM = AimingProblem(T=1.0, p=0.9, delta=1.0, x0=(2.0, 0.0))


def test_linear_synthesis_hand_case():
    # P = I/2, M = 2I, lhs = |x0|^2/4 = 1, a_gamma = gamma/2: the smallest
    # admissible damping solves 1 = 1/4 + 0.1 * gamma/2, so gamma = 15 and
    # the cancellation gain is -16 I
    res = synthesize_linear(problem=HAND_PROBLEM, **HAND)
    assert res.admissible
    assert res.gamma == pytest.approx(15.0, abs=1e-8)
    np.testing.assert_allclose(res.gain, -16.0 * np.eye(2), atol=1e-7)
    np.testing.assert_allclose(res.M, 2.0 * np.eye(2), atol=1e-10)
    assert res.a_gamma == pytest.approx(7.5, abs=1e-7)
    assert res.lhs == pytest.approx(1.0)
    assert res.rhs == pytest.approx(1.0, abs=1e-7)
    assert res.regularity.passed
    assert res.closed_loop.drift_value(0.0, [1.0, 0.0]) == \
        pytest.approx([-16.0, 0.0])
    np.testing.assert_allclose(res.closed_loop.diffusion_value(0.0, [1.0, 1.0]),
                               np.eye(2))


def test_linear_synthesis_failure_modes():
    with pytest.raises(ControlInfeasible, match="singular"):
        synthesize_linear(A=HAND["A"], B=np.zeros((2, 2)), C=HAND["C"],
                          D=HAND["D"], problem=HAND_PROBLEM)
    with pytest.raises(ControlInfeasible, match="not Hurwitz"):
        synthesize_linear(A=HAND["A"], B=HAND["B"], C=HAND["C"],
                          D=np.eye(2), problem=HAND_PROBLEM)
    with pytest.raises(ControlInfeasible, match="disturbable"):
        synthesize_linear(A=HAND["A"], B=HAND["B"],
                          C=np.array([[1.0], [0.0]]), D=HAND["D"],
                          problem=HAND_PROBLEM)
    far = AimingProblem(T=1.0, p=0.9, delta=1.0, x0=(1e6, 0.0))
    with pytest.raises(ControlInfeasible, match="no admissible gamma"):
        synthesize_linear(problem=far, **HAND)
    with pytest.raises(ValueError, match="dimension"):
        synthesize_linear(problem=AimingProblem(1.0, 0.9, 1.0, (2.0,)),
                          **HAND)


# ---------------------------------------------------------------------------
# Nonlinear cancellation synthesis
# ---------------------------------------------------------------------------

def _mean_problem(x0):
    # rhs = delta^2/2 + T(1-p) alpha delta^2 (1+delta^2)/2 = 1/2 + 5/2 = 3
    return AimingProblem(T=5.0, p=0.5, delta=1.0, x0=(x0,))


def test_nonlinear_mean_branch_admissibility_flip():
    ok = synthesize_nonlinear("sin(x1)", "sqrt(1 + x1^2)", _mean_problem(2.0))
    assert ok.branch == "mean"
    assert ok.admissible
    assert (ok.lhs, ok.rhs) == (pytest.approx(2.0), pytest.approx(3.0))
    # u cancels g and adds the -sigma_hat^2 x pull: drift -(1+x^2) x
    assert ok.closed_loop.drift_value(0.0, [2.0]) == pytest.approx([-10.0])
    assert ok.closed_loop.diffusion_value(0.0, [2.0])[0, 0] == \
        pytest.approx(2.0 * math.sqrt(5.0))

    bad = synthesize_nonlinear("sin(x1)", "sqrt(1 + x1^2)", _mean_problem(2.5))
    assert not bad.admissible
    assert bad.lhs == pytest.approx(3.125)
    assert bad.guarantee_p == 0.0


def test_nonlinear_exponential_branch_admissibility_flip():
    # rhs = e^(rate T) (1-p) delta^2/2 = 1 at rate=1, T=log 4, p=1/2
    prob = lambda x0: AimingProblem(T=math.log(4.0), p=0.5, delta=1.0,
                                    x0=(x0,))
    ok = synthesize_nonlinear("cos(x1)", "sqrt(1 + x1^2)", prob(1.4),
                              mode="exponential", rate=1.0)
    assert ok.admissible
    assert ok.lhs == pytest.approx(0.98)
    assert ok.rhs == pytest.approx(1.0)
    # drift -(sigma_hat^2 + rate) x/2
    assert ok.closed_loop.drift_value(0.0, [2.0]) == pytest.approx([-6.0])

    bad = synthesize_nonlinear("cos(x1)", "sqrt(1 + x1^2)", prob(1.5),
                               mode="exponential", rate=1.0)
    assert not bad.admissible


def test_nonlinear_target_branch():
    prob = AimingProblem(T=4.0, p=0.5, delta=1.0, x0=(1.5,))
    res = synthesize_nonlinear("x1^2", "1", prob, mode="target",
                               target="-x1^3", V="x1^2", mu="x1^4")
    # v0 = x0^2 = 2.25 against delta^2 + T(1-p) mu(delta) = 3
    assert res.admissible
    assert res.lhs == pytest.approx(2.25)
    assert res.rhs == pytest.approx(3.0)
    assert res.closed_loop.drift_value(0.0, [2.0]) == pytest.approx([-8.0])


def test_nonlinear_argument_validation():
    prob = _mean_problem(2.0)
    with pytest.raises(ValueError, match="scalar"):
        synthesize_nonlinear("0", "1", AimingProblem(1.0, 0.9, 1.0,
                                                     (2.0, 0.0)))
    with pytest.raises(ValueError, match="needs target drift and V"):
        synthesize_nonlinear("0", "1", prob, mode="target")
    with pytest.raises(ValueError, match="mu"):
        synthesize_nonlinear("0", "1", prob, mode="target", target="-x1",
                             V="x1^2")
    with pytest.raises(ValueError, match="mode must be"):
        synthesize_nonlinear("0", "1", prob, mode="median")


def test_nonlinear_certificate_failure_is_infeasible():
    prob = AimingProblem(T=4.0, p=0.5, delta=1.0, x0=(1.5,))
    with pytest.raises(ControlInfeasible, match="certificate failed"):
        synthesize_nonlinear("0", "1", prob, mode="target",
                             target="x1", V="x1^2", mu="x1^2")


# ---------------------------------------------------------------------------
# Monte Carlo verification and reporting
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def mean_synthesis():
    return synthesize_nonlinear("sin(x1)", "sqrt(1 + x1^2)", _mean_problem(2.0))


def test_verify_probability_on_strong_pull(mean_synthesis):
    p_hat, se, ok = verify_probability(mean_synthesis, n_paths=1000,
                                       dt=1e-3, seed=5)
    assert ok
    assert p_hat > 0.99
    assert se < 0.01


def test_format_and_csv(tmp_path, mean_synthesis):
    lin = synthesize_linear(problem=HAND_PROBLEM, **HAND)
    text = format_synthesis(lin, mc_summary=(0.93, 0.002, True))
    assert "admissible" in text and "gamma = 15" in text
    assert "meets" in text
    assert "NOT admissible" in format_synthesis(
        synthesize_nonlinear("sin(x1)", "sqrt(1 + x1^2)", _mean_problem(2.5)))

    path = tmp_path / "synthesis.csv"
    write_synthesis_csv(path, lin, mc_summary=(0.93, 0.002, True))
    with open(path) as fh:
        rows = {r["field"]: r["value"] for r in csv.DictReader(fh)}
    assert rows["branch"] == "linear"
    assert rows["admissible"] == "true"
    assert float(rows["gamma"]) == pytest.approx(15.0, abs=1e-8)
    assert rows["mc_meets_target"] == "true"
    assert "u1" in rows and "x1" in rows["u1"]
