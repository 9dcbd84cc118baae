"""Certificate checking: generator values, grid verdicts, and bounds."""

import csv
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import erfc

from residence_lab.lyap import (CERTIFICATE_KINDS, Certificate,
                                CertificateError, RadialIntegralV, Region,
                                check, construct_bounded_complement_V,
                                format_check_report, generator,
                                lipschitz_spot_check, mean_residence_bound,
                                mgf_bound, nonrecurrence_bound,
                                nonrecurrence_phi, write_check_reports_csv)
from residence_lab.sde import Domain, SdeSystem, gbm_cubic, ou


# ---------------------------------------------------------------------------
# Regions
# ---------------------------------------------------------------------------

def test_region_basics():
    r = Region(lows=(-3.0, -4.0), highs=(3.0, 4.0), n_x=5)
    assert r.dim == 2
    assert r.r_max == pytest.approx(5.0)
    assert Region().t_points().tolist() == [0.0]
    assert Region(t_max=2.0, n_t=3).t_points().tolist() == [0.0, 1.0, 2.0]


def test_region_exclusion_and_refinement():
    r = Region(lows=(-2.0,), highs=(2.0,), n_x=41, exclude=Domain.ball(1.0))
    X = r.x_points()
    assert np.all(np.abs(X[:, 0]) > 1.0)
    fine = r.refined()
    assert fine.n_x == 81
    assert set(np.round(r.x_points()[:, 0], 12)) <= \
        set(np.round(fine.x_points()[:, 0], 12))


def test_region_validation():
    with pytest.raises(CertificateError, match="equal length"):
        Region(lows=(0.0,), highs=(1.0, 2.0))
    with pytest.raises(CertificateError, match="below its high"):
        Region(lows=(1.0,), highs=(1.0,))
    with pytest.raises(CertificateError, match="too small"):
        Region(n_x=1)


# ---------------------------------------------------------------------------
# Generator against closed forms
# ---------------------------------------------------------------------------

def test_generator_quadratic_on_multiplicative_noise():
    # V = x^2/2, dX = a1 X dt + X dB: L V = (a1 + 1/2) x^2
    assert generator(gbm_cubic(0.0, 1.0, 0.0), "x1^2 / 2", 0.0, [2.0]) == \
        pytest.approx(2.0, rel=1e-6)
    assert generator(gbm_cubic(0.25, 1.0, 0.0), "x1^2 / 2", 0.0, [2.0]) == \
        pytest.approx(3.0, rel=1e-6)


def test_generator_log_potential():
    # V = log(1 + x^2) on dX = -X dt + dB at x = 2:
    # -x * 2x/(1+x^2) + (1 - x^2)/(1+x^2)^2 = -8/5 - 3/25
    assert generator(ou(-1.0, 1.0), "log(1 + x1^2)", 0.0, [2.0]) == \
        pytest.approx(-1.72, rel=1e-5)


def test_generator_time_dependent():
    sys_ = SdeSystem.from_expressions(["0"], [["1"]], dim=1)
    assert generator(sys_, "t * x1^2", 2.0, [3.0]) == pytest.approx(11.0, rel=1e-5)


def test_radial_integral_v_annihilates_linear_drift():
    # V(x) = int_0^|x| exp(y^2) dy makes L V identically zero for
    # dX = -X dt + dB
    V = RadialIntegralV("exp(x1^2)")
    for x in (0.5, 1.0, 2.0, -1.5):
        assert abs(generator(ou(-1.0, 1.0), V, 0.0, [x])) < 1e-6


def test_radial_integral_v_rejects_origin():
    with pytest.raises(CertificateError, match="kink at the origin"):
        RadialIntegralV("exp(x1^2)").derivatives(0.0, [0.0])


@given(st.floats(-2.0, 2.0), st.floats(-2.0, 2.0), st.floats(-2.0, 2.0),
       st.floats(-2.0, 2.0), st.floats(-2.0, 2.0), st.floats(-3.0, 3.0))
def test_generator_matches_closed_form_on_linear_systems(m, s, c0, c1, c2, x):
    sys_ = SdeSystem.from_expressions(
        ["m * x1"], [["s"]], dim=1,
        constants={"m": m, "s": s, "c0": c0, "c1": c1, "c2": c2})
    got = generator(sys_, "c0 + c1 * x1 + c2 * x1 ^ 2", 0.0, [x])
    want = m * x * (c1 + 2.0 * c2 * x) + s * s * c2
    assert got == pytest.approx(want, rel=1e-4, abs=1e-5)


# ---------------------------------------------------------------------------
# Certificate validation
# ---------------------------------------------------------------------------

def test_kind_catalog_is_published():
    assert "recurrence-decay" in CERTIFICATE_KINDS
    assert len(CERTIFICATE_KINDS) == 9


def test_certificate_validation_errors():
    reg = Region()
    excl = Region(exclude=Domain.ball(1.0))
    cases = [
        (dict(kind="nope", region=reg), "unknown certificate kind"),
        (dict(kind="recurrence-decay", region=excl, V="x1^2",
              slots={"nu": "0"}), "requires slots"),
        (dict(kind="monotone-growth", region=reg,
              slots={"gamma": "1"}), "does not accept slots"),
        (dict(kind="monotone-growth", region=reg,
              params={"r": 0.5}), "does not accept params"),
        (dict(kind="regularity-affine", region=reg,
              slots={"gamma": "1", "alpha": "0"}), "requires V"),
        (dict(kind="monotone-growth", region=reg, V="x1^2"), "does not take V"),
        (dict(kind="recurrence-decay", region=reg, V="x1^2",
              slots={"nu": "0", "mu": "x1"}), "outside the target set"),
        (dict(kind="regularity-bihari", region=reg, V="x1^2",
              slots={"gamma": "1", "alpha": "0"}, params={"r": 1.5}),
         "must lie in"),
    ]
    for kwargs, match in cases:
        with pytest.raises(CertificateError, match=match):
            Certificate(**kwargs)


def test_gauge_functions_must_be_class_k():
    excl = Region(exclude=Domain.ball(1.0))
    with pytest.raises(CertificateError, match="vanish at 0"):
        Certificate("recurrence-decay", excl, V="x1^2",
                    slots={"nu": "0", "mu": "1 + x1"})
    with pytest.raises(CertificateError, match="not strictly increasing"):
        Certificate("recurrence-decay", excl, V="x1^2",
                    slots={"nu": "0", "mu": "0 - x1"})


def test_check_rejects_dimension_mismatch():
    cert = Certificate("monotone-growth", Region(lows=(-1.0, -1.0),
                                                 highs=(1.0, 1.0), n_x=5))
    with pytest.raises(CertificateError, match="region dimension"):
        check(cert, ou(-1.0, 1.0))


def test_check_rejects_empty_grid():
    reg = Region(lows=(0.2,), highs=(0.8,), exclude=Domain.ball(1.0))
    assert reg.x_points().shape[0] == 0
    cert = Certificate("recurrence-decay", reg, V="x1^2",
                       slots={"nu": "0", "mu": "x1"})
    with pytest.raises(CertificateError, match="empty"):
        check(cert, ou(-1.0, 1.0))


# ---------------------------------------------------------------------------
# Grid verdicts with hand margins
# ---------------------------------------------------------------------------

def _gbm_decay_cert(region=None):
    # L |x|^(1/4) = |x|^(1/4) (a1 - 3/8 a2) / 4: equality case at a1 = 1/4
    return Certificate(
        "recurrence-decay",
        region or Region(lows=(1.0,), highs=(8.0,), exclude=Domain.ball(1.0)),
        V="abs(x1)^0.25",
        slots={"nu": "0", "mu": "0.03125 * x1^0.25"})


def test_multiplicative_noise_decay_certificate_flips_with_drift():
    ok = check(_gbm_decay_cert(), gbm_cubic(0.25, 1.0, 0.0))
    assert ok.passed and ok.worst_margin <= 1e-6
    bad = check(_gbm_decay_cert(), gbm_cubic(1.0, 1.0, 0.0))
    assert not bad.passed
    # L V - (nu - mu) = (3/16 + 1/32) |x|^(1/4) maximized at x = 8
    assert bad.worst_margin == pytest.approx(0.1875 * 8.0 ** 0.25, abs=1e-4)
    assert bad.witness_x[0] == pytest.approx(8.0)


def test_refining_the_grid_never_flips_a_true_verdict():
    base = _gbm_decay_cert()
    fine = _gbm_decay_cert(base.region.refined())
    assert check(fine, gbm_cubic(0.25, 1.0, 0.0)).passed


def test_recurrence_min_margin():
    cert = Certificate("recurrence-min",
                       Region(lows=(-3.0,), highs=(3.0,),
                              exclude=Domain.ball(1.0)),
                       V="x1^2", slots={"nu": "0", "mu": "x1^2"})
    rep = check(cert, ou(-1.0, 1.0))
    # worst point is the innermost grid node |x| = 1.05: 1 - 2 x^2
    assert rep.passed
    assert rep.worst_margin == pytest.approx(1.0 - 2.0 * 1.05 ** 2, abs=1e-6)


def test_recurrence_time_decay_margin():
    cert = Certificate("recurrence-time-decay",
                       Region(lows=(-4.0,), highs=(4.0,),
                              exclude=Domain.ball(1.0)),
                       V="x1^2", slots={"alpha": "1"})
    rep = check(cert, ou(-1.0, 1.0))
    assert rep.passed
    # L V + 1 = 2 - 2 x^2 at the innermost node |x| = 1.2
    assert rep.worst_margin == pytest.approx(2.0 - 2.0 * 1.2 ** 2, abs=1e-6)


def test_monotone_growth_margins():
    sys_ = SdeSystem.from_expressions(["x1"], [["1"]], dim=1)
    good = check(Certificate("monotone-growth", Region(),
                             params={"K": 1.0}), sys_)
    # grid max of (x^2 + 1/2)/(1 + x^2) sits at the box edge x = 5
    assert good.passed
    assert good.worst_margin == pytest.approx(25.5 / 26.0 - 1.0, abs=1e-12)
    bad = check(Certificate("monotone-growth", Region(),
                            params={"K": 0.4}), sys_)
    assert not bad.passed
    assert bad.worst_margin == pytest.approx(25.5 / 26.0 - 0.4, abs=1e-12)


def test_regularity_affine_margin():
    # V = 1 + x^2 on dX = a1 X dt + X dB: L V = (2 a1 + 1) x^2
    cert = Certificate("regularity-affine", Region(), V="1 + x1^2",
                       slots={"gamma": "1.5", "alpha": "0"})
    rep = check(cert, gbm_cubic(0.25, 1.0, 0.0))
    assert rep.passed
    assert rep.worst_margin == pytest.approx(-1.5, abs=1e-6)
    assert "sphere infima" in rep.notes


def test_nonregularity_bounded_flip():
    sys_ = SdeSystem.from_expressions(["1 + x1^2"], [["0"]], dim=1)
    V = "1 + x1 / sqrt(1 + x1^2)"
    ok = check(Certificate("nonregularity-bounded", Region(), V=V,
                           slots={"alpha_bar": "0.09"},
                           params={"v_sup": 2.0, "x0": [2.0]}), sys_)
    assert ok.passed
    assert "sup V" in ok.notes and "V(0,x0)" in ok.notes
    bad = check(Certificate("nonregularity-bounded", Region(), V=V,
                            slots={"alpha_bar": "0.15"}), sys_)
    assert not bad.passed
    tight = check(Certificate("nonregularity-bounded", Region(), V=V,
                              slots={"alpha_bar": "0.09"},
                              params={"v_sup": 1.5}), sys_)
    assert not tight.passed and "essential bound" in tight.notes


def test_radial_log_recurrence():
    cert = Certificate("recurrence-radial-log",
                       Region(lows=(-1.5,), highs=(1.5,),
                              exclude=Domain.ball(0.5)),
                       slots={"mu": "x1"}, params={"alpha_const": 1.0})
    rep = check(cert, ou(-1.0, 1.0))
    assert rep.passed
    # the global growth part attains alpha_const exactly at the origin
    assert rep.worst_margin == pytest.approx(0.0, abs=1e-12)


def test_nonrecurrence_radial_flip():
    # dX = X dt + dB has radial ratio S(r) = 2 r^2
    reg = Region(lows=(-4.0,), highs=(4.0,))
    ok = check(Certificate("nonrecurrence-radial", reg,
                           slots={"theta": "x1^2"}, params={"a": 1.0}),
               ou(1.0, 1.0))
    assert ok.passed and ok.worst_margin == pytest.approx(-1.0, abs=1e-12)
    bad = check(Certificate("nonrecurrence-radial", reg,
                            slots={"theta": "3 * x1^2"}, params={"a": 1.0}),
                ou(1.0, 1.0))
    assert not bad.passed and bad.worst_margin == pytest.approx(16.0, abs=1e-12)


def test_nonrecurrence_radial_needs_grid_and_pd_noise():
    with pytest.raises(CertificateError, match="no grid points"):
        check(Certificate("nonrecurrence-radial",
                          Region(lows=(-0.5,), highs=(0.5,)),
                          slots={"theta": "x1"}, params={"a": 1.0}),
              ou(1.0, 1.0))
    degenerate = SdeSystem.from_expressions(["x1"], [["0"]], dim=1)
    rep = check(Certificate("nonrecurrence-radial",
                            Region(lows=(-4.0,), highs=(4.0,)),
                            slots={"theta": "x1"}, params={"a": 1.0}),
                degenerate)
    assert not rep.passed and "positive definite" in rep.notes


# ---------------------------------------------------------------------------
# Radial comparison function and probability bound
# ---------------------------------------------------------------------------

def test_reach_probability_matches_gaussian_ratio():
    # dX = X dt + dB, target radius 1 from x0 = 2: the exact reach
    # probability is erfc(2)/erfc(1)
    phi = nonrecurrence_phi(ou(1.0, 1.0), 1.0, "2 * x1^2")
    assert phi.integrable and phi.tail < 1e-20
    b = nonrecurrence_bound(phi, [2.0], 1.0)
    assert b == pytest.approx(erfc(2.0) / erfc(1.0), abs=3e-5)


def test_phi_table_shape_and_lookup():
    phi = nonrecurrence_phi(ou(1.0, 1.0), 1.0, "2 * x1^2")
    assert np.all(np.diff(phi.phi) < 0.0)
    assert phi(phi.r[0]) == pytest.approx(phi.phi[0])
    with pytest.raises(ValueError, match="outside the table"):
        phi(phi.r[-1] + 1.0)


def test_phi_comparison_violation_raises():
    with pytest.raises(CertificateError, match="below theta"):
        nonrecurrence_phi(ou(1.0, 1.0), 1.0, "2.5 * x1^2")


def test_phi_divergent_integral_disables_bound():
    driftless = SdeSystem.from_expressions(["0"], [["1"]], dim=1)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        phi = nonrecurrence_phi(driftless, 1.0, "0")
    assert not phi.integrable
    assert any("no decay" in str(w.message) for w in rec)
    with pytest.raises(ValueError, match="not integrable"):
        nonrecurrence_bound(phi, [2.0], 1.0)


def test_nonrecurrence_bound_edges():
    phi = nonrecurrence_phi(ou(1.0, 1.0), 1.0, "2 * x1^2")
    with pytest.raises(ValueError, match="at least alpha"):
        nonrecurrence_bound(phi, [0.5], 1.0)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        assert nonrecurrence_bound(phi, [1.0], 1.0) == 1.0
    assert any("trivial" in str(w.message) for w in rec)


# ---------------------------------------------------------------------------
# Closed-form bounds from passed certificates
# ---------------------------------------------------------------------------

def test_mean_residence_bound_hand_values():
    # V = x^2, nu = 0, mu(s) = s^4, target ball(1): (x0^2 - 1)/1
    args = dict(V="x1^2", nu="0", mu="x1^4", domain=Domain.ball(1.0))
    assert mean_residence_bound(x0=[2.0], **args) == pytest.approx(3.0)
    assert mean_residence_bound(x0=[3.0], **args) == pytest.approx(8.0)
    assert mean_residence_bound(x0=[0.5], **args) == 0.0  # clamped


def test_mean_residence_bound_nu_integral():
    got = mean_residence_bound("x1^2", "exp(-t)", "x1^4", Domain.ball(1.0),
                               [2.0])
    assert got == pytest.approx(4.0, abs=1e-8)


def test_mean_residence_bound_requires_positive_mu():
    with pytest.raises(ValueError, match="must be positive"):
        mean_residence_bound("x1^2", "0", "0", Domain.ball(1.0), [2.0])


def test_mgf_bound_hand_values():
    assert mgf_bound("x1^2", 1.0, Domain.ball(1.0), [2.0]) == pytest.approx(4.0)
    assert mgf_bound("x1^2", 1.0, Domain.ball(1.0), [1.0]) == 1.0
    with pytest.raises(ValueError, match="below its boundary infimum"):
        mgf_bound("x1^2", 1.0, Domain.ball(1.0), [0.5])
    with pytest.raises(ValueError, match="must be positive"):
        mgf_bound("0 - x1^2", 1.0, Domain.ball(1.0), [2.0])


# ---------------------------------------------------------------------------
# Explicit constructions and diagnostics
# ---------------------------------------------------------------------------

def test_bounded_complement_construction_poly():
    V, decay = construct_bounded_complement_V("poly", 1.0, 1.0, 1.0)
    assert decay == pytest.approx(8.0)
    sys_ = SdeSystem.from_expressions(["-x1"], [["1"]], dim=1)
    worst = max(generator(sys_, V, 0.0, [x]) for x in np.linspace(-1, 1, 41))
    assert worst <= -decay + 1e-6


def test_bounded_complement_construction_exp():
    V, decay = construct_bounded_complement_V("exp", 1.0, 1.0, 1.0)
    assert decay == pytest.approx(math.sqrt(2.0) * math.exp(-math.sqrt(2.0)))
    sys_ = SdeSystem.from_expressions(["1"], [["1"]], dim=1)
    worst = max(generator(sys_, V, 0.0, [x]) for x in np.linspace(-1, 1, 41))
    assert worst <= -decay + 1e-6


def test_bounded_complement_validation():
    with pytest.raises(ValueError, match="positive"):
        construct_bounded_complement_V("poly", -1.0, 1.0, 1.0)
    with pytest.raises(ValueError, match="poly.*exp|'poly' or 'exp'"):
        construct_bounded_complement_V("spline", 1.0, 1.0, 1.0)
    with pytest.raises(ValueError, match="coordinate"):
        construct_bounded_complement_V("poly", 1.0, 1.0, 1.0, coordinate=3)


def test_lipschitz_spot_check_values():
    assert lipschitz_spot_check(ou(-1.0, 1.0), [-2.0], [2.0]) == \
        pytest.approx(1.0)
    quad_sys = SdeSystem.from_expressions(["x1^2"], [["1"]], dim=1)
    worst = lipschitz_spot_check(quad_sys, [0.0], [2.0])
    assert 3.0 <= worst <= 4.0  # sup of x + y over the box is 4


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

def test_report_formatting_and_csv(tmp_path):
    ok = check(_gbm_decay_cert(), gbm_cubic(0.25, 1.0, 0.0))
    bad = check(_gbm_decay_cert(), gbm_cubic(1.0, 1.0, 0.0))
    text = format_check_report(ok)
    assert "PASS" in text and "grid-certified" in text
    assert "FAIL" in format_check_report(bad)
    path = tmp_path / "reports.csv"
    write_check_reports_csv(path, [ok, bad])
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["pass"] for r in rows] == ["true", "false"]
    assert rows[0]["kind"] == "recurrence-decay"
    assert float(rows[1]["worst_margin"]) == pytest.approx(0.315, abs=1e-3)
