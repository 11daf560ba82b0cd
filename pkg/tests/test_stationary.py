from dataclasses import replace

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from epimfg.errors import DomainError, HypothesisViolated
from epimfg.fully_observed import beta_crit
from epimfg.model import ModelParams
from epimfg.stationary import (
    closed_form_slope,
    large_rate_threshold,
    lambda_ai_lower_bound,
    stationary_value_closed_form,
    switching_closed_form,
    threshold_constants,
    verify_switching,
)

# values computed once from the formulas and frozen
FROZEN = {
    "b": 0.05,
    "y": 3.4126984126984126,
    "k": 5.6084656084656075,
    "a_thresh": 0.30514705882352944,
    "c": -2.0069095883408115,
}


def test_canonical_constants(p0):
    c = threshold_constants(p0, None, 0.05, 0.5)
    for name, want in FROZEN.items():
        assert getattr(c, name) == pytest.approx(want, rel=1e-12), name
    assert c.a_thresh == pytest.approx(0.305147, abs=1e-6)
    assert c.a_bar == pytest.approx(0.025)
    assert c.valid


def test_zero_beta_threshold_is_alpha(p0):
    c = threshold_constants(p0, None, 0.0, 0.4)
    assert c.a_thresh == pytest.approx(0.4)
    assert c.a_bar == 0.0 and c.valid


def test_above_beta_crit_is_invalid(p0):
    c = threshold_constants(p0, None, 0.2, 0.5)
    assert not c.valid
    with pytest.raises(DomainError):
        stationary_value_closed_form(0.5, c, p0)
    rep = verify_switching(c, p0)
    assert rep.checks == {"isolate everywhere": True}


def test_validity_margin_at_beta_crit(p0):
    crit = beta_crit(p0, None, 0.5)
    assert not threshold_constants(p0, None, crit - 1e-13, 0.5).valid
    assert not threshold_constants(p0, None, crit, 0.5).valid


def test_lower_bound_examples(p0):
    assert lambda_ai_lower_bound(p0, None, 0.05, 0.5) == pytest.approx(0.05, abs=1e-12)
    assert lambda_ai_lower_bound(p0, None, 0.0, 0.5) == 0.0
    with pytest.raises(HypothesisViolated):
        lambda_ai_lower_bound(p0, None, 0.2, 0.5)


def test_closed_form_endpoints(p0):
    c = threshold_constants(p0, None, 0.05, 0.5)
    assert stationary_value_closed_form(1.0, c, p0) == pytest.approx(3.174603, abs=1e-6)
    below = c.a_thresh - 1e-9
    assert float(closed_form_slope(below, c, p0)) == pytest.approx(5.608466, abs=1e-6)
    assert stationary_value_closed_form(c.a_thresh, c, p0) == pytest.approx(-0.48436041, abs=1e-8)
    with pytest.raises(DomainError):
        stationary_value_closed_form(1.5, c, p0)


def test_switching_report_passes_for_canonical_set(p0):
    rep = verify_switching(threshold_constants(p0, None, 0.05, 0.5), p0)
    assert rep.passed, rep.checks
    assert abs(rep.values["M(a_thresh)"]) <= 1e-8
    assert rep.values["value jump"] <= 1e-12
    assert not rep.flags


def test_near_degenerate_alpha_flag(p0):
    c = threshold_constants(p0, None, 0.0, 1 - 1e-8)
    assert "NearDegenerateAlpha" in verify_switching(c, p0).flags


def test_large_rate_threshold_limit(p0):
    limit = large_rate_threshold(p0, None, 0.05, 0.5)
    far = threshold_constants(replace(p0, lambda_ai=1e7), None, 0.05, 0.5).a_thresh
    assert far == pytest.approx(limit, abs=1e-6)
    assert limit == pytest.approx(0.307692, abs=1e-6)


def test_switching_sign_on_grid(p0):
    c = threshold_constants(p0, None, 0.05, 0.5)
    a = np.linspace(0, 1, 11)
    m = switching_closed_form(a, c, p0)
    assert np.all(m[a < c.a_thresh] < 0) and np.all(m[a > c.a_thresh] > 0)


@settings(max_examples=60)
@given(st.floats(0.0, 0.99), st.floats(0.0, 0.99), st.floats(0.2, 0.8))
def test_lower_bound_monotone_in_beta(x, y, alpha):
    p = ModelParams()
    hi_admissible = alpha / (p.lambda_sa * 10 / 3)
    b1, b2 = sorted((x * hi_admissible, y * hi_admissible))
    assume(b2 < hi_admissible)
    assert lambda_ai_lower_bound(p, None, b1, alpha) <= lambda_ai_lower_bound(p, None, b2, alpha) + 1e-15


@settings(max_examples=60)
@given(st.floats(0.05, 0.95), st.floats(0.2, 0.8), st.floats(1.0, 10.0), st.floats(0.05, 0.3))
def test_identity_and_continuity_hold_when_valid(frac, alpha, lam, gamma):
    p = ModelParams(lambda_ai=lam, gamma=gamma)
    c = threshold_constants(p, None, frac * beta_crit(p, None, alpha), alpha)
    assume(c.valid)
    rep = verify_switching(c, p)
    assert rep.checks["identity"] and rep.checks["value continuous"] and rep.checks["M(a_thresh)=0"]
