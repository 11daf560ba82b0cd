import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epimfg.errors import CflViolation, NotConverged
from epimfg.fully_observed import phi_bar_a
from epimfg.grids import BeliefGrid, PolicyField, cfl_dt, check_cfl
from epimfg.hjb import (
    default_terminal,
    hjb_backward_step,
    policy_threshold,
    solve_hjb,
    solve_stationary_hjb,
    switching_term,
)
from epimfg.model import MeanFieldPath, ModelParams
from epimfg.stationary import stationary_value_closed_form, threshold_constants


def test_switching_term_examples(p0):
    assert switching_term(1.0, 123.0, 0.3, 0.5, p0) == pytest.approx(0.5)
    assert switching_term(0.5, 0.0, 0.9, 0.5, p0) == pytest.approx(0.0)


def test_zero_horizon_returns_terminal(p0):
    grid = BeliefGrid(51)
    term = default_terminal(grid, p0)
    vf, pf = solve_hjb(MeanFieldPath.constant(0.05, 0.5, 0.01, 0), term, grid, p0)
    np.testing.assert_array_equal(vf.phi[0], term)
    assert pf.psi.shape == (1, 51)


def test_cfl_violation(p0):
    grid = BeliefGrid(101)
    with pytest.raises(CflViolation):
        check_cfl(10 * cfl_dt(grid, p0, 0.5), grid, p0, 0.5)
    with pytest.raises(CflViolation):
        hjb_backward_step(default_terminal(grid, p0), 0.5, 0.5, grid, 1.0, p0)


def test_stationary_threshold_policy(p0):
    grid = BeliefGrid(201)
    phi, psi = solve_stationary_hjb(0.05, 0.5, grid, p0)
    consts = threshold_constants(p0, None, 0.05, 0.5)
    assert abs(policy_threshold(psi, grid.nodes) - consts.a_thresh) <= 2 * grid.da
    assert psi[-1] == 0
    exact = stationary_value_closed_form(grid.nodes, consts, p0)
    assert np.max(np.abs(phi - exact)) < 20 * grid.da


def test_isolate_everywhere_above_beta_crit(p0):
    grid = BeliefGrid(101)
    phi, psi = solve_stationary_hjb(0.2, 0.5, grid, p0)
    assert not psi.any()
    assert policy_threshold(psi, grid.nodes) is None
    assert np.max(np.abs(phi - phi_bar_a(p0) * grid.nodes)) <= 5 * grid.da


def test_stationary_not_converged(p0):
    with pytest.raises(NotConverged) as info:
        solve_stationary_hjb(0.05, 0.5, BeliefGrid(51), p0, max_iters=10)
    assert info.value.history is not None


def test_policy_threshold_helper():
    a = np.linspace(0, 1, 5)
    assert policy_threshold(np.array([1, 1, 0, 0, 0]), a) == pytest.approx(0.375)
    assert policy_threshold(np.zeros(5), a) is None


def _path(draw_beta, draw_alpha, n):
    return MeanFieldPath(np.linspace(0, n * 0.02, n + 1), draw_beta, draw_alpha)


@settings(max_examples=25, deadline=None)
@given(
    st.lists(st.floats(0, 0.5), min_size=31, max_size=31),
    st.lists(st.floats(0.05, 0.95), min_size=31, max_size=31),
    st.floats(0, 2),
)
def test_monotone_in_terminal_data(beta, alpha, shift):
    """A larger terminal value gives a larger value everywhere."""
    p = ModelParams()
    grid = BeliefGrid(41)
    mf = _path(beta, alpha, 30)
    term = default_terminal(grid, p)
    lo, _ = solve_hjb(mf, term, grid, p)
    hi, _ = solve_hjb(mf, term + shift * grid.nodes * (1 - grid.nodes) + shift, grid, p)
    assert np.all(hi.phi >= lo.phi - 1e-12)


@settings(max_examples=25, deadline=None)
@given(
    st.lists(st.floats(0, 0.5), min_size=31, max_size=31),
    st.lists(st.floats(0.05, 0.95), min_size=31, max_size=31),
)
def test_certain_belief_node_is_scalar_value(beta, alpha):
    """At a = 1 the agent knows she is presymptomatic and isolates."""
    p = ModelParams()
    grid = BeliefGrid(41)
    vf, pf = solve_hjb(_path(beta, alpha, 30), None, grid, p)
    assert np.max(np.abs(vf.phi[:, -1] - phi_bar_a(p))) <= 1e-10
    assert not pf.psi[:, -1].any()


def test_policy_field_lookup():
    grid = BeliefGrid(11)
    pol = PolicyField.threshold(grid, 0.35)
    assert list(pol.value(0, [0.0, 0.3, 0.4, 1.0])) == [1, 1, 0, 0]
    assert PolicyField.constant(grid, 1).psi[0, -1] == 0
