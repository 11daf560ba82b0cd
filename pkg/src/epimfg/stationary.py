"""Closed-form stationary constants for the partially observed agent.

For a frozen mean field ``(beta_bar, alpha_bar)`` the stationary value is
piecewise: affine (``u = 1``) below the threshold and ``phi_a * a`` plus a
homogeneous solution ``c (1 - a)^(1 + b) a^(-b)`` (``u = 0``) above it.  This
module evaluates those constants, checks the switching function on probe
points, and sweeps ``lambda_ai`` to examine the large-rate limit.

The formulas are written with a general altruistic cost ``c_a``; they reduce
to the textbook ones when ``c_a = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .belief_filter import integrate_filter
from .errors import DomainError, HypothesisViolated
from .fully_observed import beta_crit, phi_bar_a, phi_bar_i
from .grids import BeliefGrid, PolicyField
from .hjb import policy_threshold, solve_stationary_hjb
from .model import MeanFieldPath, ModelParams

NEAR_DEGENERATE = 1e-6
VALID_MARGIN = 1e-12


@dataclass(frozen=True)
class ThresholdConstants:
    b: float
    y: float
    k: float
    a_thresh: float
    c: float
    a_bar: float
    lambda_ai_lower: float | None
    valid: bool
    beta_bar: float
    alpha_bar: float


def threshold_constants(params: ModelParams, theta: str | None, beta_bar: float, alpha_bar: float) -> ThresholdConstants:
    """Evaluate ``b, y, k, a_thresh, c`` by their formulas.

    ``valid`` is set when ``lambda_sa beta < lambda_ai``, ``beta < beta_crit``,
    ``lambda_sa beta k < alpha`` and ``0 < a_bar < a_thresh < 1``, each strict
    by ``VALID_MARGIN``.  Nothing is raised for invalid inputs; the flag is
    simply cleared.
    """
    p = params.resolve(theta)
    phi_i = phi_bar_i(params, theta)
    phi_a = phi_bar_a(params, theta)
    rate = p.lambda_sa * beta_bar
    b = p.gamma / p.lambda_ai
    y = (p.lambda_ai * phi_i + p.c_a - alpha_bar) / (p.lambda_ai + p.gamma)
    k = (p.gamma * y + alpha_bar) / (rate + p.gamma)
    denom = p.c_a - rate * k
    a_thresh = (alpha_bar - rate * k) / denom if denom != 0 else np.nan
    a_bar = rate / p.lambda_ai
    c = np.nan
    if 0 < a_thresh < 1:
        c = (phi_a - k) / ((1 - a_thresh) ** b * a_thresh ** (-b - 1) * (b + a_thresh))
    try:
        lower = lambda_ai_lower_bound(params, theta, beta_bar, alpha_bar)
    except HypothesisViolated:
        lower = None
    eps = VALID_MARGIN
    valid = bool(
        rate + eps < p.lambda_ai
        and beta_bar + eps < beta_crit(params, theta, alpha_bar)
        and rate * k + eps < alpha_bar
        and 0 < a_bar
        and a_bar + eps < a_thresh < 1 - eps
    ) or bool(beta_bar == 0 and eps < alpha_bar < 1 - eps)
    return ThresholdConstants(b, y, k, a_thresh, c, a_bar, lower, valid, beta_bar, alpha_bar)


def lambda_ai_lower_bound(params: ModelParams, theta: str | None, beta_bar: float, alpha_bar: float) -> float:
    """Sufficient lower bound on ``lambda_ai`` for the threshold structure.

    Raises:
        HypothesisViolated: ``alpha_bar <= lambda_sa beta_bar phi_bar(i)``.
    """
    p = params.resolve(theta)
    rate = p.lambda_sa * beta_bar
    gap = alpha_bar - rate * phi_bar_i(params, theta)
    if gap <= 0:
        raise HypothesisViolated(
            f"alpha_bar={alpha_bar} must exceed lambda_sa*beta_bar*phi_bar(i)={alpha_bar - gap:.6g}"
        )
    if rate == 0:
        return 0.0
    second = rate * p.gamma / ((2 - alpha_bar) * p.gamma + rate) + rate * p.gamma / gap
    return max(rate, second)


def _homogeneous(a, b):
    """``(1 - a)^(1 + b) a^(-b)`` evaluated in log space."""
    with np.errstate(divide="ignore"):
        return np.exp((1 + b) * np.log1p(-a) - b * np.log(a))


def _homogeneous_slope(a, b):
    with np.errstate(divide="ignore"):
        return -(a + b) * np.exp(b * np.log1p(-a) - (b + 1) * np.log(a))


def stationary_value_closed_form(a, consts: ThresholdConstants, params: ModelParams, theta: str | None = None):
    """Piecewise stationary value at belief(s) ``a``.

    Raises:
        DomainError: the constants are not valid, or the upper branch would be
            evaluated at ``a = 0``.
    """
    if not consts.valid:
        raise DomainError("threshold constants are not valid for these parameters")
    a = np.asarray(a, dtype=float)
    if np.any((a < 0) | (a > 1)):
        raise DomainError("beliefs must lie in [0, 1]")
    upper = a >= consts.a_thresh
    if np.any(upper & (a == 0)):
        raise DomainError("upper branch is singular at a = 0")
    phi_a = phi_bar_a(params, theta)
    au = np.where(upper, a, 1.0)
    out = np.where(
        upper,
        phi_a * au + (consts.c * _homogeneous(au, consts.b) if np.isfinite(consts.c) else 0.0),
        consts.k * (a - 1) + consts.y,
    )
    return float(out) if out.ndim == 0 else out


def closed_form_slope(a, consts: ThresholdConstants, params: ModelParams, theta: str | None = None):
    a = np.asarray(a, dtype=float)
    upper = a >= consts.a_thresh
    au = np.where(upper, a, 1.0)
    return np.where(upper, phi_bar_a(params, theta) + consts.c * _homogeneous_slope(au, consts.b), consts.k)


def switching_closed_form(a, consts: ThresholdConstants, params: ModelParams, theta: str | None = None):
    """``M(a) = lambda_sa beta (1 - a) phi'(a) + c_a a - alpha`` on the closed form."""
    p = params.resolve(theta)
    a = np.asarray(a, dtype=float)
    slope = closed_form_slope(a, consts, params, theta)
    return p.lambda_sa * consts.beta_bar * (1 - a) * slope + p.c_a * a - consts.alpha_bar


@dataclass
class SwitchingReport:
    checks: dict[str, bool] = field(default_factory=dict)
    values: dict[str, float] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    # check name -> (value key, tolerance)
    measured: dict[str, tuple[str, float]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def rows(self):
        """``(check, value, tolerance, pass)`` per check."""
        for name, ok in self.checks.items():
            key, tol = self.measured.get(name, (None, None))
            yield name, self.values.get(key), tol, ok


def verify_switching(
    consts: ThresholdConstants,
    params: ModelParams,
    theta: str | None = None,
    n_probes: int = 100,
) -> SwitchingReport:
    """Numerical check of the switching function built from the closed form.

    For valid constants: ``M(a_thresh) = 0``, ``M < 0`` below and ``M > 0``
    above the threshold, positive second differences on the upper branch and
    the algebraic identity behind the one-sided derivative.  When
    ``beta_bar >= beta_crit`` the isolating value ``phi_a * a`` is used and
    ``M > 0`` is checked everywhere.
    """
    p = params.resolve(theta)
    rep = SwitchingReport()
    rate = p.lambda_sa * consts.beta_bar
    phi_a = phi_bar_a(params, theta)
    m_one = p.c_a - consts.alpha_bar
    rep.values["M(1)"] = m_one
    if m_one < NEAR_DEGENERATE:
        rep.flags.append("NearDegenerateAlpha")
    if consts.beta_bar >= beta_crit(params, theta, consts.alpha_bar):
        probes = np.linspace(0, 1, n_probes)
        m = rate * (1 - probes) * phi_a + p.c_a * probes - consts.alpha_bar
        rep.values["min M"] = float(m.min())
        rep.checks["isolate everywhere"] = bool(np.all(m > 0))
        rep.measured["isolate everywhere"] = ("min M", 0.0)
        return rep
    if not consts.valid:
        rep.checks["valid constants"] = False
        return rep
    at = consts.a_thresh
    m_at = float(switching_closed_form(at, consts, params, theta))
    rep.values["M(a_thresh)"] = m_at
    rep.checks["M(a_thresh)=0"] = abs(m_at) <= 1e-8
    # probes strictly inside each branch
    lower = np.linspace(0, at, n_probes + 2)[:-1]
    upper = np.linspace(at, 1, n_probes + 2)[1:]
    m_lo = switching_closed_form(lower, consts, params, theta)
    m_up = switching_closed_form(upper, consts, params, theta)
    rep.values["max M below"] = float(m_lo.max())
    rep.values["min M above"] = float(m_up.min())
    rep.checks["M<0 below"] = bool(np.all(m_lo < 0))
    rep.checks["M>0 above"] = bool(np.all(m_up > 0))
    second = np.diff(m_up, 2)
    rep.values["min second difference"] = float(second.min())
    rep.checks["M convex above"] = bool(np.all(second > 0))
    identity = (consts.b + at) * (p.c_a - rate * consts.k) - (consts.k - phi_a) * p.gamma * (consts.b + 1)
    rep.values["identity"] = float(identity)
    rep.checks["identity"] = abs(identity) <= 1e-9
    lo_val = consts.k * (at - 1) + consts.y
    up_val = stationary_value_closed_form(at, consts, params, theta)
    rep.values["value jump"] = float(abs(lo_val - up_val))
    rep.checks["value continuous"] = abs(lo_val - up_val) <= 1e-9
    rep.measured.update(
        {
            "M(a_thresh)=0": ("M(a_thresh)", 1e-8),
            "M<0 below": ("max M below", 0.0),
            "M>0 above": ("min M above", 0.0),
            "M convex above": ("min second difference", 0.0),
            "identity": ("identity", 1e-9),
            "value continuous": ("value jump", 1e-9),
        }
    )
    return rep


@dataclass(frozen=True)
class Case1Row:
    lambda_ai: float
    psi0: int
    fo_rule: int
    a_thresh: float
    pde_threshold: float | None
    settle_ratio: float


@dataclass
class Case1Report:
    rows: list[Case1Row]
    limit_a_thresh: float
    checks: dict[str, bool] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def large_rate_threshold(params: ModelParams, theta: str | None, beta_bar: float, alpha_bar: float) -> float:
    """Limit of ``a_thresh`` as ``lambda_ai -> inf`` with everything else fixed.

    ``y -> phi_bar(i)`` and ``k -> (gamma phi_bar(i) + alpha) / (lambda_sa beta + gamma)``,
    which stays away from zero, so the limit is below ``alpha_bar`` whenever
    ``beta_bar > 0``.
    """
    p = params.resolve(theta)
    rate = p.lambda_sa * beta_bar
    k_inf = (p.gamma * phi_bar_i(params, theta) + alpha_bar) / (rate + p.gamma)
    return (alpha_bar - rate * k_inf) / (p.c_a - rate * k_inf)


def case1_limit_check(
    params: ModelParams,
    theta: str | None,
    beta_bar: float,
    alpha_bar: float,
    ladder=(2.0, 8.0, 32.0, 128.0),
    n_a: int = 201,
) -> Case1Report:
    """Sweep ``lambda_ai`` and compare the stationary policy at ``a = 0`` with the observed rule.

    For every rung the stationary HJB is solved on an ``n_a`` grid; the belief
    an always-starting-at-zero agent settles at is found by integrating the
    filter under that policy.  ``settle_ratio`` is that belief times
    ``lambda_ai / (lambda_sa beta_bar)`` and should approach ``psi(0)``.
    """
    ladder = list(ladder)
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError("the lambda_ai ladder must be increasing")
    base = params.resolve(theta)
    grid = BeliefGrid(n_a)
    rows = []
    for lam in ladder:
        p = replace(base, lambda_ai=float(lam))
        fo_rule = int(p.lambda_sa * beta_bar * phi_bar_i(p) < alpha_bar)
        consts = threshold_constants(p, None, beta_bar, alpha_bar)
        _, psi = solve_stationary_hjb(beta_bar, alpha_bar, grid, p)
        horizon = 20.0 / lam
        steps = 2000
        path = integrate_filter(
            0.0,
            MeanFieldPath.constant(beta_bar, alpha_bar, horizon / steps, steps),
            PolicyField.stationary(grid.nodes, psi),
            p,
        )
        ratio = path.a[-1] * lam / (p.lambda_sa * beta_bar) if beta_bar > 0 else float(psi[0])
        rows.append(Case1Row(lam, int(psi[0]), fo_rule, consts.a_thresh, policy_threshold(psi, grid.nodes), ratio))
    limit = large_rate_threshold(params, theta, beta_bar, alpha_bar)
    top = rows[-2:]
    gaps = [abs(r.a_thresh - alpha_bar) for r in rows]
    report = Case1Report(rows, limit)
    report.checks["psi(0) matches observed rule"] = all(r.psi0 == r.fo_rule for r in top)
    report.checks["a_thresh approaches alpha monotonically"] = all(g2 < g1 for g1, g2 in zip(gaps, gaps[1:]))
    report.checks["settle ratio matches psi(0)"] = abs(top[-1].settle_ratio - top[-1].psi0) < 0.05
    return report
