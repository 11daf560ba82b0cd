"""Fully observed game: closed-form values, the stationary susceptible
solution, the population ODE and the equilibrium mean field.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Mapping, Union

import numpy as np
from scipy.integrate import solve_ivp

from .errors import NonpositivePhiI, StepUnstable
from .model import (
    ALPHA_MAX,
    ALPHA_MIN,
    SAIRD,
    EpiState,
    MeanFieldPath,
    ModelParams,
    phi_i_value,
)

ODE_ATOL = 1e-10
ODE_RTOL = 1e-8

StatePolicy = Union[float, np.ndarray, Callable[[float], float]]


class Regime(str, enum.Enum):
    ACTIVE = "ActiveSusceptible"
    ISOLATED = "IsolatedSusceptible"


@dataclass(frozen=True)
class FullyObservedSolution:
    phi_i: float
    phi_a: float
    v_s: float
    policy: Mapping[EpiState, int]
    regime: Regime


@dataclass(frozen=True)
class PopulationPath:
    """Per-attribute pmf trajectories over ``(s, a, i, r, d)``.

    ``rho[theta]`` has shape ``(len(t), 5)`` in the order of ``SAIRD``.
    """

    t: np.ndarray
    rho: Mapping[str, np.ndarray]

    def aggregate(self, weights: Mapping[str, float]) -> np.ndarray:
        return sum(weights[th] * r for th, r in self.rho.items())


def phi_bar_i(params: ModelParams, theta: str | None = None) -> float:
    value = phi_i_value(params, theta)
    if not value > 0:
        raise NonpositivePhiI(f"phi_bar(i)={value:.6g} must be positive")
    return value


def phi_bar_a(params: ModelParams, theta: str | None = None) -> float:
    """Value of a presymptomatic agent who knows her state (she isolates)."""
    p = params.resolve(theta)
    return p.lambda_ai / (p.gamma + p.lambda_ai) * phi_bar_i(params, theta)


def beta_crit(params: ModelParams, theta: str | None, alpha_bar: float) -> float:
    """Infected activity at which a susceptible agent is indifferent."""
    p = params.resolve(theta)
    return alpha_bar / (p.lambda_sa * phi_bar_a(params, theta))


def stationary_susceptible(
    params: ModelParams, theta: str | None, beta_bar: float, alpha_bar: float
) -> tuple[float, int]:
    """Stationary value and control of a susceptible agent.

    Active (``u=1``) strictly below the critical infected activity, isolated at
    or above it.
    """
    p = params.resolve(theta)
    phi_a = phi_bar_a(params, theta)
    if p.lambda_sa * beta_bar * phi_a < alpha_bar:
        rate = p.lambda_sa * beta_bar
        return (rate * phi_a - alpha_bar) / (rate + p.gamma), 1
    return 0.0, 0


def stationary_hjb_residual(
    params: ModelParams, theta: str | None, beta_bar: float, alpha_bar: float, v: float
) -> float:
    """``gamma v - min(0, M)`` with ``M = lambda_sa beta (phi_a - v) - alpha``."""
    p = params.resolve(theta)
    m = p.lambda_sa * beta_bar * (phi_bar_a(params, theta) - v) - alpha_bar
    return p.gamma * v - min(0.0, m)


def solve_fully_observed(
    params: ModelParams, theta: str | None, beta_bar: float, alpha_bar: float
) -> FullyObservedSolution:
    v_s, u_s = stationary_susceptible(params, theta, beta_bar, alpha_bar)
    return FullyObservedSolution(
        phi_i=phi_bar_i(params, theta),
        phi_a=phi_bar_a(params, theta),
        v_s=v_s,
        policy={EpiState.S: u_s, EpiState.A: 0, EpiState.I: 0},
        regime=Regime.ACTIVE if u_s == 1 else Regime.ISOLATED,
    )


def susceptible_policy_path(
    params: ModelParams, theta: str | None, mf: MeanFieldPath, terminal: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Backward sweep of the scalar HJB for ``v_t(s)`` against a mean-field path.

    Returns ``(v, psi_s)`` on ``mf.t``.  The control is resolved exactly by the
    sign of ``M`` (ties isolate), the reaction term is implicit.
    """
    p = params.resolve(theta)
    phi_a = phi_bar_a(params, theta)
    n = len(mf.t)
    v = np.empty(n)
    psi = np.zeros(n, dtype=np.int8)
    v[-1] = terminal
    psi[-1] = int(p.lambda_sa * mf.beta[-1] * (phi_a - terminal) - mf.alpha[-1] < 0)
    for k in range(n - 2, -1, -1):
        dt = mf.t[k + 1] - mf.t[k]
        rate = p.lambda_sa * mf.beta[k]
        u = int(rate * (phi_a - v[k + 1]) - mf.alpha[k] < 0)
        v[k] = (v[k + 1] + dt * u * (rate * phi_a - mf.alpha[k])) / (1 + dt * (p.gamma + u * rate))
        psi[k] = u
    return v, psi


def _as_function(policy: StatePolicy, t: np.ndarray) -> Callable[[float], float]:
    if callable(policy):
        return policy
    arr = np.asarray(policy, dtype=float)
    if arr.ndim == 0:
        value = float(arr)
        return lambda _t: value
    # piecewise constant on the grid, value of the left node
    return lambda s: float(arr[min(max(np.searchsorted(t, s, side="right") - 1, 0), len(arr) - 1)])


def normalize_rho0(rho0: Mapping, theta_ids) -> dict[str, np.ndarray]:
    """Accept ``{state: mass}`` (shared by all attributes) or ``{theta: {state: mass}}``."""
    keys = {str(k) for k in rho0}
    if keys <= {s.value for s in SAIRD}:
        per_theta = {th: rho0 for th in theta_ids}
    else:
        per_theta = {th: rho0[th] for th in theta_ids}
    out = {}
    for th, pmf in per_theta.items():
        vec = np.array([float(pmf.get(s.value, 0.0)) for s in SAIRD])
        if np.any(vec < 0) or abs(vec.sum() - 1.0) > 1e-8:
            raise ValueError(f"initial pmf for {th!r} must be nonnegative and sum to 1")
        out[th] = vec
    return out


def integrate_rho(
    params: ModelParams,
    policy: StatePolicy,
    beta_path: MeanFieldPath,
    rho0: Mapping,
) -> PopulationPath:
    """Integrate the population ODE with feedback ``u = psi_t(s)``.

    ``beta_path`` supplies the grid and ``beta_t`` (linearly interpolated in
    time); ``policy`` is a constant, an array on the grid, or a callable of t.
    """
    t = beta_path.t
    u_of = _as_function(policy, t)
    init = normalize_rho0(rho0, params.theta_ids)
    out = {}
    for th in params.theta_ids:
        p = params.resolve(th)

        def rhs(time, y, p=p):
            beta = np.interp(time, t, beta_path.beta)
            infect = p.lambda_sa * beta * u_of(time) * y[0]
            removal = (p.lambda_ir + p.lambda_id) * y[2]
            return [
                -infect,
                infect - p.lambda_ai * y[1],
                p.lambda_ai * y[1] - removal,
                p.lambda_ir * y[2],
                p.lambda_id * y[2],
            ]

        if len(t) == 1:
            out[th] = init[th][None, :].copy()
            continue
        sol = solve_ivp(
            rhs,
            (t[0], t[-1]),
            init[th],
            method="RK45",
            t_eval=t,
            atol=ODE_ATOL,
            rtol=ODE_RTOL,
            max_step=max(beta_path.dt, 1e-12),
        )
        if not sol.success:
            raise StepUnstable(f"population ODE failed for theta={th!r}: {sol.message}")
        out[th] = sol.y.T
    return PopulationPath(t.copy(), out)


@dataclass(frozen=True)
class FoMfeResult:
    solution: Mapping[str, FullyObservedSolution]
    population: PopulationPath
    mean_field: MeanFieldPath
    flags: list[str] = field(default_factory=list)

    def __iter__(self):
        return iter((self.solution, self.population, self.mean_field))


def fo_mean_field(params: ModelParams, pop: PopulationPath, psi_s: StatePolicy = 1.0) -> MeanFieldPath:
    """Consistency map: ``beta`` from active infected (none), ``alpha`` from active s plus r."""
    u_of = _as_function(psi_s, pop.t)
    u = np.array([u_of(s) for s in pop.t])
    beta = np.zeros_like(pop.t)
    alpha = np.zeros_like(pop.t)
    for th, w in params.weights.items():
        rho = pop.rho[th]
        alpha += w * (rho[:, 3] + u * rho[:, 0])
    return MeanFieldPath(pop.t, beta, alpha)


def fo_mfe(params: ModelParams, rho0: Mapping, horizon: float = 40.0, dt: float = 0.05) -> FoMfeResult:
    """Equilibrium of the fully observed game from the initial pmf ``rho0``.

    Susceptible agents stay active, infected agents isolate, so no infection
    ever happens: ``beta = 0`` and ``rho(s)`` is frozen.  The returned policy is
    checked to be a best response to the returned mean field.
    """
    n = int(round(horizon / dt))
    grid = MeanFieldPath.constant(0.0, 0.5, dt, n)
    pop = integrate_rho(params, 1.0, grid, rho0)
    mf = fo_mean_field(params, pop, 1.0)
    flags = []
    if np.any(mf.alpha >= ALPHA_MAX) or np.any(mf.alpha <= ALPHA_MIN):
        flags.append("DegenerateAlpha")
    solutions = {}
    for th in params.theta_ids:
        alpha_bar = float(np.clip(mf.alpha.min(), ALPHA_MIN, ALPHA_MAX))
        solutions[th] = solve_fully_observed(params, th, 0.0, alpha_bar)
        if "DegenerateAlpha" not in flags:
            _, psi = susceptible_policy_path(params, th, mf)
            if not np.all(psi == 1):
                flags.append(f"NotBestResponse:{th}")
    return FoMfeResult(solutions, pop, mf, flags)
