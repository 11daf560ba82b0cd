"""Agent-based simulation used as an independent check of the PDE pipeline.

Each agent carries a true state, an attribute and a personal belief.  Jumps
are thinned with exact exponential probabilities over a step of length
``dt_sim``; beliefs of agents who have not shown symptoms integrate the filter
with their own activity ``u = psi_t(A)``.  The discrete-time thinning biases
jump times by O(dt_sim), which the step bound keeps well below the comparison
tolerances.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .belief_filter import rk4_vector
from .errors import EmptySample, StepTooCoarse
from .grids import BeliefGrid, PolicyField
from .model import MeanFieldPath, ModelParams

S, A, I, R, D = range(5)
MAX_JUMP_PROB = 0.1


class Mode(str, enum.Enum):
    EXOGENOUS = "ExogenousMeanField"
    SELF_CONSISTENT = "SelfConsistent"


@dataclass(frozen=True)
class SimConfig:
    n_agents: int = 100_000
    seed: int = 0
    dt_sim: float = 1e-3
    mode: Mode = Mode.EXOGENOUS
    horizon: float = 5.0
    output_every: int = 100
    sample_times: tuple[float, ...] = ()


@dataclass
class SimResult:
    t: np.ndarray
    beta_hat: np.ndarray
    alpha_hat: np.ndarray
    fractions: np.ndarray  # columns s, a, i, r, d
    beliefs: dict[float, np.ndarray] = field(default_factory=dict)


def _initial_agents(rng, n, grid, p0, rho0):
    """Draw beliefs from the gridded density and true states consistent with them."""
    m = np.asarray(p0, dtype=float) * grid.da
    rho_i, rho_r, rho_d = rho0
    probs = np.array([m.sum(), rho_i, rho_r, rho_d])
    probs = probs / probs.sum()
    kind = rng.choice(4, size=n, p=probs)
    state = np.full(n, S, dtype=np.int8)
    state[kind == 1] = I
    state[kind == 2] = R
    state[kind == 3] = D
    belief = np.zeros(n)
    live = kind == 0
    n_live = int(live.sum())
    if n_live and m.sum() > 0:
        node = rng.choice(grid.n_a, size=n_live, p=m / m.sum())
        jitter = rng.random(n_live) - 0.5
        belief[live] = np.clip(grid.nodes[node] + jitter * grid.da, 0.0, 1.0)
    is_a = live & (rng.random(n) < belief)
    state[is_a] = A
    return state, belief


def _policy_value(policy, theta_idx, thetas, t, belief):
    if isinstance(policy, Mapping):
        out = np.zeros(len(belief), dtype=np.int8)
        for j, th in enumerate(thetas):
            sel = theta_idx == j
            row = policy[th].slice_at(t)
            out[sel] = row[_cell(belief[sel], len(row))]
        return out
    row = policy.slice_at(t)
    return row[_cell(belief, len(row))]


def _cell(a, n_a):
    return np.clip(np.rint(a * (n_a - 1)).astype(np.int64), 0, n_a - 1)


def simulate(
    params: ModelParams,
    policy: PolicyField | Mapping[str, PolicyField] | None,
    mf: MeanFieldPath | None,
    cfg: SimConfig,
    *,
    grid: BeliefGrid,
    p0: np.ndarray,
    rho0: tuple[float, float, float] = (0.0, 0.0, 0.0),
    state_policy: Mapping[str, int] | None = None,
) -> SimResult:
    """Simulate ``cfg.n_agents`` agents up to ``cfg.horizon``.

    ``policy`` maps beliefs to activity (nearest grid node).  Passing
    ``state_policy`` instead simulates fully informed agents whose activity
    depends on their true state, e.g. ``{"s": 1, "a": 0, "i": 0}``.  In
    exogenous mode ``beta_t`` is read from ``mf``; in self-consistent mode it
    is the empirical activity of infectious agents at the start of the step.

    Raises:
        StepTooCoarse: some jump probability per step exceeds 0.1.
    """
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    thetas = params.theta_ids
    weights = np.array([params.weights[th] for th in thetas])
    n = cfg.n_agents
    theta_idx = np.sort(rng.choice(len(thetas), size=n, p=weights))
    rates = np.array(
        [[getattr(params.resolve(th), f) for f in ("lambda_sa", "lambda_ai", "lambda_ir", "lambda_id")] for th in thetas]
    )
    lam_sa, lam_ai, lam_ir, lam_id = (rates[theta_idx, j] for j in range(4))
    kappa = lam_ir + lam_id
    state, belief = _initial_agents(rng, n, grid, p0, rho0)

    dt = cfg.dt_sim
    n_steps = int(round(cfg.horizon / dt))
    beta_max = 1.0 if mf is None else float(np.max(mf.beta))
    worst = max(rates[:, 0].max() * beta_max, rates[:, 1].max(), (rates[:, 2] + rates[:, 3]).max()) * dt
    if worst > MAX_JUMP_PROB:
        raise StepTooCoarse(f"rate * dt_sim = {worst:.3g} exceeds {MAX_JUMP_PROB}")
    p_ai = 1.0 - np.exp(-lam_ai * dt)
    p_out = 1.0 - np.exp(-kappa * dt)
    p_to_r = np.divide(lam_ir, kappa, out=np.zeros(n), where=kappa > 0)
    sample_steps = {int(round(s / dt)): s for s in cfg.sample_times}

    out_t, out_beta, out_alpha, out_frac = [], [], [], []
    beliefs = {}
    for k in range(n_steps + 1):
        t = k * dt
        live = (state == S) | (state == A)
        if state_policy is not None:
            u = np.zeros(n, dtype=np.int8)
            for key, idx in (("s", S), ("a", A), ("i", I)):
                u[state == idx] = int(state_policy.get(key, 0))
        else:
            u = np.where(live, _policy_value(policy, theta_idx, thetas, t, belief), 0).astype(np.int8)
        infectious = (state == A) | (state == I)
        beta_hat = float(np.mean(u * infectious))
        alpha_hat = float(np.mean(u * (state <= I)) + np.mean(state == R))
        if k % cfg.output_every == 0 or k == n_steps:
            out_t.append(t)
            out_beta.append(beta_hat)
            out_alpha.append(alpha_hat)
            out_frac.append(np.bincount(state, minlength=5) / n)
        if k in sample_steps:
            beliefs[sample_steps[k]] = belief[live].copy()
        if k == n_steps:
            break
        if cfg.mode == Mode.SELF_CONSISTENT or mf is None:
            beta0 = beta1 = beta_hat
        else:
            beta0 = float(np.interp(t, mf.t, mf.beta))
            beta1 = float(np.interp(t + dt, mf.t, mf.beta))
        draw = rng.random(n)
        new_state = state.copy()
        p_sa = 1.0 - np.exp(-lam_sa * beta0 * u * dt)
        new_state[(state == S) & (draw < p_sa)] = A
        new_state[(state == A) & (draw < p_ai)] = I
        leaving = (state == I) & (draw < p_out)
        new_state[leaving & (draw < p_out * p_to_r)] = R
        new_state[leaving & (draw >= p_out * p_to_r)] = D
        if state_policy is None:
            # beliefs only matter before symptom onset
            if len(thetas) == 1:
                belief[live] = rk4_vector(belief[live], dt, beta0, beta1, u[live], lam_sa[0], lam_ai[0])
            else:
                belief[live] = rk4_vector(belief[live], dt, beta0, beta1, u[live], lam_sa[live], lam_ai[live])
        state = new_state
    return SimResult(
        np.array(out_t), np.array(out_beta), np.array(out_alpha), np.array(out_frac), beliefs
    )


def ks_on_grid(samples: np.ndarray, p_slice: np.ndarray, grid: BeliefGrid) -> float:
    """Kolmogorov-Smirnov distance between binned samples and a gridded density.

    Both distributions are normalized and compared through their CDFs at the
    cell faces, i.e. at the resolution of the grid.
    """
    samples = np.asarray(samples)
    if samples.size == 0:
        raise EmptySample("no belief samples to compare")
    m = np.asarray(p_slice, dtype=float)
    if m.sum() <= 0:
        raise EmptySample("the density carries no mass")
    faces = grid.faces()[:-1]
    cdf_pde = np.cumsum(m)[:-1] / m.sum()
    cdf_mc = np.searchsorted(np.sort(samples), faces, side="right") / samples.size
    return float(np.max(np.abs(cdf_pde - cdf_mc)))


def compare_to_fpk(
    samples: np.ndarray,
    p_slice: np.ndarray,
    grid: BeliefGrid,
    pde_masses: tuple[float, float, float],
    mc_fractions: tuple[float, float, float],
) -> dict:
    """KS distance on beliefs plus absolute errors of ``rho_i, rho_r, rho_d``."""
    ks = ks_on_grid(samples, p_slice, grid)
    errs = np.abs(np.asarray(pde_masses) - np.asarray(mc_fractions))
    return {"ks": ks, "err_i": float(errs[0]), "err_r": float(errs[1]), "err_d": float(errs[2])}
