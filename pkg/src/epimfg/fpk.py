"""Forward evolution of the belief density and the compartment masses.

The density ``p_t(a)`` of not-yet-symptomatic agents obeys

    dp/dt = -d/da[(1 - a)(lambda_sa beta psi - a lambda_ai) p] - a lambda_ai p

and the sink ``a lambda_ai p`` feeds the symptomatic mass, which empties into
``r`` and ``d``.  The transport is the transpose of the HJB upwind operator:
node ``j`` sends mass to its right neighbour at rate ``max(f_j, 0) / da`` and
to its left neighbour at rate ``max(-f_j, 0) / da``.  This keeps the discrete
pairing with the HJB exact, conserves mass to round-off and is positive under
the CFL bound.  No flux enters through ``a = 0`` and ``f(1) = 0`` so nothing
leaves through ``a = 1``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import MassDriftExceeded
from .grids import BeliefGrid, PolicyField, check_cfl
from .model import MeanFieldPath, ModelParams

logger = logging.getLogger(__name__)

CLIP_BUDGET = 1e-6
MASS_TOL = 1e-8


@dataclass(frozen=True)
class BeliefDensity:
    """Density over beliefs (per unit ``a``) plus symptomatic/removed masses."""

    p: np.ndarray
    rho_i: float = 0.0
    rho_r: float = 0.0
    rho_d: float = 0.0

    def masses(self, grid: BeliefGrid) -> np.ndarray:
        return self.p * grid.da

    def total(self, grid: BeliefGrid) -> float:
        return float(self.p.sum() * grid.da + self.rho_i + self.rho_r + self.rho_d)


def initial_density(grid: BeliefGrid, mean: float = 0.5, width: float = 0.1, mass: float = 1.0) -> np.ndarray:
    """Gaussian bump truncated to [0, 1], zero at ``a = 0``, total mass ``mass``."""
    a = grid.nodes
    p = np.exp(-0.5 * ((a - mean) / width) ** 2)
    p[0] = 0.0
    total = p.sum() * grid.da
    return p * (mass / total) if total > 0 else p


def observed_density(grid: BeliefGrid, rho_s: float, rho_a: float) -> np.ndarray:
    """Two-node density for full observation: node 0 holds ``s``, node 1 holds ``a``."""
    if grid.n_a != 2:
        raise ValueError("the observed (degenerate) density needs a two-node grid")
    return np.array([rho_s, rho_a]) / grid.da


def drift(grid: BeliefGrid, psi: np.ndarray, beta_t: float, params: ModelParams) -> np.ndarray:
    a = grid.nodes
    return (1.0 - a) * (params.lambda_sa * beta_t * psi - params.lambda_ai * a)


def fpk_rhs(m: np.ndarray, psi: np.ndarray, beta_t: float, grid: BeliefGrid, params: ModelParams) -> np.ndarray:
    """Semi-discrete ``dm/dt`` for node masses (transport plus sink)."""
    f = drift(grid, psi, beta_t, params)
    right = np.maximum(f, 0.0) / grid.da * m
    left = np.maximum(-f, 0.0) / grid.da * m
    out = -(right + left) - params.lambda_ai * grid.nodes * m
    out[1:] += right[:-1]
    out[:-1] += left[1:]
    return out


def _clip(m: np.ndarray) -> tuple[np.ndarray, float]:
    """Zero negative masses and rescale the rest so the total is unchanged."""
    neg = m < 0
    if not neg.any():
        return m, 0.0
    clipped = float(-m[neg].sum())
    m = np.where(neg, 0.0, m)
    pos = m.sum()
    if pos > 0:
        m *= (pos - clipped) / pos
    logger.warning("clipped %.3g of negative mass", clipped)
    return m, clipped


def fpk_step(
    p: np.ndarray,
    psi_t: np.ndarray,
    beta_t: float,
    grid: BeliefGrid,
    dt: float,
    params: ModelParams,
    theta: str | None = None,
) -> tuple[np.ndarray, float, float]:
    """Advance the density by ``dt``; returns ``(p_next, leak, clipped)``.

    ``leak`` is the mass that became symptomatic during the step.  The sink is
    applied implicitly (factor ``1 / (1 + dt lambda_ai a)``), then the
    transport explicitly, which is the transpose of the HJB step.
    """
    prm = params.resolve(theta)
    check_cfl(dt, grid, prm, beta_t)
    m = p * grid.da
    kept = m / (1.0 + dt * prm.lambda_ai * grid.nodes)
    leak = float(m.sum() - kept.sum())
    f = drift(grid, psi_t, beta_t, prm)
    right = dt * np.maximum(f, 0.0) / grid.da * kept
    left = dt * np.maximum(-f, 0.0) / grid.da * kept
    new = kept - right - left
    new[1:] += right[:-1]
    new[:-1] += left[1:]
    new, clipped = _clip(new)
    return new / grid.da, leak, clipped


def compartment_step(state: BeliefDensity, leak: float, dt: float, params: ModelParams, theta: str | None = None) -> BeliefDensity:
    """Feed ``leak`` into ``i`` at a constant rate over the step and drain ``i``.

    The exact solution for a constant inflow is used, so a constant leak rate
    ``L`` drives ``rho_i`` to ``L / (lambda_ir + lambda_id)`` exactly, and the
    outflow is split between ``r`` and ``d`` in proportion to their rates.
    """
    p = params.resolve(theta)
    kappa = p.lambda_ir + p.lambda_id
    if leak < 0:
        raise ValueError("leak must be nonnegative")
    if kappa == 0:
        return BeliefDensity(state.p, state.rho_i + leak, state.rho_r, state.rho_d)
    decay = np.exp(-kappa * dt)
    # expm1 keeps the inflow exact for tiny steps
    rho_i = state.rho_i * decay + (leak / dt) * -np.expm1(-kappa * dt) / kappa if dt > 0 else state.rho_i + leak
    removed = state.rho_i + leak - rho_i
    return BeliefDensity(
        state.p,
        rho_i,
        state.rho_r + removed * p.lambda_ir / kappa,
        state.rho_d + removed * p.lambda_id / kappa,
    )


def aggregate_mean_field(
    states: Mapping[str, BeliefDensity],
    psis: Mapping[str, np.ndarray],
    weights: Mapping[str, float],
    grid: BeliefGrid,
) -> tuple[float, float]:
    """``beta = sum_theta w int a psi p``, ``alpha = sum_theta w (rho_r + int psi p)``."""
    beta = 0.0
    alpha = 0.0
    for th in sorted(states, key=list(weights).index):
        m = states[th].masses(grid)
        active = psis[th] * m
        beta += weights[th] * float(np.dot(grid.nodes, active))
        alpha += weights[th] * (states[th].rho_r + float(active.sum()))
    return beta, alpha


@dataclass
class PopulationRun:
    """Result of a forward propagation.

    ``mean_field`` is aggregated at every time node; ``snapshots[theta]`` holds
    densities at ``saved_t``; ``compartments[theta]`` has columns
    ``(int p, rho_i, rho_r, rho_d)`` at every node.
    """

    mean_field: MeanFieldPath
    saved_t: np.ndarray
    snapshots: dict[str, np.ndarray]
    compartments: dict[str, np.ndarray]
    mass_drift: float
    clipped: float
    final: dict[str, BeliefDensity] = field(default_factory=dict)


def _policy_for(policy, theta):
    return policy[theta] if isinstance(policy, Mapping) else policy


def _per_theta(value, thetas, is_mapping):
    return {th: value[th] for th in thetas} if is_mapping else {th: value for th in thetas}


def propagate_population(
    policy: PolicyField | Mapping[str, PolicyField],
    p0: np.ndarray | Mapping[str, np.ndarray],
    rho0: tuple[float, float, float] | Mapping[str, tuple[float, float, float]],
    grid: BeliefGrid,
    params: ModelParams,
    mf: MeanFieldPath,
    *,
    external_beta: bool = True,
    save_times=None,
) -> PopulationRun:
    """March density and compartments over the time grid of ``mf``.

    With ``external_beta`` the filter drift uses ``mf.beta`` (the fixed-point
    iterate); otherwise the run is open loop and each step uses the ``beta``
    aggregated from the current state.  ``rho0`` gives ``(rho_i, rho_r, rho_d)``.
    The returned mean field is always the aggregate of the propagated states.

    Raises:
        MassDriftExceeded: total mass moved by more than 1e-8 or the clipped
            negative mass exceeded 1e-6.
    """
    thetas = params.theta_ids
    weights = params.weights
    resolved = {th: params.resolve(th) for th in thetas}
    p0s = _per_theta(p0, thetas, isinstance(p0, Mapping))
    c0s = _per_theta(rho0, thetas, isinstance(rho0, Mapping))
    if grid.n_a > 2 and any(p0s[th][0] != 0 for th in thetas):
        raise ValueError("initial density must vanish at a = 0")
    n = len(mf.t)
    if save_times is None:
        save_idx = [0, n - 1]
    else:
        save_idx = [int(round((s - mf.t[0]) / mf.dt)) if mf.dt > 0 else 0 for s in save_times]
    save_idx = sorted({min(max(k, 0), n - 1) for k in save_idx})

    states = {th: BeliefDensity(np.asarray(p0s[th], dtype=float).copy(), *c0s[th]) for th in thetas}
    start = {th: states[th].total(grid) for th in thetas}
    comps = {th: np.empty((n, 4)) for th in thetas}
    snaps = {th: [] for th in thetas}
    beta = np.empty(n)
    alpha = np.empty(n)
    clipped = 0.0
    drift_max = 0.0
    for k in range(n):
        psis = {th: _policy_for(policy, th).slice(k) for th in thetas}
        beta[k], alpha[k] = aggregate_mean_field(states, psis, weights, grid)
        for th in thetas:
            st = states[th]
            comps[th][k] = (st.p.sum() * grid.da, st.rho_i, st.rho_r, st.rho_d)
        if k in save_idx:
            for th in thetas:
                snaps[th].append(states[th].p.copy())
        if k == n - 1:
            break
        drive = mf.beta[k] if external_beta else beta[k]
        for th in thetas:
            st = states[th]
            p_next, leak, clip = fpk_step(st.p, psis[th], drive, grid, mf.dt, resolved[th])
            clipped += clip
            states[th] = compartment_step(
                BeliefDensity(p_next, st.rho_i, st.rho_r, st.rho_d), leak, mf.dt, resolved[th]
            )
            drift_max = max(drift_max, abs(states[th].total(grid) - start[th]))
        if clipped > CLIP_BUDGET:
            raise MassDriftExceeded(f"cumulative clipped mass {clipped:.3g} exceeds {CLIP_BUDGET}")
        if drift_max > MASS_TOL:
            raise MassDriftExceeded(f"total mass drifted by {drift_max:.3g}")
    return PopulationRun(
        mean_field=MeanFieldPath(mf.t, beta, alpha),
        saved_t=mf.t[save_idx],
        snapshots={th: np.array(v) for th, v in snaps.items()},
        compartments=comps,
        mass_drift=drift_max,
        clipped=clipped,
        final=states,
    )


def propagate_characteristics(
    policy: PolicyField | Mapping[str, PolicyField],
    p0: np.ndarray | Mapping[str, np.ndarray],
    rho0: tuple[float, float, float] | Mapping[str, tuple[float, float, float]],
    grid: BeliefGrid,
    params: ModelParams,
    mf: MeanFieldPath,
    *,
    n_sub: int = 64,
    external_beta: bool = True,
    save_times=None,
) -> PopulationRun:
    """Same contract as :func:`propagate_population`, solved along characteristics.

    The FPK equation has no diffusion, so the density is the push-forward of
    ``p0`` under the filter flow, weighted by the survival factor
    ``exp(-int lambda_ai a)``.  Each cell is split into ``n_sub`` quadrature
    points carrying their share of the cell mass; points follow the filter
    (RK4, control from the nearest node) and shed mass into ``i`` at the exact
    rate.  Densities are rebuilt by binning onto the grid.  Unlike the upwind
    scheme this adds no numerical diffusion, which matters because the filter
    contracts beliefs by ``exp(-lambda_ai t)``.
    """
    from .belief_filter import rk4_vector

    thetas = params.theta_ids
    weights = params.weights
    resolved = {th: params.resolve(th) for th in thetas}
    p0s = _per_theta(p0, thetas, isinstance(p0, Mapping))
    c0s = _per_theta(rho0, thetas, isinstance(rho0, Mapping))
    n = len(mf.t)
    if save_times is None:
        save_idx = [0, n - 1]
    else:
        save_idx = [int(round((s - mf.t[0]) / mf.dt)) if mf.dt > 0 else 0 for s in save_times]
    save_idx = sorted({min(max(k, 0), n - 1) for k in save_idx})

    # quadrature points at sub-cell midpoints, clipped cells at the ends
    offs = (np.arange(n_sub) + 0.5) / n_sub - 0.5
    lo = np.maximum(grid.nodes - 0.5 * grid.da, 0.0)
    hi = np.minimum(grid.nodes + 0.5 * grid.da, 1.0)
    x0 = (0.5 * (lo + hi))[:, None] + (hi - lo)[:, None] * offs[None, :]
    x0 = x0.ravel()
    points = {th: x0.copy() for th in thetas}
    mass = {th: np.repeat(np.asarray(p0s[th], dtype=float) * grid.da / n_sub, n_sub) for th in thetas}
    comp = {th: BeliefDensity(np.asarray(p0s[th], dtype=float).copy(), *c0s[th]) for th in thetas}
    start = {th: comp[th].total(grid) for th in thetas}
    comps = {th: np.empty((n, 4)) for th in thetas}
    snaps = {th: [] for th in thetas}
    beta = np.empty(n)
    alpha = np.empty(n)
    drift_max = 0.0
    for k in range(n):
        for th in thetas:
            binned = np.bincount(grid.index(points[th]), mass[th], minlength=grid.n_a)
            c = comp[th]
            comp[th] = BeliefDensity(binned / grid.da, c.rho_i, c.rho_r, c.rho_d)
            comps[th][k] = (mass[th].sum(), c.rho_i, c.rho_r, c.rho_d)
        psis = {th: _policy_for(policy, th).slice(k) for th in thetas}
        beta[k], alpha[k] = aggregate_mean_field(comp, psis, weights, grid)
        if k in save_idx:
            for th in thetas:
                snaps[th].append(comp[th].p.copy())
        if k == n - 1:
            break
        b0, b1 = (mf.beta[k], mf.beta[k + 1]) if external_beta else (beta[k], beta[k])
        for th in thetas:
            p = resolved[th]
            x = points[th]
            u = psis[th][grid.index(x)]
            x_new = rk4_vector(x, mf.dt, b0, b1, u, p.lambda_sa, p.lambda_ai)
            # trapezoidal hazard along the step
            keep = np.exp(-0.5 * mf.dt * p.lambda_ai * (x + x_new))
            leak = float(np.dot(mass[th], 1.0 - keep))
            mass[th] = mass[th] * keep
            points[th] = x_new
            comp[th] = compartment_step(comp[th], leak, mf.dt, p)
            total = mass[th].sum() + comp[th].rho_i + comp[th].rho_r + comp[th].rho_d
            drift_max = max(drift_max, abs(total - start[th]))
        if drift_max > MASS_TOL:
            raise MassDriftExceeded(f"total mass drifted by {drift_max:.3g}")
    return PopulationRun(
        mean_field=MeanFieldPath(mf.t, beta, alpha),
        saved_t=mf.t[save_idx],
        snapshots={th: np.array(v) for th, v in snaps.items()},
        compartments=comps,
        mass_drift=drift_max,
        clipped=0.0,
        final=comp,
    )
