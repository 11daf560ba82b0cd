"""Backward HJB solver on the belief interval.

The value ``phi_t(a)`` of a not-yet-symptomatic agent with belief ``a`` solves

    -d phi/dt + gamma phi = -lambda_ai a (1 - a) phi'
                            + lambda_ai a (phi_i - phi)
                            + min_u [lambda_sa beta (1 - a) phi' + c_a a - alpha] u

The Hamiltonian is affine in ``u`` so the minimum is attained at 0 or 1.  Each
control gets its own first-order upwind slope (by the sign of its drift), the
cheaper one wins, and the reaction ``-(gamma + lambda_ai a) phi`` is implicit.
The scheme is monotone under the CFL bound of :mod:`epimfg.grids`.
"""

from __future__ import annotations

import logging

import numpy as np

from .errors import NotConverged
from .fully_observed import phi_bar_a, phi_bar_i
from .grids import BeliefGrid, PolicyField, ValueField, cfl_dt, check_cfl
from .model import MeanFieldPath, ModelParams

logger = logging.getLogger(__name__)


def switching_term(a, dphida, beta_t, alpha_t, params: ModelParams, theta: str | None = None):
    """Coefficient of ``u`` in the Hamiltonian; activity pays iff it is negative."""
    p = params.resolve(theta)
    return p.lambda_sa * beta_t * (1.0 - a) * dphida + p.c_a * a - alpha_t


def default_terminal(grid: BeliefGrid, params: ModelParams, theta: str | None = None) -> np.ndarray:
    """Linear interpolant ``a * phi_bar(a)`` used to truncate the infinite horizon."""
    return grid.nodes * phi_bar_a(params, theta)


def _hamiltonian(phi, beta, alpha, grid, p, phi_i):
    """Return the explicit part of the Hamiltonian and the chosen control."""
    a = grid.nodes
    da = grid.da
    diff = np.diff(phi) / da
    dplus = np.append(diff, 0.0)
    dminus = np.insert(diff, 0, 0.0)
    f0 = -(1.0 - a) * p.lambda_ai * a
    f1 = (1.0 - a) * (p.lambda_sa * beta - p.lambda_ai * a)
    t0 = f0 * dminus
    t1 = np.where(f1 > 0, f1 * dplus, f1 * dminus)
    m = t1 - t0 + p.c_a * a - alpha
    u = m < 0
    u[-1] = False
    h = t0 + np.where(u, m, 0.0) + p.lambda_ai * a * phi_i
    return h, u.astype(np.int8)


def discrete_switching(phi, beta_t, alpha_t, grid: BeliefGrid, params: ModelParams, theta=None):
    """Discrete switching function ``H(u=1) - H(u=0)`` on the grid."""
    p = params.resolve(theta)
    a = grid.nodes
    diff = np.diff(phi) / grid.da
    dplus = np.append(diff, 0.0)
    dminus = np.insert(diff, 0, 0.0)
    f0 = -(1.0 - a) * p.lambda_ai * a
    f1 = (1.0 - a) * (p.lambda_sa * beta_t - p.lambda_ai * a)
    return np.where(f1 > 0, f1 * dplus, f1 * dminus) - f0 * dminus + p.c_a * a - alpha_t


def hjb_backward_step(
    phi_next: np.ndarray,
    beta_t: float,
    alpha_t: float,
    grid: BeliefGrid,
    dt: float,
    params: ModelParams,
    theta: str | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One backward step ``t + dt -> t``; returns ``(phi, psi)``.

    At ``a = 1`` both drifts vanish and the update is the implicit Euler step
    of the scalar ODE for a certainly-presymptomatic agent.
    """
    p = params.resolve(theta)
    check_cfl(dt, grid, p, beta_t)
    h, psi = _hamiltonian(phi_next, beta_t, alpha_t, grid, p, phi_bar_i(params, theta))
    phi = (phi_next + dt * h) / (1.0 + dt * (p.gamma + p.lambda_ai * grid.nodes))
    return phi, psi


def solve_hjb(
    mf: MeanFieldPath,
    terminal_phi: np.ndarray | None,
    grid: BeliefGrid,
    params: ModelParams,
    theta: str | None = None,
) -> tuple[ValueField, PolicyField]:
    """Full backward sweep over the time grid of ``mf``.

    Slice ``k`` uses ``(beta, alpha)`` at ``t[k]``.  The terminal policy slice
    is the minimizer against the terminal value.
    """
    p = params.resolve(theta)
    if terminal_phi is None:
        terminal_phi = default_terminal(grid, params, theta)
    n = len(mf.t)
    if n > 1:
        check_cfl(mf.dt, grid, p, float(mf.beta.max()))
    phi_i = phi_bar_i(params, theta)
    phi = np.empty((n, grid.n_a))
    psi = np.empty((n, grid.n_a), dtype=np.int8)
    phi[-1] = terminal_phi
    _, psi[-1] = _hamiltonian(phi[-1], mf.beta[-1], mf.alpha[-1], grid, p, phi_i)
    denom = 1.0 + mf.dt * (p.gamma + p.lambda_ai * grid.nodes)
    for k in range(n - 2, -1, -1):
        h, psi[k] = _hamiltonian(phi[k + 1], mf.beta[k], mf.alpha[k], grid, p, phi_i)
        phi[k] = (phi[k + 1] + mf.dt * h) / denom
    a = grid.nodes
    return ValueField(mf.t.copy(), a, phi), PolicyField(mf.t.copy(), a, psi)


def solve_stationary_hjb(
    beta_bar: float,
    alpha_bar: float,
    grid: BeliefGrid,
    params: ModelParams,
    theta: str | None = None,
    *,
    tol: float = 1e-8,
    max_iters: int = 5_000_000,
    dt: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Stationary value and policy by false-transient marching.

    Marches the backward step with frozen ``(beta_bar, alpha_bar)`` from the
    default terminal slice until the sup-norm change of one step drops below
    ``tol``.

    Raises:
        NotConverged: after ``max_iters`` steps.
    """
    p = params.resolve(theta)
    if dt is None:
        dt = cfl_dt(grid, p, beta_bar)
        if not np.isfinite(dt):
            dt = 1.0
    check_cfl(dt, grid, p, beta_bar)
    phi_i = phi_bar_i(params, theta)
    denom = 1.0 + dt * (p.gamma + p.lambda_ai * grid.nodes)
    phi = default_terminal(grid, params, theta)
    history = []
    for it in range(1, max_iters + 1):
        h, psi = _hamiltonian(phi, beta_bar, alpha_bar, grid, p, phi_i)
        new = (phi + dt * h) / denom
        change = float(np.max(np.abs(new - phi)))
        phi = new
        if it % 1000 == 0:
            history.append(change)
        if change < tol:
            _, psi = _hamiltonian(phi, beta_bar, alpha_bar, grid, p, phi_i)
            logger.debug("stationary HJB converged after %d steps", it)
            return phi, psi
    raise NotConverged(f"false transient did not settle in {max_iters} steps", history)


def policy_threshold(psi: np.ndarray, a: np.ndarray) -> float | None:
    """Belief at which a threshold policy first switches from 1 to 0.

    Returns the midpoint between the last active and first isolated node, or
    ``None`` if the policy is identically zero.
    """
    active = np.flatnonzero(psi == 1)
    if active.size == 0:
        return None
    j = active[-1]
    return 0.5 * (a[j] + a[j + 1]) if j + 1 < len(a) else float(a[j])
