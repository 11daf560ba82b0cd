"""Damped Picard iteration for the mean-field equilibrium.

One sweep is ``mf -> Psi(mf) -> Xi(Psi(mf), mf)``: best responses by backward
HJB solves per attribute, then forward propagation of the population under
those policies.  Inside ``Xi`` the current iterate's ``beta`` drives both the
filter drift and the infection intensity; at a fixed point it coincides with
the aggregated one.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import GridMismatch, NotConverged
from .fpk import PopulationRun, propagate_characteristics, propagate_population
from .grids import BeliefGrid, PolicyField, ValueField, cfl_dt
from .hjb import solve_hjb
from .model import MeanFieldPath, ModelParams, check_mean_field

logger = logging.getLogger(__name__)

SCHEMES = {"upwind": propagate_population, "characteristics": propagate_characteristics}


@dataclass(frozen=True)
class FixedPointConfig:
    damping: float = 0.5
    tol: float = 1e-5
    max_iters: int = 200
    clamp: bool = True
    scheme: str = "upwind"

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown FPK scheme {self.scheme!r}")


@dataclass(frozen=True)
class MfeResult:
    converged: bool
    mean_field: MeanFieldPath
    policy: Mapping[str, PolicyField]
    value: Mapping[str, ValueField]
    history: tuple[float, ...]
    population: PopulationRun | None = None
    flags: tuple[str, ...] = field(default_factory=tuple)

    @property
    def iterations(self) -> int:
        return len(self.history)


def time_grid(grid: BeliefGrid, params: ModelParams, horizon: float, beta_max: float = 1.0) -> tuple[float, int]:
    """Uniform step satisfying the CFL bound for every ``beta <= beta_max`` and all attributes."""
    dt = min(cfl_dt(grid, params.resolve(th), beta_max) for th in params.theta_ids)
    dt = min(dt, horizon)
    n = int(np.ceil(horizon / dt - 1e-12))
    return horizon / n, n


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("EPIMFG_THREADS", "1")))
    except ValueError:
        return 1


def best_response(
    mf: MeanFieldPath,
    grid: BeliefGrid,
    params: ModelParams,
    terminal: Mapping[str, np.ndarray] | None = None,
) -> tuple[dict[str, PolicyField], dict[str, ValueField]]:
    """Optimal feedback policy of every attribute against ``mf``.

    The per-attribute solves are independent; ``EPIMFG_THREADS`` caps how many
    run at once.  Results are keyed in declaration order either way.
    """
    thetas = params.theta_ids

    def solve(th):
        return solve_hjb(mf, None if terminal is None else terminal[th], grid, params, th)

    workers = min(_threads(), len(thetas))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            solved = list(pool.map(solve, thetas))
    else:
        solved = [solve(th) for th in thetas]
    values = {th: s[0] for th, s in zip(thetas, solved)}
    policies = {th: s[1] for th, s in zip(thetas, solved)}
    return policies, values


def mfe_residual(mf_old: MeanFieldPath, mf_new: MeanFieldPath) -> float:
    """Sup over time nodes of ``max(|d beta|, |d alpha|)``.

    Raises:
        GridMismatch: the two paths live on different time grids.
    """
    if mf_old.t.shape != mf_new.t.shape or not np.allclose(mf_old.t, mf_new.t, rtol=0, atol=1e-12):
        raise GridMismatch("mean-field paths are on different time grids")
    return float(
        max(np.max(np.abs(mf_old.beta - mf_new.beta)), np.max(np.abs(mf_old.alpha - mf_new.alpha)))
    )


def default_initial(p0, grid: BeliefGrid, params: ModelParams, dt: float, n_steps: int) -> MeanFieldPath:
    """All presymptomatic agents active (``beta = int a p0``) and ``alpha = 0.5``."""
    beta = 0.0
    for th in params.theta_ids:
        p = p0[th] if isinstance(p0, Mapping) else p0
        beta += params.weights[th] * float(np.dot(grid.nodes, p) * grid.da)
    return MeanFieldPath.constant(min(beta, 1 - 1e-9), 0.5, dt, n_steps)


def sweep(mf, p0, rho0, grid, params, scheme="upwind"):
    """One application of ``Xi(Psi(mf))``; returns ``(new_mf, policies, values, run)``."""
    policies, values = best_response(mf, grid, params)
    run = SCHEMES[scheme](policies, p0, rho0, grid, params, mf, external_beta=True)
    return run.mean_field, policies, values, run


def picard_iterate(
    initial_mf: MeanFieldPath,
    p0,
    rho0,
    cfg: FixedPointConfig,
    grid: BeliefGrid,
    params: ModelParams,
    *,
    raise_on_failure: bool = True,
) -> MfeResult:
    """Iterate ``mf <- (1 - eta) mf + eta Xi(Psi(mf))`` until the residual drops below ``tol``.

    The residual is the undamped change ``|Xi(Psi(mf)) - mf|``, so the returned
    iterate satisfies the fixed-point equation to ``tol``.  The history is
    reported as it is; it need not be monotone.

    Raises:
        NotConverged: after ``cfg.max_iters`` sweeps (unless
            ``raise_on_failure`` is False), carrying the residual history.
    """
    mf = check_mean_field(initial_mf, clamp=cfg.clamp)
    history: list[float] = []
    clamped = 0
    for it in range(1, cfg.max_iters + 1):
        new, policies, values, run = sweep(mf, p0, rho0, grid, params, cfg.scheme)
        res = mfe_residual(mf, new)
        history.append(res)
        logger.info("picard iteration %d residual %.3e", it, res)
        if res <= cfg.tol:
            return MfeResult(True, mf, policies, values, tuple(history), run, _clamp_flags(clamped))
        eta = cfg.damping
        mixed = MeanFieldPath(mf.t, (1 - eta) * mf.beta + eta * new.beta, (1 - eta) * mf.alpha + eta * new.alpha)
        mf = check_mean_field(mixed, clamp=cfg.clamp, quiet=True)
        clamped += mf is not mixed
    if raise_on_failure:
        raise NotConverged(
            f"no fixed point within {cfg.max_iters} iterations (last residual {history[-1]:.3e})", history
        )
    return MfeResult(False, mf, policies, values, tuple(history), run, ("NotConverged", *_clamp_flags(clamped)))


def _clamp_flags(count: int) -> tuple[str, ...]:
    if count:
        logger.warning("mean field clamped into the admissible box in %d iterations", count)
        return (f"Clamped:{count}",)
    return ()


def verify_fixed_point(result: MfeResult, p0, rho0, grid: BeliefGrid, params: ModelParams, scheme: str = "upwind") -> float:
    """Residual of one further undamped sweep from the returned iterate."""
    new, *_ = sweep(result.mean_field, p0, rho0, grid, params, scheme)
    return mfe_residual(result.mean_field, new)
