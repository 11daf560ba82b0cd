"""Scalar nonlinear filter for the presymptomatic probability ``A_t``.

Before symptom onset an agent only knows she is in ``s`` or ``a``; her belief
``A_t = P(X_t = a | observations)`` follows

    dA/dt = (1 - A) (lambda_sa beta_t u - A lambda_ai).

``A = 1`` is an equilibrium.  Symptom onset (the jump to ``i``) is not handled
here; see :mod:`epimfg.montecarlo`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import StepUnstable
from .model import MeanFieldPath, ModelParams

MAX_HALVINGS = 30


@dataclass(frozen=True)
class BeliefPath:
    t: np.ndarray
    a: np.ndarray
    stopped_at: Optional[int] = None


def filter_drift(a, beta_t, u, params: ModelParams, theta: str | None = None):
    p = params.resolve(theta)
    return (1.0 - a) * (p.lambda_sa * beta_t * u - a * p.lambda_ai)


def logistic_closed_form(a0: float, lambda_ai: float, t):
    """Exact filter solution when ``beta = 0``: odds decay like ``exp(-lambda_ai t)``."""
    decay = np.exp(-lambda_ai * np.asarray(t, dtype=float))
    return a0 * decay / (1.0 - a0 + a0 * decay)


def _rk4(a, h, beta0, beta1, u, lam_sa, lam_ai):
    bm = 0.5 * (beta0 + beta1)
    k1 = (1.0 - a) * (lam_sa * beta0 * u - a * lam_ai)
    x = a + 0.5 * h * k1
    k2 = (1.0 - x) * (lam_sa * bm * u - x * lam_ai)
    x = a + 0.5 * h * k2
    k3 = (1.0 - x) * (lam_sa * bm * u - x * lam_ai)
    x = a + h * k3
    k4 = (1.0 - x) * (lam_sa * beta1 * u - x * lam_ai)
    return a + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _control(control_law, k: int, t: float, a: float) -> float:
    if control_law is None:
        return 1.0
    if callable(control_law):
        return float(control_law(t, a))
    # anything with a ``value(k, a)`` lookup, e.g. a PolicyField
    return float(control_law.value(k, a))


def integrate_filter(
    a0: float,
    beta_path: MeanFieldPath,
    control_law=None,
    params: ModelParams | None = None,
    theta: str | None = None,
) -> BeliefPath:
    """Closed-loop filter ``U_t = psi_t(A_t)`` on the grid of ``beta_path``.

    ``control_law`` is ``None`` (always active), a callable ``(t, a) -> u`` or a
    policy field.  The control is frozen over each step.  RK4 steps are halved
    until the update stays inside [0, 1].
    """
    params = params if params is not None else ModelParams()
    if not 0.0 <= a0 <= 1.0:
        raise ValueError(f"a0={a0} outside [0, 1]")
    p = params.resolve(theta)
    t = beta_path.t.tolist()
    beta = beta_path.beta.tolist()
    out = np.empty(len(t))
    out[0] = a0
    for k in range(len(t) - 1):
        a = out[k]
        if a == 1.0:
            out[k + 1] = 1.0
            continue
        u = _control(control_law, k, t[k], a)
        dt = t[k + 1] - t[k]
        out[k + 1] = _advance(float(a), dt, beta[k], beta[k + 1], u, p.lambda_sa, p.lambda_ai)
    return BeliefPath(beta_path.t.copy(), out)


def _advance(a, dt, beta0, beta1, u, lam_sa, lam_ai):
    n_sub = 1
    for _ in range(MAX_HALVINGS):
        h = dt / n_sub
        x = a
        ok = True
        for j in range(n_sub):
            b0 = beta0 + (beta1 - beta0) * j / n_sub
            b1 = beta0 + (beta1 - beta0) * (j + 1) / n_sub
            x = _rk4(x, h, b0, b1, u, lam_sa, lam_ai)
            if not 0.0 <= x <= 1.0:
                ok = False
                break
        if ok:
            return x
        n_sub *= 2
    raise StepUnstable(f"filter step from a={a} left [0, 1] after {MAX_HALVINGS} halvings")


def rk4_vector(a: np.ndarray, dt: float, beta0: float, beta1: float, u: np.ndarray, lambda_sa: float, lambda_ai: float) -> np.ndarray:
    """Vectorized RK4 filter step for many agents, clipped to [0, 1]."""

    def f(x, b):
        return (1.0 - x) * (lambda_sa * b * u - x * lambda_ai)

    bm = 0.5 * (beta0 + beta1)
    k1 = f(a, beta0)
    k2 = f(a + 0.5 * dt * k1, bm)
    k3 = f(a + 0.5 * dt * k2, bm)
    k4 = f(a + dt * k3, beta1)
    return np.clip(a + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), 0.0, 1.0)

