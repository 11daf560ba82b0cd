"""Single-agent epidemic model: parameters, costs, generator and R0.

States are ``s`` (susceptible), ``a`` (presymptomatic), ``i`` (symptomatic),
``r`` (recovered) and ``d`` (dead).  The controlled chain stops at ``r`` or
``d``.  Activity ``u`` in [0, 1] only enters the ``s -> a`` rate
``lambda_sa * beta_t * u``; every other transition depends on the attribute
``theta`` alone.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateRemoval,
    InvalidState,
    MeanFieldBoundsError,
    NegativeRate,
    NonpositivePhiI,
    PmfNotNormalized,
    UnknownAttribute,
    ZeroDiscount,
)

logger = logging.getLogger(__name__)

BETA_MAX = 1.0 - 1e-9
ALPHA_MIN = 1e-9
ALPHA_MAX = 1.0 - 1e-9

# fields a per-attribute override may replace
OVERRIDABLE = ("lambda_sa", "lambda_ai", "lambda_ir", "lambda_id", "c_h_i", "phi_r", "phi_d")
RATE_FIELDS = ("lambda_sa", "lambda_ai", "lambda_ir", "lambda_id")


class EpiState(str, enum.Enum):
    S = "s"
    A = "a"
    I = "i"  # noqa: E741
    R = "r"
    D = "d"

    @property
    def absorbing(self) -> bool:
        return self in (EpiState.R, EpiState.D)


# ordering used by every pmf vector over the non-susceptible states
AIRD = (EpiState.A, EpiState.I, EpiState.R, EpiState.D)
SAIRD = (EpiState.S,) + AIRD


@dataclass(frozen=True)
class Attribute:
    """One value of the agent attribute ``theta`` with its population weight."""

    id: str
    weight: float = 1.0
    overrides: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class ModelParams:
    """Rates, discount and cost table of the model.

    The altruistic cost ``c_a`` applies in states ``a`` and ``i``; the activity
    reward is the mean-field ``alpha`` in states ``s``, ``a``, ``i``.  Terminal
    costs ``phi_r`` and ``phi_d`` are configuration; the defaults keep the
    infected value positive for the canonical rates.
    """

    lambda_sa: float = 1.0
    lambda_ai: float = 2.0
    lambda_ir: float = 0.4
    lambda_id: float = 0.1
    gamma: float = 0.1
    c_h_i: float = 1.0
    c_a: float = 1.0
    phi_r: float = 0.0
    phi_d: float = 10.0
    attributes: tuple[Attribute, ...] = (Attribute("all"),)

    @property
    def theta_ids(self) -> list[str]:
        return [att.id for att in self.attributes]

    @property
    def weights(self) -> dict[str, float]:
        return {att.id: att.weight for att in self.attributes}

    def attribute(self, theta: str | None) -> Attribute:
        if theta is None:
            return self.attributes[0]
        for att in self.attributes:
            if att.id == theta:
                return att
        raise UnknownAttribute(f"unknown attribute id {theta!r}")

    def resolve(self, theta: str | None = None) -> "ModelParams":
        """Return single-attribute params with the overrides of ``theta`` applied."""
        att = self.attribute(theta)
        if len(self.attributes) == 1 and not att.overrides:
            return self
        return replace(self, attributes=(Attribute(att.id, 1.0),), **dict(att.overrides))

    @property
    def removal_rate(self) -> float:
        return self.lambda_ir + self.lambda_id

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "attributes"}
        out["attributes"] = [
            {"id": att.id, "weight": att.weight, "overrides": dict(att.overrides)}
            for att in self.attributes
        ]
        return out

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ModelParams":
        raw = dict(raw)
        atts = raw.pop("attributes", None)
        if atts is not None:
            raw["attributes"] = tuple(
                Attribute(str(a["id"]), float(a.get("weight", 1.0)), dict(a.get("overrides", {})))
                for a in atts
            )
        return cls(**raw)


def phi_i_value(params: ModelParams, theta: str | None = None) -> float:
    """Stationary value of the symptomatic state (cost until removal)."""
    p = params.resolve(theta)
    return (p.c_h_i + p.lambda_ir * p.phi_r + p.lambda_id * p.phi_d) / (
        p.gamma + p.lambda_ir + p.lambda_id
    )


def validate_params(raw: ModelParams) -> ModelParams:
    """Check the model preconditions and return ``raw`` unchanged.

    Raises:
        NegativeRate: a rate (base or override) is negative.
        ZeroDiscount: ``gamma <= 0``; the undiscounted problem is ill-posed.
        PmfNotNormalized: attribute weights do not sum to one.
        NonpositivePhiI: the symptomatic value is not positive for some theta,
            so an agent could prefer getting infected to isolating.
    """
    for name in RATE_FIELDS:
        if getattr(raw, name) < 0:
            raise NegativeRate(f"{name}={getattr(raw, name)} < 0 (rates must be nonnegative)")
    if raw.c_h_i < 0 or raw.c_a < 0:
        raise NegativeRate("cost coefficients must be nonnegative")
    if not raw.gamma > 0:
        raise ZeroDiscount(f"gamma={raw.gamma}: the discount rate must be positive")
    if not raw.attributes:
        raise PmfNotNormalized("at least one attribute is required")
    ids = [att.id for att in raw.attributes]
    if len(set(ids)) != len(ids):
        raise UnknownAttribute(f"duplicate attribute ids in {ids}")
    weights = [att.weight for att in raw.attributes]
    if any(w < 0 for w in weights) or abs(math.fsum(weights) - 1.0) > 1e-12:
        raise PmfNotNormalized(f"attribute weights {weights} do not form a pmf")
    for att in raw.attributes:
        for key, value in att.overrides.items():
            if key not in OVERRIDABLE:
                raise UnknownAttribute(f"attribute {att.id!r} overrides unknown field {key!r}")
            if key in RATE_FIELDS and value < 0:
                raise NegativeRate(f"attribute {att.id!r}: {key}={value} < 0")
        phi_i = phi_i_value(raw, att.id)
        if not phi_i > 0:
            raise NonpositivePhiI(
                f"attribute {att.id!r}: phi_bar(i)={phi_i:.6g} <= 0 (infected value must be positive)"
            )
    return raw


def running_cost(x: EpiState | str, u: float, alpha: float, params: ModelParams | None = None) -> float:
    """Running cost ``c_h(x) + c_a(x) u - alpha u`` for a live state."""
    p = params if params is not None else ModelParams()
    x = EpiState(x)
    if x is EpiState.S:
        return -alpha * u
    if x is EpiState.A:
        return (p.c_a - alpha) * u
    if x is EpiState.I:
        return p.c_h_i + (p.c_a - alpha) * u
    raise InvalidState(f"no running cost in absorbing state {x.value!r}")


def generator_adjoint_apply(
    rho: Sequence[float], params: ModelParams, theta: str | None = None, inflow: float = 0.0
) -> np.ndarray:
    """Time derivative of the pmf over ``(a, i, r, d)``.

    ``inflow`` is the rate of new presymptomatic agents (the ``s -> a`` flux),
    which depends on the control and is supplied by the caller.
    """
    p = params.resolve(theta)
    ra, ri, _, _ = np.asarray(rho, dtype=float)
    return np.array(
        [
            inflow - p.lambda_ai * ra,
            p.lambda_ai * ra - (p.lambda_ir + p.lambda_id) * ri,
            p.lambda_ir * ri,
            p.lambda_id * ri,
        ]
    )


def compute_r0(params: ModelParams, beta_bar: float, theta: str | None = None) -> float:
    """Basic reproduction number for fully active agents facing ``beta_bar``."""
    p = params.resolve(theta)
    if p.lambda_ir + p.lambda_id <= 0:
        raise DegenerateRemoval("lambda_ir + lambda_id must be positive for a finite R0")
    removal = p.lambda_ir + p.lambda_id
    return p.lambda_sa * beta_bar * (p.lambda_ai + removal) / (p.lambda_ai * removal)


@dataclass(frozen=True)
class MeanFieldPath:
    """Deterministic mean-field processes ``(beta_t, alpha_t)`` on a uniform time grid."""

    t: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        for name in ("t", "beta", "alpha"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.t.shape == self.beta.shape == self.alpha.shape) or self.t.ndim != 1:
            raise MeanFieldBoundsError("t, beta and alpha must be 1-D arrays of equal length")

    @property
    def n_steps(self) -> int:
        return len(self.t) - 1

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    @classmethod
    def constant(cls, beta: float, alpha: float, dt: float, n_steps: int) -> "MeanFieldPath":
        t = dt * np.arange(n_steps + 1)
        return cls(t, np.full_like(t, beta), np.full_like(t, alpha))

    def at(self, time: float) -> tuple[float, float]:
        """Linear interpolation of ``(beta, alpha)`` at ``time``."""
        return (
            float(np.interp(time, self.t, self.beta)),
            float(np.interp(time, self.t, self.alpha)),
        )


def check_mean_field(mf: MeanFieldPath, clamp: bool = False, quiet: bool = False) -> MeanFieldPath:
    """Enforce ``0 <= beta < 1`` and ``0 < alpha < 1`` nodewise.

    With ``clamp=True`` offending values are clipped into the admissible box
    and a warning is logged instead of raising (``quiet`` leaves the reporting
    to the caller).
    """
    bad_beta = (mf.beta < 0) | (mf.beta > BETA_MAX)
    bad_alpha = (mf.alpha < ALPHA_MIN) | (mf.alpha > ALPHA_MAX)
    if not (bad_beta.any() or bad_alpha.any()):
        return mf
    if not clamp:
        raise MeanFieldBoundsError(
            f"mean field outside admissible box at {int(bad_beta.sum())} beta / "
            f"{int(bad_alpha.sum())} alpha nodes"
        )
    (logger.debug if quiet else logger.warning)(
        "clamping mean field: %d beta and %d alpha nodes out of bounds",
        int(bad_beta.sum()),
        int(bad_alpha.sum()),
    )
    return MeanFieldPath(
        mf.t, np.clip(mf.beta, 0.0, BETA_MAX), np.clip(mf.alpha, ALPHA_MIN, ALPHA_MAX)
    )
