"""Belief grid, grid-function containers and the CFL bound shared by HJB and FPK."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import CflViolation
from .model import ModelParams

CFL_SAFETY = 0.9


@dataclass(frozen=True)
class BeliefGrid:
    """Uniform nodes ``a_j = j / (n_a - 1)`` on [0, 1], endpoints included.

    Each node owns a cell of width ``da`` centred on it; densities are stored
    per unit belief, masses are ``p * da``.
    """

    n_a: int

    def __post_init__(self):
        if self.n_a < 2:
            raise ValueError("a belief grid needs at least the two endpoints")

    @cached_property
    def nodes(self) -> np.ndarray:
        a = np.linspace(0.0, 1.0, self.n_a)
        a.setflags(write=False)
        return a

    @property
    def da(self) -> float:
        return 1.0 / (self.n_a - 1)

    def index(self, a) -> np.ndarray:
        """Index of the cell containing ``a`` (nearest node)."""
        return np.clip(np.rint(np.asarray(a) * (self.n_a - 1)).astype(np.int64), 0, self.n_a - 1)

    def faces(self) -> np.ndarray:
        """Right faces of the cells, clipped to [0, 1]."""
        return np.minimum(self.nodes + 0.5 * self.da, 1.0)


def max_speed(grid: BeliefGrid, params: ModelParams, beta_max: float) -> float:
    a = grid.nodes
    return float(params.lambda_ai * np.max(a * (1 - a)) + params.lambda_sa * beta_max)


def cfl_dt(grid: BeliefGrid, params: ModelParams, beta_max: float, safety: float = CFL_SAFETY) -> float:
    """Largest admissible time step for the explicit transport terms."""
    speed = max_speed(grid, params, beta_max)
    return np.inf if speed == 0 else safety * grid.da / speed


def check_cfl(dt: float, grid: BeliefGrid, params: ModelParams, beta_max: float) -> None:
    limit = cfl_dt(grid, params, beta_max)
    if dt > limit * (1 + 1e-12):
        raise CflViolation(f"dt={dt:.3g} exceeds the CFL limit {limit:.3g} (da={grid.da:.3g})")


@dataclass(frozen=True)
class ValueField:
    """``phi[k, j]`` is the value at time ``t[k]`` and belief node ``j``."""

    t: np.ndarray
    a: np.ndarray
    phi: np.ndarray


@dataclass(frozen=True)
class PolicyField:
    """Bang-bang activity law ``psi[k, j]`` in {0, 1}.

    A field with a single time slice is stationary and is used at every time.
    """

    t: np.ndarray
    a: np.ndarray
    psi: np.ndarray

    @property
    def n_a(self) -> int:
        return self.psi.shape[1]

    def slice(self, k: int) -> np.ndarray:
        return self.psi[min(k, self.psi.shape[0] - 1)]

    def slice_at(self, time: float) -> np.ndarray:
        if self.psi.shape[0] == 1:
            return self.psi[0]
        k = int(np.searchsorted(self.t, time + 1e-12, side="right") - 1)
        return self.psi[min(max(k, 0), self.psi.shape[0] - 1)]

    def value(self, k: int, a) -> np.ndarray:
        row = self.slice(k)
        idx = np.clip(np.rint(np.asarray(a) * (self.n_a - 1)).astype(np.int64), 0, self.n_a - 1)
        return row[idx]

    @classmethod
    def stationary(cls, a: np.ndarray, psi: np.ndarray) -> "PolicyField":
        return cls(np.zeros(1), np.asarray(a), np.asarray(psi, dtype=np.int8)[None, :])

    @classmethod
    def threshold(cls, grid: BeliefGrid, a_thresh: float) -> "PolicyField":
        """Active strictly below ``a_thresh``, isolated at and above it."""
        return cls.stationary(grid.nodes, (grid.nodes < a_thresh).astype(np.int8))

    @classmethod
    def constant(cls, grid: BeliefGrid, u: int) -> "PolicyField":
        psi = np.full(grid.n_a, u, dtype=np.int8)
        psi[-1] = 0
        return cls.stationary(grid.nodes, psi)
