"""CSV output with a fixed byte format.

Every file has a header row, ``\\n`` line endings and floats written with
``repr`` (shortest round-trip form, ``.`` decimal), so identical runs give
byte-identical files.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .grids import PolicyField, ValueField
from .model import MeanFieldPath


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return "" if x is None else str(x)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path


def write_mean_field(path, mf: MeanFieldPath) -> Path:
    return write_csv(path, ("t", "beta", "alpha"), zip(mf.t, mf.beta, mf.alpha))


def write_policy(path, policies: Mapping[str, PolicyField], every: int = 1) -> Path:
    """Long format ``theta, t, a, psi``; ``every`` thins the time slices."""

    def rows():
        for th, pf in policies.items():
            for k in range(0, pf.psi.shape[0], every):
                for a, u in zip(pf.a, pf.psi[k]):
                    yield th, pf.t[k], a, int(u)

    return write_csv(path, ("theta", "t", "a", "psi"), rows())


def write_value(path, values: Mapping[str, ValueField], every: int = 1) -> Path:
    def rows():
        for th, vf in values.items():
            for k in range(0, vf.phi.shape[0], every):
                for a, v in zip(vf.a, vf.phi[k]):
                    yield th, vf.t[k], a, v

    return write_csv(path, ("theta", "t", "a", "phi"), rows())


def write_history(path, history: Sequence[float]) -> Path:
    return write_csv(path, ("iter", "residual"), ((i + 1, r) for i, r in enumerate(history)))


def write_hjb(path, values: Mapping[str, ValueField], policies: Mapping[str, PolicyField], every: int = 1) -> Path:
    """Grid dump ``theta, t, a, phi, psi`` of a backward solve."""

    def rows():
        for th, vf in values.items():
            psi = policies[th].psi
            for k in range(0, vf.phi.shape[0], every):
                for j, a in enumerate(vf.a):
                    yield th, vf.t[k], a, vf.phi[k, j], int(psi[min(k, psi.shape[0] - 1), j])

    return write_csv(path, ("theta", "t", "a", "phi", "psi"), rows())


def write_compartments(
    path, mf: MeanFieldPath, compartments: Mapping[str, np.ndarray], every: int = 1
) -> Path:
    """Columns ``t, theta, belief_mass, rho_i, rho_r, rho_d, beta, alpha``."""

    def rows():
        for k in range(0, len(mf.t), every):
            for th, arr in compartments.items():
                yield (mf.t[k], th, *arr[k], mf.beta[k], mf.alpha[k])

    header = ("t", "theta", "belief_mass", "rho_i", "rho_r", "rho_d", "beta", "alpha")
    return write_csv(path, header, rows())


def write_population(path, pop, mf: MeanFieldPath, weights: Mapping[str, float]) -> Path:
    """Fully observed trajectories per theta plus an aggregate ``ALL`` row per time node."""
    agg = pop.aggregate(weights)

    def rows():
        for k, t in enumerate(pop.t):
            for th, rho in pop.rho.items():
                yield (t, th, *rho[k], mf.beta[k], mf.alpha[k])
            yield (t, "ALL", *agg[k], mf.beta[k], mf.alpha[k])

    header = ("t", "theta", "rho_s", "rho_a", "rho_i", "rho_r", "rho_d", "beta", "alpha")
    return write_csv(path, header, rows())


def write_density(path, t: np.ndarray, a: np.ndarray, snapshots: Mapping[str, np.ndarray]) -> Path:
    def rows():
        for th, snaps in snapshots.items():
            for k, time in enumerate(t):
                for x, p in zip(a, snaps[k]):
                    yield time, th, x, p

    return write_csv(path, ("t", "theta", "a", "p"), rows())


def write_belief_path(path, belief) -> Path:
    return write_csv(path, ("t", "a"), zip(belief.t, belief.a))
