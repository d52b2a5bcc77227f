"""Flatness of loss landscapes as a Boltzmann-weighted log-sum ("loss entropy").

S(T) = k * log sum_t exp(-curve(t) / (k T)) with k fixed to 1; a perfectly
flat zero curve over n grid points gives S = log n, and every added unit of
loss at tolerance scale T costs 1/T of entropy.  Energy and force entropies
are combined as alpha * S_E + (1 - alpha) * S_F.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .landscape import LandscapeProfile

K_CONST = 1.0  # dimensionless

DEFAULT_T_E = 4.0    # meV/atom
DEFAULT_T_F = 40.0   # meV/A
DEFAULT_ALPHA = 0.2


@dataclass(frozen=True)
class EntropyReport:
    S_E: float
    S_F: float
    S: float
    T_E: float       # meV/atom
    T_F: float       # meV/A
    alpha: float
    k: float
    grid_points: int
    profile_ref: str = ""

    def to_dict(self) -> dict:
        return {
            "S_E": self.S_E, "S_F": self.S_F, "S": self.S,
            "T_E_mev_per_atom": self.T_E, "T_F_mev_per_ang": self.T_F,
            "alpha": self.alpha, "k": self.k,
            "grid_points": self.grid_points, "profile_ref": self.profile_ref,
        }


def loss_entropy(curve, kT: float) -> float:
    """Stable log-sum-exp of -curve/kT; +inf entries contribute zero weight."""
    curve = np.asarray(curve, dtype=float)
    if curve.size == 0:
        raise ValueError("empty curve")
    if kT <= 0:
        raise ValueError("kT must be positive")
    if np.any(np.isnan(curve)):
        raise ValueError("curve contains NaN")
    a = -curve / (K_CONST * kT)          # +inf loss -> -inf exponent -> weight 0
    amax = np.max(a)
    if amax == -np.inf:
        return -np.inf
    return float(K_CONST * (amax + np.log(np.sum(np.exp(a - amax)))))


def weighted_entropy(S_E: float, S_F: float, alpha: float) -> float:
    """alpha * S_E + (1 - alpha) * S_F, alpha in [0, 1]."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return alpha * S_E + (1.0 - alpha) * S_F


def entropy_from_profile(p: LandscapeProfile, T_E: float = DEFAULT_T_E,
                         T_F: float = DEFAULT_T_F, alpha: float = DEFAULT_ALPHA,
                         profile_ref: str = "") -> EntropyReport:
    """Entropies of the direction-averaged energy/force curves of a profile."""
    s_e = loss_entropy(p.mean_E, T_E)
    s_f = loss_entropy(p.mean_F, T_F)
    return EntropyReport(S_E=s_e, S_F=s_f, S=weighted_entropy(s_e, s_f, alpha),
                         T_E=T_E, T_F=T_F, alpha=alpha, k=K_CONST,
                         grid_points=len(p.t_grid), profile_ref=profile_ref)


def temperature_sweep(p: LandscapeProfile, T_E_range=(0.4, 400.0), T_F_range=(4.0, 4000.0),
                      alpha: float = DEFAULT_ALPHA, n_points: int = 25,
                      profile_ref: str = ""):
    """Entropies over log-spaced (T_E, T_F) pairs spanning the given ranges.

    Returns (reports, info); info records the flat-zero reference entropy
    log(grid size) that upper-bounds every S in the sweep.
    """
    if min(T_E_range) <= 0 or min(T_F_range) <= 0 or n_points < 2:
        raise ValueError("ranges must be positive and n_points >= 2")
    te = np.geomspace(T_E_range[0], T_E_range[1], n_points)
    tf = np.geomspace(T_F_range[0], T_F_range[1], n_points)
    reports = [entropy_from_profile(p, T_E=a, T_F=b, alpha=alpha, profile_ref=profile_ref)
               for a, b in zip(te, tf)]
    info = {"flat_zero_entropy": float(np.log(len(p.t_grid))),
            "alpha": alpha, "n_points": n_points}
    return reports, info


SWEEP_COLUMNS = ("T_E", "T_F", "S_E", "S_F", "S")


def write_report_json(report: EntropyReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True)
        fh.write("\n")


def write_sweep_csv(reports, path, info=None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for r in reports:
            writer.writerow([repr(float(x)) for x in (r.T_E, r.T_F, r.S_E, r.S_F, r.S)])
    if info is not None:
        with open(str(path) + ".meta.json", "w") as fh:
            json.dump(info, fh, sort_keys=True)
            fh.write("\n")
