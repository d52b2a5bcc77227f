"""Analytic pair potentials used as ground truth for synthetic experiments."""

from dataclasses import dataclass

import numpy as np

from .data import Configuration
from .geometry import pair_table

KB_EV_PER_K = 8.617333262e-5  # Boltzmann constant, eV/K


def quintic_switch(x):
    """C2 step from 1 at x=0 to 0 at x=1; value and derivative w.r.t. x."""
    x = np.asarray(x, dtype=float)
    s = 1.0 - x**3 * (10.0 - 15.0 * x + 6.0 * x**2)
    ds = -30.0 * x**2 * (1.0 - x) ** 2
    return s, ds


def _switched(v, dv, r, r_on, cutoff):
    """Apply the smooth switch to raw pair energies/derivatives on [r_on, cutoff]."""
    r = np.asarray(r, dtype=float)
    inside = r <= r_on
    beyond = r >= cutoff
    x = np.clip((r - r_on) / (cutoff - r_on), 0.0, 1.0)
    s, ds = quintic_switch(x)
    ds = ds / (cutoff - r_on)
    vs = np.where(inside, v, v * s)
    dvs = np.where(inside, dv, dv * s + v * ds)
    vs = np.where(beyond, 0.0, vs)
    dvs = np.where(beyond, 0.0, dvs)
    return vs, dvs


class _PairPotential:
    """Shared pairwise-sum machinery; subclasses provide raw V(r), V'(r)."""

    def pair_energy(self, r):
        v, dv = self._raw(np.asarray(r, dtype=float))
        return _switched(v, dv, r, self.switch_start, self.cutoff)[0]

    def pair_energy_deriv(self, r):
        v, dv = self._raw(np.asarray(r, dtype=float))
        return _switched(v, dv, r, self.switch_start, self.cutoff)

    def energy_forces(self, positions, species=None, cell=None, pbc=None):
        """Total switched pair energy and analytic forces (eV, eV/A)."""
        positions = np.asarray(positions, dtype=float)
        n = len(positions)
        forces = np.zeros((n, 3))
        if n < 2:
            return 0.0, forces
        pt = pair_table(positions, self.cutoff, cell=cell, pbc=pbc)
        mask = pt.half
        r = pt.r[mask]
        v, dv = self.pair_energy_deriv(r)
        energy = float(np.sum(v))
        # dE/dr_j = dv * unit(i->j); F_j = -dv * unit, F_i = +dv * unit
        contrib = dv[:, None] * pt.unit[mask]
        np.add.at(forces, pt.j[mask], -contrib)
        np.add.at(forces, pt.i[mask], contrib)
        return energy, forces


@dataclass
class LennardJones(_PairPotential):
    """4*eps*((sigma/r)^12 - (sigma/r)^6), smoothly switched off at the cutoff."""

    epsilon: float = 0.0104  # eV (argon-like)
    sigma: float = 3.4       # A
    cutoff: float = 9.0      # A
    switch_start: float | None = None

    def __post_init__(self):
        if self.epsilon <= 0 or self.sigma <= 0:
            raise ValueError("epsilon and sigma must be positive")
        if self.switch_start is None:
            self.switch_start = 0.9 * self.cutoff
        if not 0 < self.switch_start < self.cutoff:
            raise ValueError("switch_start must lie inside the cutoff")

    def _raw(self, r):
        sr6 = (self.sigma / r) ** 6
        v = 4.0 * self.epsilon * (sr6**2 - sr6)
        dv = 4.0 * self.epsilon * (-12.0 * sr6**2 + 6.0 * sr6) / r
        return v, dv

    @property
    def r_min(self) -> float:
        return 2.0 ** (1.0 / 6.0) * self.sigma


@dataclass
class Morse(_PairPotential):
    """D*(exp(-2a(r-r0)) - 2 exp(-a(r-r0))): well depth D at r0, zero at infinity."""

    well_depth: float = 0.5  # D, eV
    stiffness: float = 1.5   # a, 1/A
    r0: float = 2.5          # A
    cutoff: float = 7.0      # A
    switch_start: float | None = None

    def __post_init__(self):
        if self.well_depth <= 0 or self.stiffness <= 0 or self.r0 <= 0:
            raise ValueError("Morse parameters must be positive")
        if self.switch_start is None:
            self.switch_start = 0.9 * self.cutoff
        if not 0 < self.switch_start < self.cutoff:
            raise ValueError("switch_start must lie inside the cutoff")

    def _raw(self, r):
        e1 = np.exp(-self.stiffness * (r - self.r0))
        v = self.well_depth * (e1**2 - 2.0 * e1)
        dv = 2.0 * self.well_depth * self.stiffness * (e1 - e1**2)
        return v, dv

    @property
    def r_min(self) -> float:
        return self.r0


def reference_eval(pot, c: Configuration):
    """Energy (eV) and forces (eV/A) of a configuration under a pair potential."""
    return pot.energy_forces(c.positions, species=c.species, cell=c.cell, pbc=c.pbc)


def make_potential(kind: str, **kwargs):
    kind = kind.lower()
    if kind in ("lj", "lennardjones", "lennard-jones"):
        return LennardJones(**kwargs)
    if kind == "morse":
        return Morse(**kwargs)
    raise ValueError(f"unknown potential kind {kind!r}")


def build_cluster(pot, n_atoms: int, seed: int = 0, relax_steps: int = 800) -> np.ndarray:
    """Deterministic compact cluster near a local minimum of the potential.

    Atoms start on a simple-cubic grid at the pair-minimum spacing with a tiny
    seeded jitter, then follow normalized gradient descent.
    """
    if n_atoms < 1:
        raise ValueError("n_atoms must be >= 1")
    a = pot.r_min
    side = int(np.ceil(n_atoms ** (1.0 / 3.0)))
    grid = np.array([[i, j, k] for i in range(side) for j in range(side) for k in range(side)],
                    dtype=float)
    order = np.lexsort((grid[:, 2], grid[:, 1], grid[:, 0],
                        np.linalg.norm(grid - (side - 1) / 2.0, axis=1)))
    pos = grid[order[:n_atoms]] * a
    rng = np.random.default_rng(seed)
    pos = pos + 0.02 * a * rng.standard_normal(pos.shape)
    # normalized-step descent with backtracking
    step = 0.05 * a
    energy, forces = pot.energy_forces(pos)
    for _ in range(relax_steps):
        fmax = np.max(np.abs(forces))
        if fmax < 1e-6 or step < 1e-12:
            break
        trial = pos + step * forces / fmax
        e_trial, f_trial = pot.energy_forces(trial)
        if e_trial < energy:
            pos, energy, forces = trial, e_trial, f_trial
            step = min(step * 1.2, 0.1 * a)
        else:
            step *= 0.5
    return pos - pos.mean(axis=0)
