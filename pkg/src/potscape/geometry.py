"""Pair tables for small clusters and periodic cells (minimum image)."""

from dataclasses import dataclass

import numpy as np


class SingularGeometryError(ValueError):
    """Two atoms closer than the numerical distance floor."""


R_MIN = 1e-8  # Angstrom; below this a pair is treated as coincident


@dataclass
class PairTable:
    """Ordered pairs (i, j), i != j, with r < cutoff.

    ``unit`` points from atom i to atom j; ``r`` is the pair distance.
    ``half`` selects the i < j subset (each unordered pair once).
    """

    i: np.ndarray
    j: np.ndarray
    r: np.ndarray
    unit: np.ndarray

    @property
    def half(self) -> np.ndarray:
        return self.i < self.j

    def __len__(self) -> int:
        return len(self.r)


def _displacements(positions, cell=None, pbc=None):
    d = positions[None, :, :] - positions[:, None, :]
    if cell is not None and pbc is not None and np.any(pbc):
        # Nearest periodic image; valid for cells wider than twice the cutoff.
        inv = np.linalg.inv(cell)
        frac = d @ inv
        shift = np.round(frac)
        shift[:, :, ~np.asarray(pbc, dtype=bool)] = 0.0
        d = d - shift @ cell
    return d


def pair_table(positions, cutoff, cell=None, pbc=None) -> PairTable:
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    if n < 2:
        empty = np.zeros(0)
        return PairTable(empty.astype(int), empty.astype(int), empty, np.zeros((0, 3)))
    d = _displacements(positions, cell, pbc)
    r = np.linalg.norm(d, axis=-1)
    np.fill_diagonal(r, np.inf)
    if np.any(r < R_MIN):
        i, j = np.argwhere(r < R_MIN)[0]
        raise SingularGeometryError(f"atoms {i} and {j} are coincident (r < {R_MIN} A)")
    ii, jj = np.nonzero(r < cutoff)
    rr = r[ii, jj]
    unit = d[ii, jj] / rr[:, None]
    return PairTable(ii, jj, rr, unit)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random proper rotation via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
