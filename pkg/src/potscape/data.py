"""Atomistic datasets: extended-XYZ I/O, label corruption, statistics, splits.

Units throughout: positions in Angstrom, energies in eV, forces in eV/Angstrom.
Per-atom energy statistics are reported in meV/atom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .seeding import substream


class ExtxyzError(ValueError):
    """Malformed extended-XYZ content; message carries the frame index."""


@dataclass
class Configuration:
    """One atomistic frame with optional reference labels."""

    positions: np.ndarray           # (N, 3) Angstrom
    species: list[str]
    energy: float | None = None    # total energy, eV
    forces: np.ndarray | None = None  # (N, 3) eV/A
    cell: np.ndarray | None = None    # (3, 3) lattice rows, Angstrom
    pbc: np.ndarray | None = None     # (3,) bool
    temperature_tag: float | None = None  # sampling temperature, K

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError("positions must be (N, 3)")
        n = len(self.positions)
        if len(self.species) != n:
            raise ValueError("species count does not match positions")
        if self.forces is not None:
            self.forces = np.asarray(self.forces, dtype=float)
            if self.forces.shape != (n, 3):
                raise ValueError("forces shape does not match positions")
            if not np.all(np.isfinite(self.forces)):
                raise ValueError("non-finite force component")
        if self.energy is not None:
            self.energy = float(self.energy)
            if not math.isfinite(self.energy):
                raise ValueError("non-finite energy")
        if self.cell is not None:
            self.cell = np.asarray(self.cell, dtype=float)
            if self.cell.shape != (3, 3):
                raise ValueError("cell must be 3x3")
            if self.pbc is None:
                self.pbc = np.array([True, True, True])
            self.pbc = np.asarray(self.pbc, dtype=bool)
            if np.any(self.pbc) and abs(np.linalg.det(self.cell)) < 1e-12:
                raise ValueError("periodic cell is singular")

    @property
    def n_atoms(self) -> int:
        return len(self.positions)

    def copy(self) -> "Configuration":
        return Configuration(
            positions=self.positions.copy(),
            species=list(self.species),
            energy=self.energy,
            forces=None if self.forces is None else self.forces.copy(),
            cell=None if self.cell is None else self.cell.copy(),
            pbc=None if self.pbc is None else self.pbc.copy(),
            temperature_tag=self.temperature_tag,
        )


@dataclass
class Dataset:
    """Ordered collection of configurations plus label-noise scales.

    ``sigma_dft_energy`` (meV/atom) and ``sigma_dft_force`` (eV/A) are the
    population standard deviations of the per-atom energies and of the pooled
    force components, recomputed from the contained labels at construction.
    """

    configurations: list[Configuration]
    name: str = "dataset"
    sigma_dft_energy: float | None = field(default=None, init=False)
    sigma_dft_force: float | None = field(default=None, init=False)

    def __post_init__(self):
        if not self.configurations:
            raise ValueError("dataset must be nonempty")
        e = [c.energy / c.n_atoms for c in self.configurations if c.energy is not None]
        if e:
            self.sigma_dft_energy = float(np.std(e)) * 1000.0  # eV/atom -> meV/atom
        f = [c.forces.ravel() for c in self.configurations if c.forces is not None]
        if f:
            self.sigma_dft_force = float(np.std(np.concatenate(f)))

    def __len__(self) -> int:
        return len(self.configurations)

    def __iter__(self):
        return iter(self.configurations)

    def __getitem__(self, i) -> Configuration:
        return self.configurations[i]


@dataclass(frozen=True)
class NoiseSpec:
    """Dimensionless noise scale applied on top of the dataset's label spread."""

    sigma: float
    target: str = "forces"  # "energies" | "forces" | "both"
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.target not in ("energies", "forces", "both"):
            raise ValueError(f"unknown noise target {self.target!r}")


# ---------------------------------------------------------------------------
# extended-XYZ
# ---------------------------------------------------------------------------

_DEFAULT_PROPERTIES = "species:S:1:pos:R:3"


def _split_comment(line: str) -> dict[str, str]:
    """key=value pairs from a comment line; values may be double-quoted."""
    items: dict[str, str] = {}
    i, n = 0, len(line)
    while i < n:
        while i < n and line[i].isspace():
            i += 1
        if i >= n:
            break
        start = i
        while i < n and line[i] not in "= \t":
            i += 1
        key = line[start:i]
        if i < n and line[i] == "=":
            i += 1
            if i < n and line[i] == '"':
                i += 1
                vstart = i
                while i < n and line[i] != '"':
                    i += 1
                value = line[vstart:i]
                i += 1
            else:
                vstart = i
                while i < n and not line[i].isspace():
                    i += 1
                value = line[vstart:i]
        else:
            value = "T"  # bare key acts as a true flag
        if key:
            items[key] = value
    return items


def _parse_properties(spec: str, frame: int):
    fields = spec.split(":")
    if len(fields) % 3 != 0:
        raise ExtxyzError(f"frame {frame}: malformed Properties string {spec!r}")
    out = []
    for k in range(0, len(fields), 3):
        name, dtype, ncols = fields[k], fields[k + 1], fields[k + 2]
        try:
            ncols = int(ncols)
        except ValueError:
            raise ExtxyzError(f"frame {frame}: bad column count in Properties") from None
        out.append((name, dtype, ncols))
    return out


def parse_extxyz(text: str | bytes, name: str = "dataset") -> Dataset:
    """Parse extended-XYZ text into a Dataset.

    Recognized comment keys: ``energy``, ``Lattice``, ``Properties``, ``pbc``,
    ``temperature``.  Unknown keys and unreferenced atom-line columns are
    ignored.  Raises ExtxyzError with the offending frame index.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    lines = text.splitlines()
    pos = 0
    frames: list[Configuration] = []
    frame = 0
    while pos < len(lines):
        if not lines[pos].strip():
            pos += 1
            continue
        try:
            natoms = int(lines[pos].strip())
        except ValueError:
            raise ExtxyzError(f"frame {frame}: malformed header {lines[pos]!r}") from None
        if natoms <= 0:
            raise ExtxyzError(f"frame {frame}: nonpositive atom count")
        if pos + 2 + natoms > len(lines):
            raise ExtxyzError(f"frame {frame}: truncated frame (expected {natoms} atoms)")
        comment = _split_comment(lines[pos + 1]) if pos + 1 < len(lines) else {}
        props = _parse_properties(comment.get("Properties", _DEFAULT_PROPERTIES), frame)

        energy = None
        if "energy" in comment:
            try:
                energy = float(comment["energy"])
            except ValueError:
                raise ExtxyzError(f"frame {frame}: non-numeric energy") from None
        cell = pbc = None
        if "Lattice" in comment:
            try:
                vals = [float(x) for x in comment["Lattice"].split()]
            except ValueError:
                raise ExtxyzError(f"frame {frame}: non-numeric Lattice") from None
            if len(vals) != 9:
                raise ExtxyzError(f"frame {frame}: Lattice needs 9 numbers")
            cell = np.array(vals).reshape(3, 3)
            if "pbc" in comment:
                pbc = np.array([t in ("T", "True", "1") for t in comment["pbc"].split()])
        temperature = None
        if "temperature" in comment:
            try:
                temperature = float(comment["temperature"])
            except ValueError:
                raise ExtxyzError(f"frame {frame}: non-numeric temperature") from None

        species: list[str] = []
        positions = np.zeros((natoms, 3))
        has_forces = any(p[0] == "forces" for p in props)
        forces = np.zeros((natoms, 3)) if has_forces else None
        for a in range(natoms):
            tokens = lines[pos + 2 + a].split()
            col = 0
            for pname, dtype, ncols in props:
                if col + ncols > len(tokens):
                    raise ExtxyzError(f"frame {frame}: atom line {a} has too few columns")
                chunk = tokens[col:col + ncols]
                col += ncols
                if pname == "species":
                    species.append(chunk[0])
                elif pname in ("pos", "forces"):
                    try:
                        vec = [float(x) for x in chunk]
                    except ValueError:
                        raise ExtxyzError(
                            f"frame {frame}: non-numeric {pname} on atom line {a}"
                        ) from None
                    if pname == "pos":
                        positions[a] = vec
                    else:
                        forces[a] = vec
                # other declared columns are skipped by width
        try:
            frames.append(Configuration(positions, species, energy=energy, forces=forces,
                                        cell=cell, pbc=pbc, temperature_tag=temperature))
        except ValueError as exc:
            raise ExtxyzError(f"frame {frame}: {exc}") from None
        pos += 2 + natoms
        frame += 1
    if not frames:
        raise ExtxyzError("no frames found")
    return Dataset(frames, name=name)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_extxyz(d: Dataset) -> str:
    """Serialize a Dataset to extended-XYZ with 17 significant digits."""
    out: list[str] = []
    for c in d.configurations:
        out.append(str(c.n_atoms))
        parts = []
        if c.cell is not None:
            parts.append('Lattice="' + " ".join(_fmt(x) for x in c.cell.ravel()) + '"')
            parts.append('pbc="' + " ".join("T" if b else "F" for b in c.pbc) + '"')
        props = _DEFAULT_PROPERTIES + (":forces:R:3" if c.forces is not None else "")
        parts.append(f"Properties={props}")
        if c.energy is not None:
            parts.append(f"energy={_fmt(c.energy)}")
        if c.temperature_tag is not None:
            parts.append(f"temperature={_fmt(c.temperature_tag)}")
        out.append(" ".join(parts))
        for a in range(c.n_atoms):
            cols = [c.species[a]] + [_fmt(x) for x in c.positions[a]]
            if c.forces is not None:
                cols += [_fmt(x) for x in c.forces[a]]
            out.append(" ".join(cols))
    return "\n".join(out) + "\n"


def read_extxyz_file(path, name: str | None = None) -> Dataset:
    with open(path, "rb") as fh:
        return parse_extxyz(fh.read(), name=name or str(path))


def write_extxyz_file(d: Dataset, path) -> None:
    with open(path, "w") as fh:
        fh.write(write_extxyz(d))


# ---------------------------------------------------------------------------
# label corruption and statistics
# ---------------------------------------------------------------------------

def corrupt_labels(d: Dataset, spec: NoiseSpec) -> Dataset:
    """Return a new dataset with Gaussian noise added to the chosen labels.

    Energy noise on a configuration is drawn with standard deviation
    sigma * sigma_dft_energy * n_atoms (per-atom scale applied to the total);
    force noise is per component with standard deviation
    sigma * sigma_dft_force.  The input dataset is never mutated.
    """
    do_e = spec.target in ("energies", "both")
    do_f = spec.target in ("forces", "both")
    if do_e and d.sigma_dft_energy is None:
        raise ValueError("dataset has no energy labels to corrupt")
    if do_f and d.sigma_dft_force is None:
        raise ValueError("dataset has no force labels to corrupt")
    rng = np.random.default_rng(spec.seed)
    sig_e = (d.sigma_dft_energy or 0.0) / 1000.0  # meV/atom -> eV/atom
    sig_f = d.sigma_dft_force or 0.0
    out = []
    for c in d.configurations:
        c2 = c.copy()
        if do_e:
            if c.energy is None:
                raise ValueError("configuration without energy in energy-corruption target")
            g = rng.standard_normal()
            if spec.sigma > 0:
                c2.energy = c.energy + g * spec.sigma * sig_e * c.n_atoms
        if do_f:
            if c.forces is None:
                raise ValueError("configuration without forces in force-corruption target")
            g = rng.standard_normal(c.forces.shape)
            if spec.sigma > 0:
                c2.forces = c.forces + g * spec.sigma * sig_f
        out.append(c2)
    return Dataset(out, name=f"{d.name}+noise{spec.sigma:g}")


@dataclass(frozen=True)
class DatasetStats:
    n_configurations: int
    n_atoms_total: int
    energy_mean_mev_per_atom: float | None
    energy_std_mev_per_atom: float | None
    force_mean_ev_per_ang: float | None
    force_std_ev_per_ang: float | None
    counts_per_temperature: dict

    def to_dict(self) -> dict:
        return {
            "n_configurations": self.n_configurations,
            "n_atoms_total": self.n_atoms_total,
            "energy_mean_mev_per_atom": self.energy_mean_mev_per_atom,
            "energy_std_mev_per_atom": self.energy_std_mev_per_atom,
            "force_mean_ev_per_ang": self.force_mean_ev_per_ang,
            "force_std_ev_per_ang": self.force_std_ev_per_ang,
            "counts_per_temperature": {str(k): v for k, v in self.counts_per_temperature.items()},
        }


def dataset_stats(d: Dataset) -> DatasetStats:
    """Label distributions: per-atom energies (meV/atom), force components (eV/A)."""
    e = np.array([c.energy / c.n_atoms for c in d if c.energy is not None])
    f = [c.forces.ravel() for c in d if c.forces is not None]
    counts: dict = {}
    for c in d:
        counts[c.temperature_tag] = counts.get(c.temperature_tag, 0) + 1
    fcat = np.concatenate(f) if f else None
    return DatasetStats(
        n_configurations=len(d),
        n_atoms_total=sum(c.n_atoms for c in d),
        energy_mean_mev_per_atom=float(np.mean(e)) * 1000.0 if len(e) else None,
        energy_std_mev_per_atom=float(np.std(e)) * 1000.0 if len(e) else None,
        force_mean_ev_per_ang=float(np.mean(fcat)) if fcat is not None else None,
        force_std_ev_per_ang=float(np.std(fcat)) if fcat is not None else None,
        counts_per_temperature=counts,
    )


# ---------------------------------------------------------------------------
# synthetic reference data and temperature splits
# ---------------------------------------------------------------------------

def generate_reference_dataset(pot, n_atoms: int, temperatures, frames_per_T: int,
                               seed: int = 0, *, species: str = "Ar",
                               timestep_fs: float = 1.0, tau_fs: float = 250.0,
                               stride: int = 50, burn_in_steps: int = 2000,
                               name: str | None = None) -> Dataset:
    """Sample decorrelated frames from thermostatted MD under a reference potential.

    Each temperature gets its own velocity stream; every ``stride``-th frame
    after ``burn_in_steps`` is kept and labeled with the exact reference
    energy/forces and its sampling temperature.
    """
    from .md import MDConfig, init_velocities, md_step, MDState
    from .potentials import build_cluster

    if frames_per_T <= 0:
        raise ValueError("frames_per_T must be positive")
    temperatures = [float(t) for t in temperatures]
    if any(t <= 0 for t in temperatures):
        raise ValueError("temperatures must be positive")

    start = build_cluster(pot, n_atoms, seed=substream(seed, "cluster").integers(2**31))
    frames: list[Configuration] = []
    for k, T in enumerate(temperatures):
        cfg = MDConfig(temperature=T, timestep_fs=timestep_fs, tau_fs=tau_fs,
                       total_time_ps=1.0, seed=seed)
        conf = Configuration(start.copy(), [species] * n_atoms)
        vel = init_velocities(conf, T, seed=substream(seed, "velocities", k).integers(2**31))
        e0, f0 = pot.energy_forces(conf.positions)
        state = MDState(positions=conf.positions.copy(), velocities=vel,
                        forces=f0, potential_energy=e0, species=conf.species)
        for step in range(burn_in_steps + stride * frames_per_T):
            state = md_step(state, pot, cfg)
            if step >= burn_in_steps and (step - burn_in_steps) % stride == stride - 1:
                e, f = pot.energy_forces(state.positions)
                frames.append(Configuration(state.positions.copy(), list(conf.species),
                                            energy=e, forces=f, temperature_tag=T))
    return Dataset(frames, name=name or f"synthetic-{n_atoms}atoms")


def split_by_temperature(d: Dataset, train_T: float, holdout_fraction: float = 0.1,
                         seed: int = 0):
    """Partition into a training split at ``train_T`` and per-temperature test splits.

    A seeded random fraction of the train_T frames is held out and returned in
    the test map under the train_T key.  The union of all outputs equals the
    input as a multiset.
    """
    tags = [c.temperature_tag for c in d]
    if train_T not in tags:
        raise ValueError(f"train temperature {train_T} not present in dataset tags")
    by_tag: dict[float, list[int]] = {}
    for idx, t in enumerate(tags):
        if t is None:
            raise ValueError("split requires temperature tags on every configuration")
        by_tag.setdefault(t, []).append(idx)

    train_idx = np.array(by_tag[train_T])
    rng = substream(seed, "split")
    perm = rng.permutation(len(train_idx))
    n_hold = int(round(holdout_fraction * len(train_idx)))
    hold = sorted(train_idx[perm[:n_hold]].tolist())
    keep = sorted(train_idx[perm[n_hold:]].tolist())
    if not keep:
        raise ValueError("holdout fraction leaves no training frames")

    train = Dataset([d[i] for i in keep], name=f"{d.name}-train{train_T:g}K")
    tests: dict[float, Dataset] = {}
    if hold:
        tests[train_T] = Dataset([d[i] for i in hold], name=f"{d.name}-held{train_T:g}K")
    for t in sorted(by_tag):
        if t == train_T:
            continue
        tests[t] = Dataset([d[i] for i in by_tag[t]], name=f"{d.name}-test{t:g}K")
    return train, tests
