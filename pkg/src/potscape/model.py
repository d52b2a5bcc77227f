"""Compact neural potential: atom-wise MLP over radial descriptors.

Total energy is scale * sum_i net(G_i) + shift * N when rescaling is enabled;
forces are exact negative gradients via the chain rule through the
descriptors.  The flat parameter vector is tiled by a filter partition (one
block per output neuron's incoming row plus its bias; trainable basis centers
and widths form their own blocks) used for landscape direction normalization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Configuration, Dataset
from .descriptors import DescriptorSpec, basis_values
from .geometry import pair_table


class NumericEvalError(ArithmeticError):
    """Non-finite intermediate during model evaluation."""


# activation name -> (value, first, second derivative), each in terms of h = act(z)
def _tanh(z):
    return np.tanh(z)


def _tanh_d1(h):
    return 1.0 - h * h


def _tanh_d2(h):
    return -2.0 * h * (1.0 - h * h)


ACTIVATIONS = {"tanh": (_tanh, _tanh_d1, _tanh_d2)}


@dataclass(frozen=True)
class FilterBlock:
    layer: int    # 0 = descriptor basis, 1.. = network layers
    filter: int   # neuron index within the layer (0/1 = centers/widths for layer 0)
    offset: int
    length: int
    frozen: bool = False


@dataclass
class FilterPartition:
    blocks: list[FilterBlock]
    total: int

    def __post_init__(self):
        covered = np.zeros(self.total, dtype=bool)
        for b in self.blocks:
            if b.offset < 0 or b.offset + b.length > self.total:
                raise ValueError("block exceeds parameter vector")
            if covered[b.offset:b.offset + b.length].any():
                raise ValueError("overlapping blocks")
            covered[b.offset:b.offset + b.length] = True
        if not covered.all():
            raise ValueError("blocks do not tile the parameter vector")

    def slices(self):
        return [(b, slice(b.offset, b.offset + b.length)) for b in self.blocks]

    def frozen_mask(self) -> np.ndarray:
        mask = np.zeros(self.total, dtype=bool)
        for b in self.blocks:
            if b.frozen:
                mask[b.offset:b.offset + b.length] = True
        return mask

    def with_frozen(self, indices) -> "FilterPartition":
        """Copy with the given block indices marked frozen."""
        idx = set(int(i) for i in indices)
        blocks = [replace(b, frozen=(k in idx) or b.frozen) for k, b in enumerate(self.blocks)]
        return FilterPartition(blocks, self.total)

    def blocks_in_layer(self, layer: int) -> list[int]:
        return [k for k, b in enumerate(self.blocks) if b.layer == layer]


@dataclass
class ParameterVector:
    values: np.ndarray
    partition: FilterPartition

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or len(self.values) != self.partition.total:
            raise ValueError("values length must match partition total")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite parameter")


@dataclass
class Rescale:
    scale: float = 1.0   # eV
    shift: float = 0.0   # eV/atom
    enabled: bool = False

    def effective(self):
        return (self.scale, self.shift) if self.enabled else (1.0, 0.0)


def _layer_dims(n_in: int, hidden) -> list[int]:
    return [n_in] + list(hidden) + [1]


def build_partition(descriptor: DescriptorSpec, hidden) -> FilterPartition:
    dims = _layer_dims(descriptor.n_radial, hidden)
    blocks: list[FilterBlock] = []
    offset = 0
    if descriptor.trainable_basis:
        blocks.append(FilterBlock(0, 0, offset, descriptor.n_radial))
        offset += descriptor.n_radial
        blocks.append(FilterBlock(0, 1, offset, descriptor.n_radial))
        offset += descriptor.n_radial
    for layer in range(1, len(dims)):
        row = dims[layer - 1] + 1  # weights + bias
        for f in range(dims[layer]):
            blocks.append(FilterBlock(layer, f, offset, row))
            offset += row
    return FilterPartition(blocks, offset)


@dataclass
class NeuralPotential:
    descriptor: DescriptorSpec
    hidden_layers: tuple
    activation: str
    params: ParameterVector
    rescale: Rescale = field(default_factory=Rescale)
    name: str = "model"

    @classmethod
    def create(cls, descriptor: DescriptorSpec, hidden=(16, 16), activation: str = "tanh",
               seed: int = 0, name: str = "model") -> "NeuralPotential":
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        partition = build_partition(descriptor, hidden)
        values = np.zeros(partition.total)
        rng = np.random.default_rng(seed)
        dims = _layer_dims(descriptor.n_radial, hidden)
        offset = 0
        if descriptor.trainable_basis:
            values[0:descriptor.n_radial] = descriptor.centers
            values[descriptor.n_radial:2 * descriptor.n_radial] = descriptor.widths
            offset = 2 * descriptor.n_radial
        for layer in range(1, len(dims)):
            fan_in, fan_out = dims[layer - 1], dims[layer]
            chunk = values[offset:offset + fan_out * (fan_in + 1)].reshape(fan_out, fan_in + 1)
            chunk[:, :-1] = rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
            chunk[:, -1] = 0.0
            offset += fan_out * (fan_in + 1)
        return cls(descriptor, tuple(hidden), activation,
                   ParameterVector(values, partition), name=name)

    def with_values(self, values: np.ndarray) -> "NeuralPotential":
        return replace(self, params=ParameterVector(np.asarray(values, dtype=float),
                                                    self.params.partition))

    # -- parameter layout -------------------------------------------------

    def unpack(self, values: np.ndarray | None = None):
        """(centers, widths, [W_l], [b_l]) views into the flat vector."""
        v = self.params.values if values is None else np.asarray(values, dtype=float)
        dims = _layer_dims(self.descriptor.n_radial, self.hidden_layers)
        k = self.descriptor.n_radial
        offset = 0
        if self.descriptor.trainable_basis:
            centers, widths = v[0:k], v[k:2 * k]
            offset = 2 * k
        else:
            centers, widths = self.descriptor.centers, self.descriptor.widths
        Ws, bs = [], []
        for layer in range(1, len(dims)):
            fan_in, fan_out = dims[layer - 1], dims[layer]
            chunk = v[offset:offset + fan_out * (fan_in + 1)].reshape(fan_out, fan_in + 1)
            Ws.append(chunk[:, :-1])
            bs.append(chunk[:, -1])
            offset += fan_out * (fan_in + 1)
        return centers, widths, Ws, bs

    def pack_gradient(self, g_centers, g_widths, gWs, gbs) -> np.ndarray:
        grad = np.zeros(self.params.partition.total)
        k = self.descriptor.n_radial
        offset = 0
        if self.descriptor.trainable_basis:
            grad[0:k] = g_centers
            grad[k:2 * k] = g_widths
            offset = 2 * k
        for gW, gb in zip(gWs, gbs):
            fan_out, fan_in = gW.shape
            chunk = grad[offset:offset + fan_out * (fan_in + 1)].reshape(fan_out, fan_in + 1)
            chunk[:, :-1] = gW
            chunk[:, -1] = gb
            offset += fan_out * (fan_in + 1)
        return grad

    # -- evaluation --------------------------------------------------------

    def _net_forward(self, Ws, bs, X):
        act = ACTIVATIONS[self.activation][0]
        hs, zs = [X], []
        for W, b in zip(Ws[:-1], bs[:-1]):
            z = hs[-1] @ W.T + b
            zs.append(z)
            hs.append(act(z))
        y = (hs[-1] @ Ws[-1].T + bs[-1]).ravel()
        return y, hs, zs

    def _input_grad(self, Ws, hs):
        d1 = ACTIVATIONS[self.activation][1]
        u = np.broadcast_to(Ws[-1], (hs[0].shape[0], Ws[-1].shape[1])).copy()
        for W, h in zip(reversed(Ws[:-1]), reversed(hs[1:])):
            u = (u * d1(h)) @ W
        return u  # (A, K) = d y / d descriptors

    def energy_forces(self, positions, species=None, cell=None, pbc=None):
        """Energy (eV), forces (eV/A), per-atom energies for raw arrays."""
        positions = np.asarray(positions, dtype=float)
        n = len(positions)
        centers, widths, Ws, bs = self.unpack()
        scale, shift = self.rescale.effective()
        pt = pair_table(positions, self.descriptor.cutoff, cell=cell, pbc=pbc)
        G = np.zeros((n, self.descriptor.n_radial))
        e, de, _ = basis_values(pt.r, centers, widths, self.descriptor.cutoff)
        np.add.at(G, pt.i, e)
        y, hs, _ = self._net_forward(Ws, bs, G)
        if not np.all(np.isfinite(y)):
            bad = int(np.nonzero(~np.isfinite(y))[0][0])
            raise NumericEvalError(f"non-finite site energy at atom {bad}")
        g = self._input_grad(Ws, hs)
        s = np.einsum("pd,pd->p", de, g[pt.i])
        forces = np.zeros((n, 3))
        contrib = (scale * s)[:, None] * pt.unit
        np.add.at(forces, pt.i, contrib)
        np.add.at(forces, pt.j, -contrib)
        # sequential reduction, bitwise-consistent with the dataset-level loss path
        energy = scale * float(np.add.reduceat(y, [0])[0]) + shift * n
        per_atom = scale * y + shift
        return energy, forces, per_atom


def nn_eval(m: NeuralPotential, c: Configuration):
    """Energy, forces, and per-atom energies of one configuration."""
    return m.energy_forces(c.positions, species=c.species, cell=c.cell, pbc=c.pbc)


# ---------------------------------------------------------------------------
# dataset-level loss with analytic parameter gradient
# ---------------------------------------------------------------------------

@dataclass
class LossValues:
    loss_E: float      # per-atom energy RMSE, meV/atom
    loss_F: float      # force-component RMSE, meV/A
    combined: float    # w_E * MSE_E + w_F * MSE_F (eV-based)
    mse_E: float
    mse_F: float


class DatasetTables:
    """Precomputed geometry, labels, and basis values for fast re-evaluation.

    Geometry (pair distances/unit vectors) never changes; basis values are
    cached and recomputed only when the basis parameters differ from the
    cached ones (trainable-basis models under perturbation).
    """

    def __init__(self, model: NeuralPotential, dataset: Dataset):
        spec = model.descriptor
        gi, gj, rr, uu = [], [], [], []
        e_ref, natoms, atom_frame = [], [], []
        f_ref = []
        offset = 0
        starts = [0]
        for m, c in enumerate(dataset):
            if c.energy is None or c.forces is None:
                raise ValueError("loss evaluation requires energy and force labels")
            pt = pair_table(c.positions, spec.cutoff, cell=c.cell, pbc=c.pbc)
            gi.append(pt.i + offset)
            gj.append(pt.j + offset)
            rr.append(pt.r)
            uu.append(pt.unit)
            e_ref.append(c.energy)
            natoms.append(c.n_atoms)
            atom_frame.extend([m] * c.n_atoms)
            f_ref.append(c.forces)
            offset += c.n_atoms
            starts.append(offset)
        self.n_frames = len(dataset)
        self.n_atoms = offset
        self.gi = np.concatenate(gi) if gi else np.zeros(0, dtype=int)
        self.gj = np.concatenate(gj) if gj else np.zeros(0, dtype=int)
        self.r = np.concatenate(rr) if rr else np.zeros(0)
        self.unit = np.concatenate(uu) if uu else np.zeros((0, 3))
        self.e_ref = np.array(e_ref)
        self.natoms = np.array(natoms)
        self.atom_frame = np.array(atom_frame, dtype=int)
        self.atom_start = np.array(starts[:-1], dtype=int)
        self.f_ref = np.vstack(f_ref)
        self.pair_frame = self.atom_frame[self.gi] if len(self.gi) else np.zeros(0, dtype=int)
        self._cache_key = None
        self._cache = None
        self.eval_count = 0

    def basis(self, centers, widths, cutoff, with_param_grads=False):
        key = (centers.tobytes(), widths.tobytes(), bool(with_param_grads))
        if self._cache_key != key:
            self._cache = basis_values(self.r, centers, widths, cutoff,
                                       with_param_grads=with_param_grads)
            self._cache_key = key
        return self._cache

    def frame_range(self, lo: int, hi: int):
        """Contiguous-frame view used for deterministic minibatches."""
        a0 = self.atom_start[lo]
        a1 = self.atom_start[hi] if hi < self.n_frames else self.n_atoms
        pmask = (self.pair_frame >= lo) & (self.pair_frame < hi)
        sub = DatasetTables.__new__(DatasetTables)
        sub.n_frames = hi - lo
        sub.n_atoms = a1 - a0
        sub.gi = self.gi[pmask] - a0
        sub.gj = self.gj[pmask] - a0
        sub.r = self.r[pmask]
        sub.unit = self.unit[pmask]
        sub.e_ref = self.e_ref[lo:hi]
        sub.natoms = self.natoms[lo:hi]
        sub.atom_frame = self.atom_frame[a0:a1] - lo
        sub.atom_start = self.atom_start[lo:hi] - a0
        sub.f_ref = self.f_ref[a0:a1]
        sub.pair_frame = self.pair_frame[pmask] - lo
        sub._cache_key = None
        sub._cache = None
        sub.eval_count = 0
        return sub


def _frame_sums(y, tables):
    return np.add.reduceat(y, tables.atom_start) if len(y) else np.zeros(0)


def tables_loss(model: NeuralPotential, tables: DatasetTables, values, w_E, w_F) -> LossValues:
    """Loss of the model with the given flat parameters over the tables."""
    tables.eval_count += 1
    centers, widths, Ws, bs = model.unpack(values)
    scale, shift = model.rescale.effective()
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        e, de, _ = tables.basis(np.asarray(centers), np.asarray(widths),
                                model.descriptor.cutoff)
        G = np.zeros((tables.n_atoms, model.descriptor.n_radial))
        np.add.at(G, tables.gi, e)
        y, hs, _ = model._net_forward(Ws, bs, G)
        g = model._input_grad(Ws, hs)
        s = np.einsum("pd,pd->p", de, g[tables.gi])
        F = np.zeros((tables.n_atoms, 3))
        contrib = (scale * s)[:, None] * tables.unit
        np.add.at(F, tables.gi, contrib)
        np.add.at(F, tables.gj, -contrib)
        E = scale * _frame_sums(y, tables) + shift * tables.natoms
        eres = (E - tables.e_ref) / tables.natoms
        fres = F - tables.f_ref
        mse_E = float(np.mean(eres**2))
        mse_F = float(np.sum(fres**2) / (3.0 * tables.n_atoms))
    combined = w_E * mse_E + w_F * mse_F
    return LossValues(np.sqrt(mse_E) * 1000.0, np.sqrt(mse_F) * 1000.0,
                      combined, mse_E, mse_F)


def tables_loss_grad(model: NeuralPotential, tables: DatasetTables, values, w_E, w_F):
    """Loss plus the analytic gradient of `combined` w.r.t. the flat parameters.

    The force-loss term needs the derivative of the descriptor-space input
    gradient, which is propagated with a forward tangent pass followed by a
    reverse pass through both the primal and tangent variables.
    """
    tables.eval_count += 1
    centers, widths, Ws, bs = model.unpack(values)
    centers = np.asarray(centers)
    widths = np.asarray(widths)
    scale, shift = model.rescale.effective()
    trainable = model.descriptor.trainable_basis
    _, d1f, d2f = ACTIVATIONS[model.activation]

    e, de, extra = tables.basis(centers, widths, model.descriptor.cutoff,
                                with_param_grads=trainable)
    K = model.descriptor.n_radial
    G = np.zeros((tables.n_atoms, K))
    np.add.at(G, tables.gi, e)

    y, hs, zs = model._net_forward(Ws, bs, G)
    g = model._input_grad(Ws, hs)
    s = np.einsum("pd,pd->p", de, g[tables.gi])
    F = np.zeros((tables.n_atoms, 3))
    contrib = (scale * s)[:, None] * tables.unit
    np.add.at(F, tables.gi, contrib)
    np.add.at(F, tables.gj, -contrib)
    E = scale * _frame_sums(y, tables) + shift * tables.natoms

    M = tables.n_frames
    A = tables.n_atoms
    eres = (E - tables.e_ref) / tables.natoms
    fres = F - tables.f_ref
    mse_E = float(np.mean(eres**2))
    mse_F = float(np.sum(fres**2) / (3.0 * A))
    combined = w_E * mse_E + w_F * mse_F

    # seeds: d combined / d y_a (energy path) and tangent V (force path)
    c_atom = scale * w_E * (2.0 / M) * (eres / tables.natoms)[tables.atom_frame]
    rho = (2.0 * w_F / (3.0 * A)) * fres
    beta = scale * np.einsum("pk,pk->p", tables.unit, rho[tables.gi] - rho[tables.gj])
    V = np.zeros((A, K))
    np.add.at(V, tables.gi, beta[:, None] * de)

    # combined reverse pass: Phi = sum_a c_a * y_a + g_a . V_a
    t = V
    qs, ts = [], [t]
    for W, h in zip(Ws[:-1], hs[1:]):
        q = ts[-1] @ W.T
        qs.append(q)
        ts.append(d1f(h) * q)
    gW_out = (c_atom[:, None] * hs[-1] + ts[-1]).sum(axis=0, keepdims=True)
    gb_out = np.array([c_atom.sum()])
    hbar = c_atom[:, None] * Ws[-1]
    tbar = np.broadcast_to(Ws[-1], hbar.shape)
    gWs = [gW_out]
    gbs = [gb_out]
    for idx in range(len(Ws) - 2, -1, -1):
        h = hs[idx + 1]
        p1, p2 = d1f(h), d2f(h)
        zbar = p1 * hbar + p2 * qs[idx] * tbar
        qbar = p1 * tbar
        gWs.append(zbar.T @ hs[idx] + qbar.T @ ts[idx])
        gbs.append(zbar.sum(axis=0))
        hbar = zbar @ Ws[idx]
        tbar = qbar @ Ws[idx]
    gWs.reverse()
    gbs.reverse()
    Xbar, Vbar = hbar, tbar

    g_centers = g_widths = None
    if trainable:
        de_dc, de_dw, d2_rc, d2_rw = extra
        xb = Xbar[tables.gi]
        vb = Vbar[tables.gi] * beta[:, None]
        g_centers = np.einsum("pd,pd->d", xb, de_dc) + np.einsum("pd,pd->d", vb, d2_rc)
        g_widths = np.einsum("pd,pd->d", xb, de_dw) + np.einsum("pd,pd->d", vb, d2_rw)

    grad = model.pack_gradient(g_centers, g_widths, gWs, gbs)
    loss = LossValues(np.sqrt(mse_E) * 1000.0, np.sqrt(mse_F) * 1000.0,
                      combined, mse_E, mse_F)
    return loss, grad


def loss_eval(m: NeuralPotential, d: Dataset, w_E: float = 1.0, w_F: float = 1000.0) -> LossValues:
    """Energy RMSE (meV/atom), force RMSE (meV/A), and the weighted MSE objective."""
    if len(d) == 0:
        raise ValueError("empty dataset")
    tables = DatasetTables(m, d)
    return tables_loss(m, tables, m.params.values, w_E, w_F)


def fit_rescale(m: NeuralPotential, d: Dataset) -> NeuralPotential:
    """Set shift to the mean per-atom energy and scale to the force-component std."""
    if len(d) < 2:
        raise ValueError("rescale fit needs at least 2 frames")
    e = [c.energy / c.n_atoms for c in d if c.energy is not None]
    f = [c.forces.ravel() for c in d if c.forces is not None]
    if not e or not f:
        raise ValueError("rescale fit needs energy and force labels")
    shift = float(np.mean(e))
    scale = float(np.std(np.concatenate(f)))
    return replace(m, rescale=Rescale(scale=scale, shift=shift, enabled=True))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "potscape-checkpoint-1"


def save_checkpoint(m: NeuralPotential, path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "name": m.name,
        "descriptor": {
            "n_radial": m.descriptor.n_radial,
            "centers": m.descriptor.centers.tolist(),
            "widths": m.descriptor.widths.tolist(),
            "cutoff": m.descriptor.cutoff,
            "trainable_basis": m.descriptor.trainable_basis,
        },
        "hidden_layers": list(m.hidden_layers),
        "activation": m.activation,
        "rescale": {"scale": m.rescale.scale, "shift": m.rescale.shift,
                    "enabled": m.rescale.enabled},
        "params": m.params.values.tolist(),
        "partition": [[b.layer, b.filter, b.offset, b.length, b.frozen]
                      for b in m.params.partition.blocks],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> NeuralPotential:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a model checkpoint: {path}")
    dd = doc["descriptor"]
    spec = DescriptorSpec(dd["n_radial"], np.array(dd["centers"]), np.array(dd["widths"]),
                          dd["cutoff"], dd["trainable_basis"])
    blocks = [FilterBlock(layer, filt, off, length, frozen)
              for layer, filt, off, length, frozen in doc["partition"]]
    partition = FilterPartition(blocks, len(doc["params"]))
    params = ParameterVector(np.array(doc["params"]), partition)
    rs = doc["rescale"]
    return NeuralPotential(spec, tuple(doc["hidden_layers"]), doc["activation"], params,
                           Rescale(rs["scale"], rs["shift"], rs["enabled"]),
                           name=doc.get("name", "model"))
