"""Self-supervised objectives: masked bond lengths, masked bond angles,
binned atomic distances, and optional fingerprint reconstruction.

The per-molecule loss runs one masked forward pass and sums the enabled
task losses; the distance task shares that same pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError
from .features import EncodedGraph
from .geometry import DualGraph
from .masking import MaskTargets, mask_context
from .model import GeoGNN, GraphEmbedding
from .molio import Molecule
from .rng import Rng
from .tensor import Tensor

TASKS = ("length", "angle", "distance", "fingerprint")


@dataclass
class PretrainTargets:
    masked: MaskTargets
    distance_bin_ids: np.ndarray      # [V*V] bin index per ordered atom pair
    fingerprint: np.ndarray | None    # [B] bits or None


def bin_index(d: float, num_bins: int) -> int:
    """Uniform 1.0-wide bins over [0, num_bins); the last bin absorbs the tail."""
    if d < 0:
        raise DataError(f"negative distance {d}")
    return min(int(d), num_bins - 1)


def bin_distance(d: float, num_bins: int) -> np.ndarray:
    """One-hot encoding of bin_index."""
    out = np.zeros(num_bins, dtype=np.float64)
    out[bin_index(d, num_bins)] = 1.0
    return out


def build_targets(
    graph: DualGraph, molecule: Molecule, masked: MaskTargets, num_bins: int
) -> PretrainTargets:
    dists = graph.dist_matrix.reshape(-1)
    if np.any(dists < 0):
        raise DataError("negative distance in matrix")
    bins = np.minimum(dists.astype(np.int64), num_bins - 1)
    fingerprint = (
        np.asarray(molecule.fingerprint, dtype=np.float64)
        if molecule.fingerprint is not None
        else None
    )
    return PretrainTargets(masked=masked, distance_bin_ids=bins, fingerprint=fingerprint)


def loss_length(model: GeoGNN, emb: GraphEmbedding, targets: MaskTargets) -> Tensor:
    """Mean squared error of predicted vs true lengths over masked bonds."""
    m = targets.bond_ids.size
    if m == 0:
        return Tensor(np.zeros(()))
    h_u = T.gather_rows(emb.h_atoms, targets.bond_atoms[:, 0])
    h_v = T.gather_rows(emb.h_atoms, targets.bond_atoms[:, 1])
    diff = T.sub(model.head_length(h_u, h_v), Tensor(targets.bond_lengths.reshape(m, 1)))
    return T.mul(T.sum_all(T.mul(diff, diff)), 1.0 / m)


def loss_angle(model: GeoGNN, emb: GraphEmbedding, targets: MaskTargets) -> Tensor:
    """Mean squared error over masked angles; the center atom sits mid-triple."""
    m = targets.angle_ids.size
    if m == 0:
        return Tensor(np.zeros(()))
    h_w = T.gather_rows(emb.h_atoms, targets.angle_atoms[:, 0])
    h_u = T.gather_rows(emb.h_atoms, targets.angle_atoms[:, 1])
    h_v = T.gather_rows(emb.h_atoms, targets.angle_atoms[:, 2])
    diff = T.sub(
        model.head_angle(h_w, h_u, h_v), Tensor(targets.angle_values.reshape(m, 1))
    )
    return T.mul(T.sum_all(T.mul(diff, diff)), 1.0 / m)


def loss_distance(
    model: GeoGNN,
    emb: GraphEmbedding,
    graph: DualGraph,
    bin_ids: np.ndarray,
    max_pairs: int | None = None,
    rng: Rng | None = None,
) -> Tensor:
    """Cross-entropy of binned distances over all ordered atom pairs,
    diagonal included; optionally a sampled subset for large molecules."""
    n = graph.num_atoms
    if n < 2:
        return Tensor(np.zeros(()))
    u = np.repeat(np.arange(n), n)
    v = np.tile(np.arange(n), n)
    ids = bin_ids
    if max_pairs is not None and u.size > max_pairs:
        if rng is None:
            raise ConfigError("pair sampling needs an rng")
        pick = rng.sample(u.size, max_pairs)
        u, v, ids = u[pick], v[pick], bin_ids[pick]
    one_hot = np.zeros((u.size, model.config.distance_bins))
    one_hot[np.arange(u.size), ids] = 1.0
    logits = model.head_distance(T.gather_rows(emb.h_atoms, u), T.gather_rows(emb.h_atoms, v))
    return T.softmax_cross_entropy(logits, Tensor(one_hot))


def loss_fingerprint(model: GeoGNN, emb: GraphEmbedding, bits: np.ndarray) -> Tensor:
    """Mean binary cross-entropy with logits over the fingerprint bits."""
    if bits.size == 0:
        return Tensor(np.zeros(()))
    if bits.size != model.config.fingerprint_bits:
        raise DataError(
            f"fingerprint width {bits.size} does not match the model "
            f"({model.config.fingerprint_bits})"
        )
    logits = model.head_fingerprint(emb.h_graph)
    return T.bce_with_logits(logits, Tensor(bits.reshape(1, -1)))


@dataclass
class PreparedMolecule:
    molecule: Molecule
    graph: DualGraph
    encoded: EncodedGraph


def molecule_pretrain_loss(
    model: GeoGNN,
    item: PreparedMolecule,
    rng: Rng,
    tasks: tuple[str, ...] = ("length", "angle", "distance"),
    mask_ratio: float = 0.15,
    fingerprint_weight: float = 1.0,
    max_distance_pairs: int | None = None,
    mode: str = "train",
) -> tuple[Tensor, dict[str, float]]:
    """One masked forward pass; returns (total loss, per-task values)."""
    unknown = set(tasks) - set(TASKS)
    if unknown:
        raise ConfigError(f"unknown pretrain tasks: {sorted(unknown)}")
    masked_enc, masked = mask_context(item.graph, item.encoded, mask_ratio, rng.fork("mask"))
    targets = build_targets(item.graph, item.molecule, masked, model.config.distance_bins)
    emb = model.forward(item.graph, masked_enc, mode=mode, rng=rng.fork("dropout"))

    total = Tensor(np.zeros(()))
    parts: dict[str, float] = {}
    if "length" in tasks:
        part = loss_length(model, emb, masked)
        parts["length"] = part.item()
        total = T.add(total, part)
    if "angle" in tasks:
        part = loss_angle(model, emb, masked)
        parts["angle"] = part.item()
        total = T.add(total, part)
    if "distance" in tasks:
        part = loss_distance(
            model, emb, item.graph, targets.distance_bin_ids,
            max_pairs=max_distance_pairs, rng=rng.fork("pairs"),
        )
        parts["distance"] = part.item()
        total = T.add(total, part)
    if "fingerprint" in tasks and targets.fingerprint is not None:
        part = T.mul(loss_fingerprint(model, emb, targets.fingerprint), fingerprint_weight)
        parts["fingerprint"] = part.item()
        total = T.add(total, part)
    return total, parts


def loss_pre(
    model: GeoGNN,
    batch: list[PreparedMolecule],
    rngs: Rng | list[Rng],
    tasks: tuple[str, ...] = ("length", "angle", "distance"),
    mask_ratio: float = 0.15,
    fingerprint_weight: float = 1.0,
    max_distance_pairs: int | None = None,
    mode: str = "train",
) -> tuple[Tensor, dict[str, float]]:
    """Mean pretraining loss over a batch of molecules."""
    if not batch:
        raise ConfigError("empty pretraining batch")
    if isinstance(rngs, Rng):
        rngs = [rngs.fork(i) for i in range(len(batch))]
    if len(rngs) != len(batch):
        raise ConfigError("need one rng per molecule")
    total = Tensor(np.zeros(()))
    sums: dict[str, float] = {}
    for item, rng in zip(batch, rngs):
        part, parts = molecule_pretrain_loss(
            model, item, rng,
            tasks=tasks, mask_ratio=mask_ratio,
            fingerprint_weight=fingerprint_weight,
            max_distance_pairs=max_distance_pairs, mode=mode,
        )
        total = T.add(total, part)
        for k, v in parts.items():
            sums[k] = sums.get(k, 0.0) + v
    scale = 1.0 / len(batch)
    return T.mul(total, scale), {k: v * scale for k, v in sums.items()}
