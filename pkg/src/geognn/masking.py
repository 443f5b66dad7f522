"""Context masking for the geometry pretraining tasks.

A fraction of atoms is selected; each selected atom, its incident bonds,
and every angle centered at it have their features replaced by the mask
vector (all-zero features with the trailing is-masked indicator set).
The true lengths and angles of the masked entities become the targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .features import EncodedGraph
from .geometry import DualGraph
from .rng import Rng


@dataclass
class MaskTargets:
    atom_ids: np.ndarray      # [k] selected atoms
    bond_ids: np.ndarray      # [m] masked bond indices
    bond_atoms: np.ndarray    # [m, 2] endpoints (u, v)
    bond_lengths: np.ndarray  # [m]
    angle_ids: np.ndarray     # [t] masked angle indices
    angle_atoms: np.ndarray   # [t, 3] (w, u, v) with the center in the middle
    angle_values: np.ndarray  # [t] radians


def _mask_rows(matrix: np.ndarray, ids: np.ndarray) -> None:
    if ids.size:
        matrix[ids, :] = 0.0
        matrix[ids, -1] = 1.0


def mask_context(
    graph: DualGraph, encoded: EncodedGraph, ratio: float, rng: Rng
) -> tuple[EncodedGraph, MaskTargets]:
    if not 0.0 < ratio <= 1.0:
        raise ConfigError(f"mask ratio must lie in (0, 1], got {ratio}")
    num_atoms = graph.num_atoms
    count = max(1, round(ratio * num_atoms))
    selected = np.sort(rng.sample(num_atoms, count))
    chosen = set(int(i) for i in selected)

    bond_ids = np.array(
        [e for e in range(graph.num_bonds) if set(map(int, graph.bonds[e])) & chosen],
        dtype=np.int64,
    )
    angle_ids = np.array(
        [t for t in range(graph.num_angles) if int(graph.angles[t, 1]) in chosen],
        dtype=np.int64,
    )

    masked = encoded.copy()
    _mask_rows(masked.atom, selected)
    _mask_rows(masked.bond, bond_ids)
    _mask_rows(masked.angle, angle_ids)
    masked.atom_masked[selected] = True
    masked.bond_masked[bond_ids] = True
    masked.angle_masked[angle_ids] = True

    targets = MaskTargets(
        atom_ids=selected,
        bond_ids=bond_ids,
        bond_atoms=graph.bonds[bond_ids].reshape(len(bond_ids), 2),
        bond_lengths=graph.lengths[bond_ids],
        angle_ids=angle_ids,
        angle_atoms=graph.angles[angle_ids].reshape(len(angle_ids), 3),
        angle_values=graph.angle_values[angle_ids],
    )
    return masked, targets
