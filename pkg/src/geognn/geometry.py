"""Dual-graph construction: atoms/bonds on one side, bonds/angles on the other.

From a molecule with 3D coordinates this derives
  - the atom-bond graph (atoms as nodes, bonds as edges),
  - the bond-angle graph (bonds as nodes, one edge per pair of bonds
    sharing an atom),
  - bond lengths, bond angles in radians, and the all-pairs distance matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .molio import Molecule


def angle_between(p_w, p_u, p_v) -> float:
    """Angle at p_u between the arms to p_w and p_v, in [0, pi]."""
    a = np.asarray(p_w, dtype=np.float64) - np.asarray(p_u, dtype=np.float64)
    b = np.asarray(p_v, dtype=np.float64) - np.asarray(p_u, dtype=np.float64)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DataError("degenerate angle: zero-length arm")
    cosine = float(np.dot(a, b)) / (na * nb)
    return math.acos(max(-1.0, min(1.0, cosine)))


@dataclass
class DualGraph:
    num_atoms: int
    bonds: np.ndarray        # [E, 2] atom indices, each row a < b, rows sorted
    angles: np.ndarray       # [A, 3] rows (w, u, v): bonds (u,w) and (u,v) share u
    angle_bonds: np.ndarray  # [A, 2] bond indices forming each angle
    lengths: np.ndarray      # [E] in the coordinate unit
    angle_values: np.ndarray  # [A] radians
    dist_matrix: np.ndarray  # [V, V]

    @property
    def num_bonds(self) -> int:
        return self.bonds.shape[0]

    @property
    def num_angles(self) -> int:
        return self.angles.shape[0]

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_atoms, dtype=np.int64)
        for a, b in self.bonds:
            deg[a] += 1
            deg[b] += 1
        return deg


def build_dual_graph(molecule: Molecule) -> DualGraph:
    num_atoms = len(molecule.atoms)
    coords = np.asarray(molecule.coords, dtype=np.float64).reshape(num_atoms, 3)

    diff = coords[:, None, :] - coords[None, :, :]
    dist_matrix = np.sqrt((diff * diff).sum(axis=-1))

    bond_keys = sorted((min(b.a, b.b), max(b.a, b.b)) for b in molecule.bonds)
    bonds = np.asarray(bond_keys, dtype=np.int64).reshape(len(bond_keys), 2)
    # bonded distances are read from the same matrix, so the two agree exactly
    lengths = (
        dist_matrix[bonds[:, 0], bonds[:, 1]] if len(bond_keys) else np.zeros(0)
    )
    for idx, length in enumerate(lengths):
        if length == 0.0:
            raise DataError(
                f"molecule {molecule.id}: coincident bonded atoms {tuple(bonds[idx])}"
            )

    incident: list[list[tuple[int, int]]] = [[] for _ in range(num_atoms)]
    for e, (a, b) in enumerate(bond_keys):
        incident[a].append((b, e))
        incident[b].append((a, e))

    angle_rows = []
    angle_bond_rows = []
    angle_vals = []
    for u in range(num_atoms):
        neighbors = sorted(incident[u])
        for i in range(len(neighbors)):
            for j in range(i + 1, len(neighbors)):
                w, e1 = neighbors[i]
                v, e2 = neighbors[j]
                angle_rows.append((w, u, v))
                angle_bond_rows.append((e1, e2))
                angle_vals.append(angle_between(coords[w], coords[u], coords[v]))

    return DualGraph(
        num_atoms=num_atoms,
        bonds=bonds,
        angles=np.asarray(angle_rows, dtype=np.int64).reshape(len(angle_rows), 3),
        angle_bonds=np.asarray(angle_bond_rows, dtype=np.int64).reshape(len(angle_rows), 2),
        lengths=np.asarray(lengths, dtype=np.float64),
        angle_values=np.asarray(angle_vals, dtype=np.float64),
        dist_matrix=dist_matrix,
    )
