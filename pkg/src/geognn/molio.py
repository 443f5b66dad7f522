"""Molecule model plus SDF (MOL V2000) and JSON-lines ingestion.

Input hydrogens are kept as explicit atoms; no implicit-H inference is
performed beyond counting bonded hydrogens.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import DataError, ParseError

# fmt: off
ELEMENTS = (
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al",
    "Si", "P", "S", "Cl", "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe",
    "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr",
    "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn",
    "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm",
    "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W",
    "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn",
    "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf",
    "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds",
    "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
)
# fmt: on
ATOMIC_NUMBER = {symbol: i + 1 for i, symbol in enumerate(ELEMENTS)}

CHIRALITIES = ("unspecified", "cw", "ccw", "other")
HYBRIDIZATIONS = ("sp", "sp2", "sp3", "sp3d", "sp3d2", "unknown")
BOND_TYPES = ("single", "double", "triple", "aromatic")
# seven slots; the last two are reserved categories
BOND_DIRS = ("none", "begin_wedge", "begin_dash", "either", "unknown", "reserved0", "reserved1")
SPLITS = ("train", "valid", "test")

# valence electron counts for the main-group elements the hybridization
# heuristic understands; everything else maps to "unknown"
_VALENCE_ELECTRONS = {
    "H": 1, "B": 3, "C": 4, "N": 5, "O": 6, "F": 7, "Al": 3, "Si": 4,
    "P": 5, "S": 6, "Cl": 7, "Ga": 3, "Ge": 4, "As": 5, "Se": 6, "Br": 7,
    "In": 3, "Sn": 4, "Sb": 5, "Te": 6, "I": 7,
}

_STERIC_TO_HYBRIDIZATION = {2: "sp", 3: "sp2", 4: "sp3", 5: "sp3d", 6: "sp3d2"}


@dataclass
class Atom:
    element: str
    formal_charge: int = 0
    chirality: str = "unspecified"
    num_explicit_h: int = 0
    aromatic: bool = False
    hybridization: str = "unknown"

    @property
    def atomic_number(self) -> int:
        return ATOMIC_NUMBER[self.element]


@dataclass
class Bond:
    a: int
    b: int
    bond_type: str = "single"
    bond_dir: str = "none"
    in_ring: bool = False


@dataclass
class Molecule:
    id: str
    atoms: list[Atom]
    bonds: list[Bond]
    coords: list[tuple[float, float, float]]
    labels: dict[str, float | None] = field(default_factory=dict)
    fingerprint: list[int] | None = None
    split: str | None = None

    def validate(self) -> "Molecule":
        if len(self.coords) != len(self.atoms):
            raise DataError(
                f"molecule {self.id}: {len(self.coords)} coordinates for {len(self.atoms)} atoms"
            )
        for atom in self.atoms:
            z = ATOMIC_NUMBER.get(atom.element)
            if z is None or not 1 <= z <= 118:
                raise DataError(f"molecule {self.id}: unknown element {atom.element!r}")
            if atom.chirality not in CHIRALITIES:
                raise DataError(f"molecule {self.id}: bad chirality {atom.chirality!r}")
            if atom.hybridization not in HYBRIDIZATIONS:
                raise DataError(f"molecule {self.id}: bad hybridization {atom.hybridization!r}")
            if atom.num_explicit_h < 0:
                raise DataError(f"molecule {self.id}: negative hydrogen count")
        seen = set()
        for bond in self.bonds:
            if bond.a == bond.b:
                raise DataError(f"molecule {self.id}: bond joins atom {bond.a} to itself")
            if not (0 <= bond.a < len(self.atoms)) or not (0 <= bond.b < len(self.atoms)):
                raise DataError(f"molecule {self.id}: atom index out of range")
            if bond.bond_type not in BOND_TYPES:
                raise DataError(f"molecule {self.id}: bad bond type {bond.bond_type!r}")
            if bond.bond_dir not in BOND_DIRS:
                raise DataError(f"molecule {self.id}: bad bond dir {bond.bond_dir!r}")
            key = (min(bond.a, bond.b), max(bond.a, bond.b))
            if key in seen:
                raise DataError(f"molecule {self.id}: duplicate bond {key}")
            seen.add(key)
        for xyz in self.coords:
            if len(xyz) != 3 or not all(math.isfinite(c) for c in xyz):
                raise DataError(f"molecule {self.id}: non-finite coordinate")
        if self.fingerprint is not None:
            if any(bit not in (0, 1) for bit in self.fingerprint):
                raise DataError(f"molecule {self.id}: fingerprint bits must be 0 or 1")
        if self.split is not None and self.split not in SPLITS:
            raise DataError(f"molecule {self.id}: bad split tag {self.split!r}")
        return self


def ring_membership(molecule: Molecule) -> list[bool]:
    """True per bond iff the bond lies on some cycle (i.e. is not a bridge)."""
    n = len(molecule.atoms)
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for idx, bond in enumerate(molecule.bonds):
        adj[bond.a].append((bond.b, idx))
        adj[bond.b].append((bond.a, idx))

    disc = [-1] * n
    low = [0] * n
    is_bridge = [False] * len(molecule.bonds)
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        # iterative DFS with explicit stack: (vertex, incoming bond, edge iterator)
        stack = [(root, -1, iter(adj[root]))]
        disc[root] = low[root] = timer
        timer += 1
        while stack:
            v, in_bond, it = stack[-1]
            advanced = False
            for w, bond_idx in it:
                if bond_idx == in_bond:
                    continue
                if disc[w] == -1:
                    disc[w] = low[w] = timer
                    timer += 1
                    stack.append((w, bond_idx, iter(adj[w])))
                    advanced = True
                    break
                low[v] = min(low[v], disc[w])
            if not advanced:
                stack.pop()
                if stack:
                    parent = stack[-1][0]
                    low[parent] = min(low[parent], low[v])
                    if low[v] > disc[parent]:
                        is_bridge[in_bond] = True
    return [not b for b in is_bridge]


def _hybridization_heuristic(element: str, degree: int, formal_charge: int) -> str:
    """Steric-number estimate from degree plus main-group lone pairs.

    Approximation only: multiple bonds are not distinguished from single
    bonds, and anything outside the main group maps to "unknown".
    """
    valence = _VALENCE_ELECTRONS.get(element)
    if valence is None or degree == 0:
        return "unknown"
    lone_pairs = max(0, (valence - formal_charge - degree) // 2)
    return _STERIC_TO_HYBRIDIZATION.get(degree + lone_pairs, "unknown")


def annotate_derived_attributes(molecule: Molecule) -> Molecule:
    """Fill in_ring, aromatic flags, hydrogen counts and hybridization."""
    rings = ring_membership(molecule)
    for bond, in_ring in zip(molecule.bonds, rings):
        bond.in_ring = in_ring
    degree = [0] * len(molecule.atoms)
    h_neighbors = [0] * len(molecule.atoms)
    for bond in molecule.bonds:
        degree[bond.a] += 1
        degree[bond.b] += 1
        if molecule.atoms[bond.b].element == "H":
            h_neighbors[bond.a] += 1
        if molecule.atoms[bond.a].element == "H":
            h_neighbors[bond.b] += 1
        if bond.bond_type == "aromatic":
            molecule.atoms[bond.a].aromatic = True
            molecule.atoms[bond.b].aromatic = True
    for i, atom in enumerate(molecule.atoms):
        atom.num_explicit_h = h_neighbors[i]
        atom.hybridization = _hybridization_heuristic(atom.element, degree[i], atom.formal_charge)
    return molecule


# --- SDF (MOL V2000) -------------------------------------------------------

_OLD_STYLE_CHARGE = {0: 0, 1: 3, 2: 2, 3: 1, 4: 0, 5: -1, 6: -2, 7: -3}
_SDF_BOND_TYPE = {1: "single", 2: "double", 3: "triple", 4: "aromatic"}
_SDF_BOND_DIR = {0: "none", 1: "begin_wedge", 4: "either", 6: "begin_dash"}


def iter_sdf_records(text: str):
    """Yield (first_line_number, record_lines) for each $$$$-terminated record."""
    lines = text.splitlines()
    start = 0
    for i, line in enumerate(lines):
        if line.strip() == "$$$$":
            yield start + 1, lines[start:i]
            start = i + 1
    tail = lines[start:]
    if any(line.strip() for line in tail):
        yield start + 1, tail


def _int_field(line: str, lo: int, hi: int, lineno: int, what: str) -> int:
    raw = line[lo:hi].strip()
    try:
        return int(raw)
    except ValueError:
        raise ParseError(f"bad {what} field {raw!r}", lineno) from None


def _parse_sdf_record(first_line: int, lines: list[str], index: int) -> Molecule:
    if len(lines) < 4:
        raise ParseError("record too short for a V2000 header", first_line)
    title = lines[0].strip()
    counts_line = lines[3]
    counts_no = first_line + 3
    if len(counts_line) < 6:
        raise ParseError("counts line shorter than 6 columns", counts_no)
    num_atoms = _int_field(counts_line, 0, 3, counts_no, "atom count")
    num_bonds = _int_field(counts_line, 3, 6, counts_no, "bond count")
    if num_atoms < 0 or num_bonds < 0:
        raise ParseError("negative counts", counts_no)
    if len(lines) < 4 + num_atoms + num_bonds:
        raise ParseError(
            f"record ends before {num_atoms} atom and {num_bonds} bond lines", counts_no
        )

    atoms: list[Atom] = []
    coords: list[tuple[float, float, float]] = []
    for i in range(num_atoms):
        lineno = counts_no + 1 + i
        line = lines[4 + i]
        if len(line) < 34:
            raise ParseError("atom line shorter than 34 columns", lineno)
        xyz = []
        for lo in (0, 10, 20):
            raw = line[lo : lo + 10].strip()
            try:
                value = float(raw)
            except ValueError:
                raise ParseError(f"non-numeric coordinate {raw!r}", lineno) from None
            if not math.isfinite(value):
                raise ParseError(f"non-finite coordinate {raw!r}", lineno)
            xyz.append(value)
        symbol = line[31:34].strip()
        if symbol not in ATOMIC_NUMBER:
            raise ParseError(f"unknown element symbol {symbol!r}", lineno)
        charge = 0
        if len(line) >= 39:
            raw = line[36:39].strip()
            if raw:
                try:
                    charge = _OLD_STYLE_CHARGE.get(int(raw), 0)
                except ValueError:
                    raise ParseError(f"bad charge field {raw!r}", lineno) from None
        atoms.append(Atom(element=symbol, formal_charge=charge))
        coords.append((xyz[0], xyz[1], xyz[2]))

    bonds: list[Bond] = []
    for i in range(num_bonds):
        lineno = counts_no + 1 + num_atoms + i
        line = lines[4 + num_atoms + i]
        if len(line) < 9:
            raise ParseError("bond line shorter than 9 columns", lineno)
        a = _int_field(line, 0, 3, lineno, "bond atom")
        b = _int_field(line, 3, 6, lineno, "bond atom")
        code = _int_field(line, 6, 9, lineno, "bond type")
        if not (1 <= a <= num_atoms) or not (1 <= b <= num_atoms):
            raise ParseError("atom index out of range", lineno)
        if a == b:
            raise ParseError(f"bond joins atom {a} to itself", lineno)
        if code not in _SDF_BOND_TYPE:
            raise ParseError(f"unknown bond type {code}", lineno)
        stereo = 0
        if len(line) >= 12:
            raw = line[9:12].strip()
            if raw:
                try:
                    stereo = int(raw)
                except ValueError:
                    raise ParseError(f"bad bond stereo field {raw!r}", lineno) from None
        bonds.append(
            Bond(
                a=a - 1,
                b=b - 1,
                bond_type=_SDF_BOND_TYPE[code],
                bond_dir=_SDF_BOND_DIR.get(stereo, "none"),
            )
        )

    # property block: M CHG supersedes all atom-block charges
    charge_reset_done = False
    for offset, line in enumerate(lines[4 + num_atoms + num_bonds :]):
        lineno = counts_no + 1 + num_atoms + num_bonds + offset
        if line.startswith("M  END"):
            break
        if line.startswith("M  CHG"):
            if not charge_reset_done:
                for atom in atoms:
                    atom.formal_charge = 0
                charge_reset_done = True
            fields = line.split()
            try:
                count = int(fields[2])
                pairs = fields[3 : 3 + 2 * count]
                for j in range(count):
                    atom_no = int(pairs[2 * j])
                    value = int(pairs[2 * j + 1])
                    atoms[atom_no - 1].formal_charge = value
            except (IndexError, ValueError):
                raise ParseError("malformed M  CHG line", lineno) from None

    mol = Molecule(
        id=title or f"mol{index}",
        atoms=atoms,
        bonds=bonds,
        coords=coords,
    )
    try:
        mol.validate()
    except DataError as err:
        raise ParseError(str(err), first_line) from None
    return annotate_derived_attributes(mol)


def parse_sdf(data: bytes | str) -> list[Molecule]:
    """Parse all $$$$-separated V2000 records; raises ParseError on the first problem."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    molecules = []
    for index, (first_line, lines) in enumerate(iter_sdf_records(text)):
        molecules.append(_parse_sdf_record(first_line, lines, index))
    return molecules


def parse_sdf_lenient(data: bytes | str) -> tuple[list[Molecule], list[ParseError]]:
    """Like parse_sdf but collects per-record errors instead of raising."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    molecules, errors = [], []
    for index, (first_line, lines) in enumerate(iter_sdf_records(text)):
        try:
            molecules.append(_parse_sdf_record(first_line, lines, index))
        except ParseError as err:
            errors.append(err)
    return molecules, errors


# --- JSON lines --------------------------------------------------------------


def _require(obj: dict, key: str, lineno: int):
    if key not in obj:
        raise ParseError(f"missing required key {key!r}", lineno)
    return obj[key]


def parse_jsonl(data: bytes | str) -> list[Molecule]:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    molecules = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as err:
            raise ParseError(f"invalid JSON: {err.msg}", lineno) from None
        atoms = [
            Atom(
                element=_require(a, "element", lineno),
                formal_charge=int(_require(a, "formal_charge", lineno)),
                chirality=_require(a, "chirality", lineno),
                num_explicit_h=int(_require(a, "num_h", lineno)),
                aromatic=bool(_require(a, "aromatic", lineno)),
                hybridization=_require(a, "hybridization", lineno),
            )
            for a in _require(obj, "atoms", lineno)
        ]
        bonds = [
            Bond(
                a=int(_require(b, "a", lineno)),
                b=int(_require(b, "b", lineno)),
                bond_type=_require(b, "type", lineno),
                bond_dir=_require(b, "dir", lineno),
            )
            for b in _require(obj, "bonds", lineno)
        ]
        coords = [tuple(float(c) for c in xyz) for xyz in _require(obj, "coords", lineno)]
        fingerprint = obj.get("fingerprint")
        mol = Molecule(
            id=str(_require(obj, "id", lineno)),
            atoms=atoms,
            bonds=bonds,
            coords=coords,
            labels={str(k): (None if v is None else float(v)) for k, v in _require(obj, "labels", lineno).items()},
            fingerprint=None if fingerprint is None else [int(b) for b in fingerprint],
            split=obj.get("split"),
        )
        try:
            mol.validate()
        except DataError as err:
            raise ParseError(str(err), lineno) from None
        rings = ring_membership(mol)
        for bond, in_ring in zip(mol.bonds, rings):
            bond.in_ring = in_ring
        molecules.append(mol)
    return molecules


def molecule_to_json_dict(mol: Molecule) -> dict:
    obj = {
        "id": mol.id,
        "atoms": [
            {
                "element": a.element,
                "formal_charge": a.formal_charge,
                "chirality": a.chirality,
                "aromatic": a.aromatic,
                "num_h": a.num_explicit_h,
                "hybridization": a.hybridization,
            }
            for a in mol.atoms
        ],
        "bonds": [
            {"a": b.a, "b": b.b, "type": b.bond_type, "dir": b.bond_dir} for b in mol.bonds
        ],
        "coords": [list(xyz) for xyz in mol.coords],
        "labels": mol.labels,
    }
    if mol.fingerprint is not None:
        obj["fingerprint"] = mol.fingerprint
    if mol.split is not None:
        obj["split"] = mol.split
    return obj


def write_jsonl(molecules: list[Molecule]) -> bytes:
    lines = [json.dumps(molecule_to_json_dict(m), sort_keys=True) for m in molecules]
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")
