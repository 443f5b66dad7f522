import math
from pathlib import Path

import pytest

from geognn.molio import Atom, Bond, Molecule, annotate_derived_attributes

FIXTURES = Path(__file__).parent / "fixtures"


def make_molecule(elements, bond_pairs, coords, mol_id="m", **kwargs):
    mol = Molecule(
        id=mol_id,
        atoms=[Atom(element=e) for e in elements],
        bonds=[Bond(a=a, b=b) for a, b in bond_pairs],
        coords=[tuple(float(c) for c in xyz) for xyz in coords],
        **kwargs,
    )
    return annotate_derived_attributes(mol.validate())


@pytest.fixture
def water():
    return make_molecule(
        ["O", "H", "H"],
        [(0, 1), (0, 2)],
        [(0.0, 0.0, 0.0), (0.9572, 0.0, 0.0), (-0.2400, 0.9266, 0.0)],
        mol_id="water",
    )


@pytest.fixture
def methane():
    # central carbon with four hydrogens on tetrahedral directions
    r = 1.09 / math.sqrt(3.0)
    return make_molecule(
        ["C", "H", "H", "H", "H"],
        [(0, 1), (0, 2), (0, 3), (0, 4)],
        [
            (0.0, 0.0, 0.0),
            (r, r, r),
            (r, -r, -r),
            (-r, r, -r),
            (-r, -r, r),
        ],
        mol_id="methane",
    )


def _dce_coords(same_side: bool):
    """Planar Cl-C=C-Cl skeleton; the two isomers get slightly different
    Cl-C=C angles (steric strain), so bond angles genuinely differ."""
    cc = 1.33
    ccl = 1.72
    angle = math.radians(124.5 if same_side else 121.3)
    c1 = (0.0, 0.0, 0.0)
    c2 = (cc, 0.0, 0.0)
    cl1 = (ccl * math.cos(angle), ccl * math.sin(angle), 0.0)
    y2 = math.sin(angle) if same_side else -math.sin(angle)
    cl2 = (cc - ccl * math.cos(angle), ccl * y2, 0.0)
    return [c1, c2, cl1, cl2]


def make_dce(same_side: bool, mol_id: str):
    mol = Molecule(
        id=mol_id,
        atoms=[Atom("C"), Atom("C"), Atom("Cl"), Atom("Cl")],
        bonds=[
            Bond(0, 1, bond_type="double"),
            Bond(0, 2, bond_type="single"),
            Bond(1, 3, bond_type="single"),
        ],
        coords=_dce_coords(same_side),
    )
    return annotate_derived_attributes(mol.validate())


@pytest.fixture
def cis_trans_pair():
    return make_dce(True, "cis"), make_dce(False, "trans")
