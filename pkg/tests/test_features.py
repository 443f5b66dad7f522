import math

import numpy as np
import pytest

from geognn.features import FeatureConfig, encode, rbf_expand
from geognn.geometry import build_dual_graph
from geognn.masking import mask_context
from geognn.rng import Rng
from geognn.synth import random_molecule

from conftest import make_molecule


class TestRbfExpand:
    def test_peak_at_center(self):
        cfg = FeatureConfig()
        out = rbf_expand(float(cfg.length_centers[3]), cfg.length_centers)
        assert out[3] == 1.0

    def test_value_one_tenth_away(self):
        # gamma = 10, offset 0.1 -> exp(-10 * 0.01) = exp(-0.1)
        out = rbf_expand(0.1, np.array([0.0]), gamma=10.0)
        assert out[0] == pytest.approx(math.exp(-0.1), abs=1e-15)
        assert out[0] == pytest.approx(0.904837, abs=1e-6)

    def test_far_outside_grid_decays(self):
        cfg = FeatureConfig()
        out = rbf_expand(float(cfg.length_centers[-1]) + 1.2, cfg.length_centers)
        assert np.all(out < 1e-6)

    def test_matches_direct_formula_exactly(self):
        cfg = FeatureConfig()
        rng = np.random.default_rng(0)
        for x in rng.uniform(0.0, 5.0, size=25):
            got = rbf_expand(float(x), cfg.length_centers, cfg.rbf_gamma)
            want = [math.exp(-cfg.rbf_gamma * (float(x) - float(c)) ** 2) for c in cfg.length_centers]
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_numerical_smoothness(self):
        cfg = FeatureConfig()
        eps = 1e-6
        for x in (0.3, 1.77, 4.2):
            delta = np.abs(rbf_expand(x + eps, cfg.length_centers) - rbf_expand(x, cfg.length_centers))
            bound = 2.0 * cfg.rbf_gamma * eps * (cfg.length_centers[-1] - cfg.length_centers[0])
            assert delta.max() <= bound


class TestEncode:
    def test_grid_sizes(self):
        cfg = FeatureConfig()
        assert len(cfg.length_centers) == 51
        assert len(cfg.angle_centers) == 32
        assert cfg.atom_width == 119 + 2 + 16 + 4 + 11 + 9 + 6 + 1
        assert cfg.bond_width == 7 + 4 + 2 + 51 + 1
        assert cfg.angle_width == 32 + 1

    def test_carbon_atom_type_slot(self):
        mol = make_molecule(
            ["C", "O", "O"], [(0, 1), (0, 2)], [(0, 0, 0), (1.4, 0, 0), (0, 1.4, 0)]
        )
        enc = encode(build_dual_graph(mol), mol)
        assert enc.atom[0, 6] == 1.0  # atomic number of carbon
        assert enc.atom[0, :119].sum() == 1.0
        # degree block: carbon has degree 2
        cfg = FeatureConfig()
        degree_offset = 119 + 2 + 16 + 4
        assert enc.atom[0, degree_offset + 2] == 1.0

    def test_bond_at_grid_center_peaks(self):
        mol = make_molecule(["C", "C"], [(0, 1)], [(0, 0, 0), (1.5, 0, 0)])
        enc = encode(build_dual_graph(mol), mol)
        cfg = FeatureConfig()
        rbf_block = enc.bond[0, 13:-1]
        assert rbf_block.max() == 1.0
        assert np.argmax(rbf_block) == 15  # center 1.5
        # bond type block: single -> [1,0,0,0] at offset 7
        np.testing.assert_array_equal(enc.bond[0, 7:11], [1.0, 0.0, 0.0, 0.0])

    def test_every_one_hot_block_sums_to_one(self):
        rng = Rng(77)
        cfg = FeatureConfig()
        for i in range(10):
            mol = random_molecule(rng.fork(i))
            enc = encode(build_dual_graph(mol), mol, cfg)
            offset = 0
            for name, width in cfg.atom_blocks():
                block = enc.atom[:, offset : offset + width]
                np.testing.assert_array_equal(block.sum(axis=1), np.ones(len(mol.atoms)))
                offset += width
            offset = 0
            for name, width in cfg.bond_blocks():
                if name.endswith("_rbf"):
                    offset += width
                    continue
                block = enc.bond[:, offset : offset + width]
                np.testing.assert_array_equal(block.sum(axis=1), np.ones(enc.bond.shape[0]))
                offset += width

    def test_shapes_on_branched_fixture(self, methane):
        graph = build_dual_graph(methane)
        enc = encode(graph, methane)
        cfg = FeatureConfig()
        assert enc.atom.shape == (5, cfg.atom_width)
        assert enc.bond.shape == (4, cfg.bond_width)
        assert enc.angle.shape == (6, cfg.angle_width)

    def test_encoding_is_pure(self, water):
        graph = build_dual_graph(water)
        a = encode(graph, water)
        b = encode(graph, water)
        assert np.array_equal(a.atom, b.atom)
        assert np.array_equal(a.bond, b.bond)
        assert np.array_equal(a.angle, b.angle)

    def test_geometry_ablation_zeroes_rbf_only(self, water):
        graph = build_dual_graph(water)
        full = encode(graph, water)
        flat = encode(graph, water, include_geometry=False)
        assert np.array_equal(full.atom, flat.atom)
        assert np.array_equal(full.bond[:, :13], flat.bond[:, :13])
        assert np.all(flat.bond[:, 13:-1] == 0.0)
        assert np.all(flat.angle[:, :-1] == 0.0)

    def test_manifest_structure(self):
        manifest = FeatureConfig().manifest()
        assert manifest["atom"][0] == {"name": "atom_type", "offset": 0, "width": 119}
        assert manifest["atom"][-1]["name"] == "mask_flag"
        assert manifest["rbf_gamma"] == 10.0
        total = sum(b["width"] for b in manifest["bond"])
        assert total == FeatureConfig().bond_width


class TestMaskContext:
    def test_full_ratio_masks_everything(self, water):
        graph = build_dual_graph(water)
        enc = encode(graph, water)
        masked, targets = mask_context(graph, enc, 1.0, Rng(0))
        assert targets.bond_lengths.shape == (2,)
        assert targets.angle_values.shape == (1,)
        assert masked.bond_masked.all()
        assert masked.angle_masked.all()
        # masked rows are zero except the indicator column
        assert np.all(masked.bond[:, :-1] == 0.0)
        assert np.all(masked.bond[:, -1] == 1.0)

    def test_single_atom_molecule(self):
        mol = make_molecule(["C"], [], [(0.0, 0.0, 0.0)])
        graph = build_dual_graph(mol)
        enc = encode(graph, mol)
        masked, targets = mask_context(graph, enc, 0.15, Rng(1))
        assert targets.atom_ids.tolist() == [0]
        assert targets.bond_lengths.size == 0
        assert targets.angle_values.size == 0

    def test_selection_count(self):
        mol = random_molecule(Rng(3), min_atoms=10, max_atoms=10)
        graph = build_dual_graph(mol)
        enc = encode(graph, mol)
        _, targets = mask_context(graph, enc, 0.15, Rng(2))
        assert targets.atom_ids.size == max(1, round(0.15 * 10))

    def test_reproducible_given_seed(self):
        mol = random_molecule(Rng(8), min_atoms=20, max_atoms=20)
        graph = build_dual_graph(mol)
        enc = encode(graph, mol)
        m1, t1 = mask_context(graph, enc, 0.15, Rng(42))
        m2, t2 = mask_context(graph, enc, 0.15, Rng(42))
        assert np.array_equal(t1.atom_ids, t2.atom_ids)
        assert np.array_equal(t1.bond_lengths, t2.bond_lengths)
        assert np.array_equal(m1.atom, m2.atom)
        # target multiset equals a reference enumeration over selected atoms
        chosen = set(t1.atom_ids.tolist())
        want_bonds = sorted(
            float(graph.lengths[e])
            for e in range(graph.num_bonds)
            if set(map(int, graph.bonds[e])) & chosen
        )
        assert sorted(t1.bond_lengths.tolist()) == want_bonds
        want_angles = sorted(
            float(graph.angle_values[t])
            for t in range(graph.num_angles)
            if int(graph.angles[t, 1]) in chosen
        )
        assert sorted(t1.angle_values.tolist()) == want_angles

    def test_original_encoding_untouched(self, water):
        graph = build_dual_graph(water)
        enc = encode(graph, water)
        before = enc.bond.copy()
        mask_context(graph, enc, 1.0, Rng(5))
        assert np.array_equal(enc.bond, before)
