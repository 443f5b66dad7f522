"""The dual-graph message passing network.

Per iteration, bond vectors are updated on the bond-angle graph (messages
combine the two bond states of each angle with the projected angle
features) and atom vectors are updated on the atom-bond graph (messages
combine the two endpoint states with the bond state). Both updates read
the previous iteration's states, matching the update equations rather
than a sequential bond-then-atom sweep. Each update is a GIN-style sum
aggregation followed by a 2-layer MLP, layer norm, graph-size norm
(divide by sqrt of the node count of the respective graph), a residual
connection, and dropout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, NumericalError
from .features import EncodedGraph, FeatureConfig
from .geometry import DualGraph
from .rng import Rng
from .tensor import Tensor


@dataclass
class ModelConfig:
    num_blocks: int = 8
    hidden: int = 32
    dropout: float = 0.2
    distance_bins: int = 30
    geom_head_hidden: int = 256
    down_head_hidden: int = 128
    fingerprint_bits: int = 0   # 0 disables the fingerprint head
    num_tasks: int = 1
    precision: str = "f64"

    def validate(self) -> "ModelConfig":
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be >= 1")
        if self.hidden < 1:
            raise ConfigError("hidden must be >= 1")
        if self.distance_bins < 2:
            raise ConfigError("distance_bins must be >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.precision not in ("f32", "f64"):
            raise ConfigError("precision must be f32 or f64")
        return self

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        return cls(**obj).validate()


class ParamStore:
    """Named trainable tensors plus their optimizer moment slots."""

    def __init__(self, dtype=np.float64):
        self.dtype = dtype
        self._params: dict[str, Tensor] = {}
        self.moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.step = 0

    def create(self, name: str, shape: tuple[int, ...], rng: Rng, fan_in: int) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter {name}")
        bound = 1.0 / math.sqrt(fan_in) if fan_in > 0 else 0.0
        data = rng.uniform_array(shape, -bound, bound).astype(self.dtype)
        tensor = Tensor(data, requires_grad=True)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def num_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def copy(self) -> "ParamStore":
        clone = ParamStore(dtype=self.dtype)
        for name, t in self._params.items():
            clone._params[name] = Tensor(t.data.copy(), requires_grad=True)
        clone.moments = {k: (m.copy(), v.copy()) for k, (m, v) in self.moments.items()}
        clone.step = self.step
        return clone

    def load_values(self, other: "ParamStore") -> None:
        for name, t in other._params.items():
            if name in self._params:
                if self._params[name].shape != t.shape:
                    raise ConfigError(f"parameter {name}: shape mismatch")
                self._params[name].data = t.data.astype(self.dtype).copy()


@dataclass
class GraphEmbedding:
    h_atoms: Tensor   # [V, hidden]
    h_bonds: Tensor   # [E, hidden]
    h_graph: Tensor   # [hidden], mean over atom rows


class GeoGNN:
    """Dual-graph encoder with geometry, fingerprint and downstream heads."""

    def __init__(
        self,
        config: ModelConfig,
        features: FeatureConfig | None = None,
        rng: Rng | None = None,
        store: ParamStore | None = None,
    ):
        self.config = config.validate()
        self.features = features or FeatureConfig()
        if store is not None:
            self.store = store
        else:
            if rng is None:
                raise ConfigError("either an rng (fresh init) or a store is required")
            self.store = self._init_params(rng.fork("init"))

    # --- parameters ---------------------------------------------------------

    def _linear(self, store: ParamStore, rng: Rng, name: str, n_in: int, n_out: int) -> None:
        store.create(f"{name}.w", (n_in, n_out), rng.fork(f"{name}.w"), fan_in=n_in)
        store.create(f"{name}.b", (n_out,), rng.fork(f"{name}.b"), fan_in=n_in)

    def _init_params(self, rng: Rng) -> ParamStore:
        cfg, feat = self.config, self.features
        store = ParamStore(dtype=cfg.dtype)
        h = cfg.hidden
        self._linear(store, rng, "embed.atom", feat.atom_width, h)
        self._linear(store, rng, "embed.bond", feat.bond_width, h)
        self._linear(store, rng, "embed.angle", feat.angle_width, h)
        for k in range(cfg.num_blocks):
            for stack in ("bond", "atom"):
                base = f"block{k}.{stack}"
                self._linear(store, rng, f"{base}.mlp1", h, h)
                self._linear(store, rng, f"{base}.mlp2", h, h)
                store.create(f"{base}.norm.gain", (h,), rng.fork(f"{base}.g"), fan_in=0)
                store[f"{base}.norm.gain"].data[:] = 1.0
                store.create(f"{base}.norm.bias", (h,), rng.fork(f"{base}.h"), fan_in=0)
        g = cfg.geom_head_hidden
        self._linear(store, rng, "head_length.l1", 2 * h, g)
        self._linear(store, rng, "head_length.l2", g, 1)
        self._linear(store, rng, "head_angle.l1", 3 * h, g)
        self._linear(store, rng, "head_angle.l2", g, 1)
        self._linear(store, rng, "head_distance.l1", 2 * h, g)
        self._linear(store, rng, "head_distance.l2", g, cfg.distance_bins)
        if cfg.fingerprint_bits > 0:
            self._linear(store, rng, "head_fp.l1", h, cfg.fingerprint_bits)
        if cfg.num_tasks > 0:
            d = cfg.down_head_hidden
            self._linear(store, rng, "head_down.l1", h, d)
            self._linear(store, rng, "head_down.l2", d, d)
            self._linear(store, rng, "head_down.l3", d, cfg.num_tasks)
        return store

    def _apply_linear(self, name: str, x: Tensor) -> Tensor:
        return T.affine(x, self.store[f"{name}.w"], self.store[f"{name}.b"])

    def _combine(self, base: str, messages: Tensor, residual: Tensor, scale: float,
                 mode: str, rng: Rng | None) -> Tensor:
        out = self._apply_linear(f"{base}.mlp1", messages)
        out = T.relu(out)
        out = self._apply_linear(f"{base}.mlp2", out)
        out = T.layer_norm(out, self.store[f"{base}.norm.gain"], self.store[f"{base}.norm.bias"])
        out = T.mul(out, scale)
        out = T.add(out, residual)
        return T.dropout(out, self.config.dropout, rng, training=(mode == "train"))

    # --- forward ------------------------------------------------------------

    def forward(
        self,
        graph: DualGraph,
        encoded: EncodedGraph,
        mode: str = "eval",
        rng: Rng | None = None,
    ) -> GraphEmbedding:
        if mode not in ("train", "eval"):
            raise ConfigError(f"mode must be train or eval, got {mode!r}")
        if mode == "train" and self.config.dropout > 0.0 and rng is None:
            raise ConfigError("training-mode forward needs an rng for dropout")
        if encoded.atom.shape[1] != self.features.atom_width:
            raise DataError(
                f"atom feature width {encoded.atom.shape[1]} does not match "
                f"the configured layout ({self.features.atom_width})"
            )

        dtype = self.config.dtype
        num_atoms, num_bonds, num_angles = graph.num_atoms, graph.num_bonds, graph.num_angles
        bond_u = graph.bonds[:, 0]
        bond_v = graph.bonds[:, 1]
        angle_e1 = graph.angle_bonds[:, 0]
        angle_e2 = graph.angle_bonds[:, 1]

        h_atom = self._apply_linear("embed.atom", Tensor(np.asarray(encoded.atom, dtype=dtype)))
        h_bond = self._apply_linear("embed.bond", Tensor(np.asarray(encoded.bond, dtype=dtype)))
        x_angle = self._apply_linear("embed.angle", Tensor(np.asarray(encoded.angle, dtype=dtype)))

        atom_scale = 1.0 / math.sqrt(max(num_atoms, 1))
        bond_scale = 1.0 / math.sqrt(max(num_bonds, 1))

        for k in range(self.config.num_blocks):
            try:
                # bond update on the bond-angle graph: every angle sends the
                # sum of its two bond states plus its own features to both bonds
                if num_angles and num_bonds:
                    msg = T.add(
                        T.add(T.gather_rows(h_bond, angle_e1), T.gather_rows(h_bond, angle_e2)),
                        x_angle,
                    )
                    agg_bond = T.add(
                        T.segment_sum(msg, angle_e1, num_bonds),
                        T.segment_sum(msg, angle_e2, num_bonds),
                    )
                else:
                    agg_bond = Tensor(np.zeros((num_bonds, self.config.hidden), dtype=dtype))
                new_bond = (
                    self._combine(f"block{k}.bond", agg_bond, h_bond, bond_scale, mode, rng)
                    if num_bonds
                    else h_bond
                )

                # atom update on the atom-bond graph, from iteration k-1 states
                if num_bonds:
                    msg = T.add(
                        T.add(T.gather_rows(h_atom, bond_u), T.gather_rows(h_atom, bond_v)),
                        h_bond,
                    )
                    agg_atom = T.add(
                        T.segment_sum(msg, bond_u, num_atoms),
                        T.segment_sum(msg, bond_v, num_atoms),
                    )
                else:
                    agg_atom = Tensor(np.zeros((num_atoms, self.config.hidden), dtype=dtype))
                new_atom = self._combine(f"block{k}.atom", agg_atom, h_atom, atom_scale, mode, rng)
            except NumericalError as err:
                raise NumericalError(f"block {k}: {err}") from None

            h_bond, h_atom = new_bond, new_atom

        return GraphEmbedding(h_atoms=h_atom, h_bonds=h_bond, h_graph=T.mean_rows(h_atom))

    # --- heads ---------------------------------------------------------------

    def _mlp2(self, prefix: str, x: Tensor) -> Tensor:
        return self._apply_linear(f"{prefix}.l2", T.relu(self._apply_linear(f"{prefix}.l1", x)))

    def head_length(self, h_u: Tensor, h_v: Tensor) -> Tensor:
        """Scalar bond length prediction per row pair; returns [m, 1]."""
        return self._mlp2("head_length", T.concat([h_u, h_v], axis=1))

    def head_angle(self, h_w: Tensor, h_u: Tensor, h_v: Tensor) -> Tensor:
        """Scalar angle prediction; the center atom goes in the middle slot."""
        return self._mlp2("head_angle", T.concat([h_w, h_u, h_v], axis=1))

    def head_distance(self, h_u: Tensor, h_v: Tensor) -> Tensor:
        """Distance-bin logits per row pair; returns [m, distance_bins]."""
        return self._mlp2("head_distance", T.concat([h_u, h_v], axis=1))

    def head_fingerprint(self, h_graph: Tensor) -> Tensor:
        if self.config.fingerprint_bits <= 0:
            raise ConfigError("fingerprint head is disabled (fingerprint_bits == 0)")
        return self._apply_linear("head_fp.l1", T.reshape(h_graph, (1, self.config.hidden)))

    def head_downstream(self, h_graph: Tensor) -> Tensor:
        if self.config.num_tasks <= 0:
            raise ConfigError("downstream head is disabled (num_tasks == 0)")
        x = T.reshape(h_graph, (1, self.config.hidden))
        x = T.relu(self._apply_linear("head_down.l1", x))
        x = T.relu(self._apply_linear("head_down.l2", x))
        return self._apply_linear("head_down.l3", x)
