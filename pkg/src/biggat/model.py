"""Bimodal gated graph-attention network and its GAT / BiGAT ablations."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from biggat import autodiff as ad
from biggat.graph import Graph, neighborhood_sets

VARIANTS = ("gat", "bigat", "biggat")


@dataclass(frozen=True)
class ModelConfig:
    kmax: int = 2
    neighborhood_order: int = 1
    bimodal: bool = True
    gru: bool = True
    message_dim: int = 3
    input_dim: int = 11
    use_bias: bool = True

    def __post_init__(self):
        for name in ("kmax", "neighborhood_order", "message_dim", "input_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @classmethod
    def variant(cls, name: str, **kw) -> "ModelConfig":
        """GAT: single weight set, no GRU, order 1. BiGAT adds the bimodal
        embedding. BiGGAT adds the GRU and keeps the data-selected order."""
        name = name.lower()
        if name == "gat":
            return cls(**{**kw, "bimodal": False, "gru": False, "neighborhood_order": 1})
        if name == "bigat":
            return cls(**{**kw, "bimodal": True, "gru": False, "neighborhood_order": 1})
        if name == "biggat":
            return cls(**{**kw, "bimodal": True, "gru": True})
        raise ValueError(f"unknown variant {name!r}; expected one of {VARIANTS}")

    @property
    def variant_name(self) -> str:
        if self.gru:
            return "biggat" if self.bimodal else "ggat"
        return "bigat" if self.bimodal else "gat"

    @property
    def uses_data_order(self) -> bool:
        """Only the gated variant takes its neighborhood order from Moran selection."""
        return self.gru


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f = config.message_dim, config.input_dim
    return {
        "beta_1": (d, f), "beta_1_b": (d,),
        "beta_2": (d, f), "beta_2_b": (d,),
        "attn_W": (d, d), "attn_a": (2 * d,),
        "W_z": (d, d), "U_z": (d, d),
        "W_r": (d, d), "U_r": (d, d),
        "W_h": (d, d), "U_h": (d, d),
        "b_z": (d,), "b_r": (d,), "b_h": (d,),
        "readout_W": (3, d), "readout_b": (3,),
    }


@dataclass
class ModelParams:
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name):
        return self.arrays[name]

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for a in self.arrays.values()])

    def equals(self, other: "ModelParams") -> bool:
        return self.arrays.keys() == other.arrays.keys() and all(
            np.array_equal(v, other.arrays[k]) for k, v in self.arrays.items())


def init_params(seed: int, config: ModelConfig | None = None) -> ModelParams:
    """Glorot-uniform matrices, zero biases."""
    config = config or ModelConfig()
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(config).items():
        is_bias = name.startswith("b_") or name.endswith("_b")
        if is_bias:
            arrays[name] = np.zeros(shape)
            continue
        fan_out, fan_in = shape if len(shape) == 2 else (1, shape[0])
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(arrays)


# ---------------------------------------------------------------- serialization

def params_to_json(params: ModelParams, config: ModelConfig) -> str:
    doc = {
        "config": asdict(config),
        "arrays": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                   for k, v in params.arrays.items()},
    }
    return json.dumps(doc, indent=1)


def params_from_json(text: str) -> tuple[ModelParams, ModelConfig]:
    doc = json.loads(text)
    config = ModelConfig(**doc["config"])
    expected = param_shapes(config)
    arrays = {}
    for k, spec in doc["arrays"].items():
        shape = tuple(spec["shape"])
        if expected.get(k) != shape:
            raise ValueError(f"array {k!r} has shape {shape}, expected {expected.get(k)}")
        arrays[k] = np.asarray(spec["data"], dtype=float).reshape(shape)
    if arrays.keys() != expected.keys():
        raise ValueError("parameter document is missing arrays")
    return ModelParams({k: arrays[k] for k in expected}), config


# ---------------------------------------------------------------- neighborhoods

@dataclass(frozen=True)
class Neighborhoods:
    """Flattened (center, neighbor) pairs, self-loops included, sorted by center."""

    center: np.ndarray
    neighbor: np.ndarray
    n_nodes: int

    @classmethod
    def from_graph(cls, g: Graph, order: int) -> "Neighborhoods":
        sets = neighborhood_sets(g, order, include_self=True)
        center = np.concatenate([np.full(len(s), v, dtype=np.intp) for v, s in enumerate(sets)])
        neighbor = np.concatenate(sets).astype(np.intp)
        return cls(center, neighbor, g.N)

    @classmethod
    def from_lists(cls, sets) -> "Neighborhoods":
        center = np.concatenate([np.full(len(s), v, dtype=np.intp) for v, s in enumerate(sets)])
        neighbor = np.concatenate([np.asarray(s, dtype=np.intp) for s in sets])
        return cls(center, neighbor, len(sets))


# ---------------------------------------------------------------- layers

def bimodal_embed(slots, config: ModelConfig, X, labels):
    """``m_v0 = beta^(l_v) x_v (+ bias)``; the GAT variant uses ``beta_1`` everywhere."""
    lab = np.asarray(labels)
    if np.any((lab != 1) & (lab != 2)):
        raise ValueError("cluster labels must be 1 or 2")
    tape = slots["beta_1"].tape
    x = X if isinstance(X, ad.Var) else tape.const(X)
    b1 = slots["beta_1_b"] if config.use_bias else None
    m1 = ad.affine(slots["beta_1"], x, b1)
    if not config.bimodal:
        return m1
    b2 = slots["beta_2_b"] if config.use_bias else None
    m2 = ad.affine(slots["beta_2"], x, b2)
    return ad.row_select(lab == 1, m1, m2)


def attention_step(slots, M: ad.Var, nbhd: Neighborhoods, trace: list | None = None) -> ad.Var:
    """Single-head attention aggregation of linearly projected messages."""
    P = ad.affine(slots["attn_W"], M)
    pv = ad.gather_rows(P, nbhd.center)
    pu = ad.gather_rows(P, nbhd.neighbor)
    scores = ad.leaky_relu(ad.rowdot(ad.concat_cols(pv, pu), slots["attn_a"]))
    alpha = ad.grouped_softmax(scores, nbhd.center)
    if trace is not None:
        trace.append(alpha.value)
    return ad.weighted_segment_sum(alpha, pu, nbhd.center, nbhd.n_nodes)


def gru_step(slots, M_prev: ad.Var, H: ad.Var) -> ad.Var:
    """GRU update with the aggregate ``H`` as input and ``M_prev`` as state."""
    z = ad.sigmoid(ad.affine(slots["W_z"], H, slots["b_z"]) + ad.affine(slots["U_z"], M_prev))
    r = ad.sigmoid(ad.affine(slots["W_r"], H, slots["b_r"]) + ad.affine(slots["U_r"], M_prev))
    cand = ad.tanh(ad.affine(slots["W_h"], H, slots["b_h"]) + ad.affine(slots["U_h"], r * M_prev))
    return (1.0 - z) * M_prev + z * cand


def forward_tape(slots, config: ModelConfig, X, labels, nbhd: Neighborhoods,
                 trace: list | None = None) -> ad.Var:
    if config.kmax < 1:
        raise ValueError("kmax must be >= 1")
    Xv = X.value if isinstance(X, ad.Var) else np.asarray(X)
    if Xv.ndim != 2 or Xv.shape != (nbhd.n_nodes, config.input_dim):
        raise ad.ShapeError(f"features {Xv.shape} do not match {nbhd.n_nodes} nodes x {config.input_dim}")
    M = bimodal_embed(slots, config, X, labels)
    for _ in range(config.kmax):
        H = attention_step(slots, M, nbhd, trace)
        M = gru_step(slots, M, H) if config.gru else ad.leaky_relu(H)
    b = slots["readout_b"] if config.use_bias else None
    return ad.affine(slots["readout_W"], M, b)


def _on_tape(params: ModelParams):
    tape = ad.Tape()
    return tape, {k: tape.param(k, v) for k, v in params.arrays.items()}


def forward(params: ModelParams, config: ModelConfig, X, labels, g: Graph | Neighborhoods,
            return_attention: bool = False):
    """N x 3 logits for one event graph."""
    nbhd = g if isinstance(g, Neighborhoods) else Neighborhoods.from_graph(g, config.neighborhood_order)
    _, slots = _on_tape(params)
    trace = [] if return_attention else None
    out = forward_tape(slots, config, np.asarray(X, dtype=float), labels, nbhd, trace)
    if return_attention:
        return out.value, trace
    return out.value


def loss_and_grad(params: ModelParams, config: ModelConfig, X, labels, targets,
                  nbhd: Neighborhoods, class_weights=None):
    tape, slots = _on_tape(params)
    logits = forward_tape(slots, config, np.asarray(X, dtype=float), labels, nbhd)
    loss = ad.cross_entropy(logits, targets, class_weights)
    return float(loss.value), ad.backward(tape, loss)


def loss_value(params: ModelParams, config: ModelConfig, X, labels, targets,
               nbhd: Neighborhoods, class_weights=None) -> float:
    tape, slots = _on_tape(params)
    logits = forward_tape(slots, config, np.asarray(X, dtype=float), labels, nbhd)
    return float(ad.cross_entropy(logits, targets, class_weights).value)


def with_order(config: ModelConfig, order: int) -> ModelConfig:
    return replace(config, neighborhood_order=order)
