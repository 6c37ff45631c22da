"""GCN and GIN backbones with an edge-prompt injection point.

Prompts enter aggregation as ``coeff * (h_j + e_ij)`` per directed CSR
entry: the prompt row is added to the neighbor representation before the
aggregation coefficient applies.  Self contributions (the GCN self-loop
and the GIN ``(1+eps) h_i`` term) never carry a prompt; prompts exist
only for stored edges.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError
from .graph import Graph, NormalizedAdjacency, normalized_adjacency
from . import tensor as T
from .tensor import Tensor

GCN = "gcn"
GIN = "gin"


def glorot_uniform(rng: np.random.Generator, rows: int, cols: int) -> Tensor:
    bound = np.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform(-bound, bound, size=(rows, cols)))


class GCNLayer:
    """Symmetric-normalized graph convolution: aggregate, transform, ReLU."""

    def __init__(self, weight: Tensor, bias: Tensor, activation: bool):
        self.weight = weight
        self.bias = bias
        self.activation = activation

    @classmethod
    def create(cls, rng, d_in: int, d_out: int, activation: bool) -> "GCNLayer":
        return cls(glorot_uniform(rng, d_in, d_out), Tensor.zeros(1, d_out), activation)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]


class GINLayer:
    """Sum aggregation with a fixed epsilon self term and a 2-layer MLP."""

    def __init__(self, epsilon: float, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor):
        self.epsilon = epsilon
        self.w1, self.b1 = w1, b1
        self.w2, self.b2 = w2, b2

    @classmethod
    def create(cls, rng, d_in: int, d_out: int, epsilon: float = 0.0) -> "GINLayer":
        return cls(
            epsilon,
            glorot_uniform(rng, d_in, d_out), Tensor.zeros(1, d_out),
            glorot_uniform(rng, d_out, d_out), Tensor.zeros(1, d_out),
        )

    def parameters(self):
        return [("mlp.0.weight", self.w1), ("mlp.0.bias", self.b1),
                ("mlp.1.weight", self.w2), ("mlp.1.bias", self.b2)]

    def mlp(self, x: Tensor) -> Tensor:
        return T.add_row(T.relu(T.add_row(T.matmul(x, self.w1), self.b1)) @ self.w2, self.b2)


class GNNModel:
    """An ordered stack of GCN or GIN layers with declared widths."""

    def __init__(self, kind: str, layers: list, dims: tuple[int, ...]):
        if kind not in (GCN, GIN):
            raise ConfigError(f"unknown model kind {kind!r}")
        if len(layers) < 1 or len(dims) != len(layers) + 1:
            raise ConfigError(
                f"{len(layers)} layers need {len(layers) + 1} dims, got {len(dims)}"
            )
        self.kind = kind
        self.layers = layers
        self.dims = tuple(int(d) for d in dims)

    @classmethod
    def create(cls, kind: str, dims, seed: int = 0) -> "GNNModel":
        """Fresh model with Glorot-uniform weights drawn from ``seed``."""
        dims = tuple(int(d) for d in dims)
        rng = np.random.default_rng([int(seed), 0x6E4E])
        layers = []
        last = len(dims) - 2
        for l in range(len(dims) - 1):
            if kind == GCN:
                layers.append(GCNLayer.create(rng, dims[l], dims[l + 1], activation=l < last))
            elif kind == GIN:
                layers.append(GINLayer.create(rng, dims[l], dims[l + 1]))
            else:
                raise ConfigError(f"unknown model kind {kind!r}")
        return cls(kind, layers, dims)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def output_dim(self) -> int:
        return self.dims[-1]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for l, layer in enumerate(self.layers):
            for name, t in layer.parameters():
                out.append((f"layers.{l}.{name}", t))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        named = dict(self.named_parameters())
        if set(named) != set(arrays):
            missing = sorted(set(named) ^ set(arrays))
            raise ConfigError(f"parameter names do not match model: {missing}")
        for name, t in named.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ShapeError(
                    f"{name}: stored shape {arr.shape} vs model {t.data.shape}"
                )
            t.data = arr.copy()

    def copy(self) -> "GNNModel":
        clone = GNNModel.create(self.kind, self.dims, seed=0)
        clone.load_state_arrays(self.state_arrays())
        return clone


def _check_prompts(prompts: Tensor | None, g: Graph, d_in: int) -> None:
    if prompts is None:
        return
    if prompts.shape != (g.num_directed_edges, d_in):
        raise ShapeError(
            f"prompt rows {prompts.shape} vs expected ({g.num_directed_edges}, {d_in})"
        )


def gcn_layer_forward(layer: GCNLayer, h: Tensor, g: Graph,
                      norm: NormalizedAdjacency, prompts: Tensor | None = None) -> Tensor:
    """One GCN layer over CSR entries.

    Message for entry (i <- j) is coeff_ij * (h_j + e_ij); the self-loop
    message coeff_ii * h_i carries no prompt.
    """
    _check_prompts(prompts, g, h.shape[1])
    msgs = T.gather_rows(h, g.csr_targets, scatter_order=g.csr_target_order)
    if prompts is not None:
        msgs = T.add(msgs, prompts)
    msgs = T.scale_rows(msgs, norm.entry_coeffs)
    agg = T.scatter_add_rows(msgs, g.csr_owners, g.num_nodes)
    if norm.self_coeffs is not None:
        agg = T.add(agg, T.scale_rows(h, norm.self_coeffs))
    out = T.add_row(T.matmul(agg, layer.weight), layer.bias)
    if layer.activation:
        out = T.relu(out)
    return out


def gin_aggregate(h: Tensor, g: Graph, epsilon: float,
                  prompts: Tensor | None = None) -> Tensor:
    """Neighbor sum of (h_j + e_ij) plus (1+eps) h_i, before the MLP."""
    _check_prompts(prompts, g, h.shape[1])
    msgs = T.gather_rows(h, g.csr_targets, scatter_order=g.csr_target_order)
    if prompts is not None:
        msgs = T.add(msgs, prompts)
    agg = T.scatter_add_rows(msgs, g.csr_owners, g.num_nodes)
    return T.add(agg, T.scale(h, 1.0 + epsilon))


def gin_layer_forward(layer: GINLayer, h: Tensor, g: Graph,
                      prompts: Tensor | None = None) -> Tensor:
    return layer.mlp(gin_aggregate(h, g, layer.epsilon, prompts))


def model_forward(model: GNNModel, g: Graph, prompts=None,
                  features: Tensor | None = None) -> Tensor:
    """Run all layers; h^(0) is the graph's feature matrix.

    ``prompts`` may be None, a per-layer sequence of materialized
    E_dir x D_{l-1} tensors, or a callable ``(layer_index, h_prev) ->
    Tensor | None`` for prompt families whose rows depend on the incoming
    representations.  ``features`` substitutes h^(0) (used by the
    node-feature prompt baselines).
    """
    h = Tensor(g.features) if features is None else features
    if h.shape != (g.num_nodes, model.input_dim):
        raise ShapeError(
            f"input features {h.shape} vs expected ({g.num_nodes}, {model.input_dim})"
        )
    provider = prompts
    if prompts is None:
        provider = lambda l, h: None
    elif not callable(prompts):
        bundle = list(prompts)
        if len(bundle) != model.num_layers:
            raise ShapeError(
                f"bundle has {len(bundle)} layers, model has {model.num_layers}"
            )
        provider = lambda l, h: bundle[l]
    norm = normalized_adjacency(g, add_self_loops=True) if model.kind == GCN else None
    for l, layer in enumerate(model.layers):
        e = provider(l, h)
        if model.kind == GCN:
            h = gcn_layer_forward(layer, h, g, norm, e)
        else:
            h = gin_layer_forward(layer, h, g, e)
    return h


def readout(h: Tensor, membership, kind: str = "sum") -> Tensor:
    """Permutation-invariant per-graph aggregation of node rows."""
    member = np.asarray(membership, dtype=np.int64).reshape(-1)
    if member.shape[0] != h.shape[0]:
        raise ShapeError(f"membership covers {member.shape[0]} of {h.shape[0]} rows")
    num_graphs = int(member.max()) + 1 if member.size else 0
    total = T.scatter_add_rows(h, member, num_graphs)
    if kind == "sum":
        return total
    if kind == "mean":
        counts = np.bincount(member, minlength=num_graphs).astype(np.float64)
        return T.scale_rows(total, 1.0 / np.maximum(counts, 1.0))
    raise ConfigError(f"readout kind must be 'sum' or 'mean', got {kind!r}")


class LinearHead:
    """The linear probe: an affine map from representations to logits."""

    def __init__(self, weight: Tensor, bias: Tensor):
        self.weight = weight
        self.bias = bias

    @classmethod
    def create(cls, rng, d_in: int, num_classes: int) -> "LinearHead":
        return cls(glorot_uniform(rng, d_in, num_classes), Tensor.zeros(1, num_classes))

    def parameters(self):
        return [("head.weight", self.weight), ("head.bias", self.bias)]


def classifier_forward(head: LinearHead, reps: Tensor) -> Tensor:
    return T.add_row(T.matmul(reps, head.weight), head.bias)
