"""Learnable prompt families for frozen backbones.

Edge prompts attach to directed CSR entries and ride along message
passing; node prompts (the GPF / GPF-plus baselines) add to the input
features.  All prompt vectors initialize to zero so that step 0 of any
tuning run coincides exactly with the unprompted model; only the
attention score weights start at small random values.

EdgePrompt+ forms each entry's prompt as a softmax-weighted average of
M anchor vectors, with logits LeakyReLU([h_i || h_j] W) computed from the
representations entering the layer, so the two directions of an
undirected edge score independently and may receive different prompts.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError
from .graph import Graph
from . import tensor as T
from .tensor import Tensor


class EdgePromptParams:
    """One shared prompt vector per layer, broadcast to every edge."""

    method = "edgeprompt"

    def __init__(self, vectors: list[Tensor]):
        self.vectors = vectors

    @classmethod
    def create(cls, input_dims) -> "EdgePromptParams":
        return cls([Tensor.zeros(1, int(d)) for d in input_dims])

    def trainable(self) -> list[Tensor]:
        return list(self.vectors)

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        return [(f"prompt.{l}.vector", v) for l, v in enumerate(self.vectors)]

    def provider(self, g: Graph):
        ones = [Tensor.ones(g.num_directed_edges, 1) for _ in self.vectors]

        def materialize(l: int, h_prev: Tensor) -> Tensor:
            return T.matmul(ones[l], self.vectors[l])

        return materialize


class EdgePromptPlusParams:
    """Per-layer anchor sets with attention-style mixing scores."""

    method = "edgeprompt+"

    def __init__(self, anchors: list[Tensor], score_weights: list[Tensor],
                 leaky_slope: float = 0.2):
        if len(anchors) != len(score_weights):
            raise ShapeError(
                f"{len(anchors)} anchor sets vs {len(score_weights)} score weights"
            )
        for l, (p, w) in enumerate(zip(anchors, score_weights)):
            m, d = p.shape
            if m < 1:
                raise ConfigError(f"layer {l}: need at least one anchor prompt")
            if w.shape != (2 * d, m):
                raise ShapeError(
                    f"layer {l}: score weights {w.shape} vs expected ({2 * d}, {m})"
                )
        self.anchors = anchors
        self.score_weights = score_weights
        self.leaky_slope = leaky_slope

    @classmethod
    def create(cls, input_dims, anchors_per_layer, rng: np.random.Generator,
               leaky_slope: float = 0.2) -> "EdgePromptPlusParams":
        dims = [int(d) for d in input_dims]
        if isinstance(anchors_per_layer, int):
            counts = [anchors_per_layer] * len(dims)
        else:
            counts = [int(m) for m in anchors_per_layer]
        if len(counts) != len(dims):
            raise ShapeError(
                f"{len(counts)} anchor counts for {len(dims)} layers"
            )
        anchors = [Tensor.zeros(m, d) for m, d in zip(counts, dims)]
        weights = [Tensor(rng.uniform(-0.1, 0.1, size=(2 * d, m)))
                   for m, d in zip(counts, dims)]
        return cls(anchors, weights, leaky_slope)

    def trainable(self) -> list[Tensor]:
        return list(self.anchors) + list(self.score_weights)

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = []
        for l, (p, w) in enumerate(zip(self.anchors, self.score_weights)):
            out.append((f"prompt.{l}.anchors", p))
            out.append((f"prompt.{l}.score_weights", w))
        return out

    def scores(self, h_prev: Tensor, g: Graph, layer: int) -> Tensor:
        """Per-entry mixing weights: Softmax(LeakyReLU([h_i || h_j] W)).

        Entry k is the directed pair owners[k] <- targets[k]; h_i is the
        owner's row, h_j the neighbor's.  Rows sum to 1 and gradients flow
        into both W and h_prev (no stop-gradient).

        Computed as h_i W_top + h_j W_bot (the block split of the
        concatenation product), so only N x M products are gathered per
        edge instead of E x 2D concatenations.
        """
        w = self.score_weights[layer]
        d = h_prev.shape[1]
        if d * 2 != w.shape[0]:
            raise ShapeError(
                f"layer {layer}: representations of width {d} "
                f"vs score weights {w.shape}"
            )
        s_own = T.matmul(h_prev, T.slice_rows(w, 0, d))
        s_nbr = T.matmul(h_prev, T.slice_rows(w, d, 2 * d))
        logits = T.add(
            T.gather_rows(s_own, g.csr_owners),
            T.gather_rows(s_nbr, g.csr_targets, scatter_order=g.csr_target_order),
        )
        return T.softmax_rows(T.leaky_relu(logits, self.leaky_slope))

    def materialize(self, h_prev: Tensor, g: Graph, layer: int) -> Tensor:
        """Score-weighted average of the layer's anchors, one row per entry."""
        return T.matmul(self.scores(h_prev, g, layer), self.anchors[layer])

    def provider(self, g: Graph):
        def materialize(l: int, h_prev: Tensor) -> Tensor:
            return self.materialize(h_prev, g, l)

        return materialize


class NodePromptParams:
    """Feature-space prompts: GPF (one vector) and GPF-plus (scored basis)."""

    def __init__(self, variant: str, vector: Tensor | None = None,
                 basis: Tensor | None = None, score_map: Tensor | None = None):
        if variant not in ("gpf", "gpf-plus"):
            raise ConfigError(f"unknown node-prompt variant {variant!r}")
        self.variant = variant
        self.method = variant
        if variant == "gpf":
            if vector is None:
                raise ConfigError("gpf needs the prompt vector")
            self.vector = vector
            self.basis = self.score_map = None
        else:
            if basis is None or score_map is None:
                raise ConfigError("gpf-plus needs basis and score_map")
            if score_map.shape != (score_map.shape[0], basis.shape[0]):
                raise ShapeError(
                    f"score map {score_map.shape} vs basis {basis.shape}"
                )
            self.vector = None
            self.basis = basis
            self.score_map = score_map

    @classmethod
    def create(cls, variant: str, feature_dim: int, num_basis: int,
               rng: np.random.Generator) -> "NodePromptParams":
        d = int(feature_dim)
        if variant == "gpf":
            return cls("gpf", vector=Tensor.zeros(1, d))
        return cls("gpf-plus", basis=Tensor.zeros(int(num_basis), d),
                   score_map=Tensor(rng.uniform(-0.1, 0.1, size=(d, int(num_basis)))))

    def trainable(self) -> list[Tensor]:
        if self.variant == "gpf":
            return [self.vector]
        return [self.basis, self.score_map]

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        if self.variant == "gpf":
            return [("prompt.vector", self.vector)]
        return [("prompt.basis", self.basis), ("prompt.score_map", self.score_map)]

    def apply(self, x: Tensor) -> Tensor:
        """Prompted features: X + 1·p̂, or X + softmax(X S) B for gpf-plus."""
        if self.variant == "gpf":
            if self.vector.shape[1] != x.shape[1]:
                raise ShapeError(
                    f"prompt width {self.vector.shape[1]} vs features {x.shape}"
                )
            return T.add_row(x, self.vector)
        if self.score_map.shape[0] != x.shape[1]:
            raise ShapeError(
                f"score map {self.score_map.shape} vs features {x.shape}"
            )
        mix = T.softmax_rows(T.matmul(x, self.score_map))
        return T.add(x, T.matmul(mix, self.basis))


def materialize_edgeprompt(params: EdgePromptParams, g: Graph) -> list[Tensor]:
    """The static bundle: every directed entry at layer l gets row p^(l)."""
    provider = params.provider(g)
    return [provider(l, None) for l in range(len(params.vectors))]
