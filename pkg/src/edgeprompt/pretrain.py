"""Self-supervised pre-training: two contrastive and two edge-prediction
strategies, each producing a frozen-backbone checkpoint.

Strategy tags (used in checkpoint metadata and on the CLI):

* ``graphcl``: agreement between two augmented graph views
* ``simgrace``: agreement between the model and a weight-perturbed copy
* ``ep-gppt``: masked-edge link prediction on dot-product scores
* ``ep-graphprompt``: neighbor vs non-neighbor contrast on cosine similarity

Node-task datasets are treated as one large graph (multi-graph inputs are
disjoint-unioned first); contrastive batches over a single graph are built
from multiple independently-seeded view pairs.
"""

from __future__ import annotations

import numpy as np

from .base import BaseEstimator, check_positive, check_unit_interval
from .checkpoint import Checkpoint, checkpoint_from_model
from .data import LabeledDataset
from .errors import ConfigError
from .graph import Graph, disjoint_union, membership_from_offsets
from .models import GNNModel, classifier_forward, glorot_uniform, model_forward, readout
from .optim import Adam
from . import tensor as T
from .tensor import Tape, Tensor

_DIAG_MASK = -1e9


def _node_drop_view(g: Graph, ratio: float, rng) -> tuple[Graph, np.ndarray]:
    """Drop floor(ratio * N) nodes; returns the view and the kept original ids."""
    n_drop = min(int(ratio * g.num_nodes), g.num_nodes - 1)
    dropped = rng.choice(g.num_nodes, size=n_drop, replace=False)
    keep_mask = np.ones(g.num_nodes, dtype=bool)
    keep_mask[dropped] = False
    new_index = np.cumsum(keep_mask) - 1
    edges = g.undirected_edges()
    kept = edges[keep_mask[edges[:, 0]] & keep_mask[edges[:, 1]]]
    view = Graph(int(keep_mask.sum()), new_index[kept], g.features[keep_mask])
    return view, np.flatnonzero(keep_mask)


def augment_graph(g: Graph, kind: str, ratio: float, seed: int) -> Graph:
    """One stochastic view of a graph.

    ``node-drop`` removes floor(ratio * N) uniformly chosen nodes (at
    least one node always survives) and reindexes the rest;
    ``edge-perturb`` removes floor(ratio * |E|) undirected edges and adds
    the same number of uniformly sampled non-edges, so |E| is preserved
    exactly.
    """
    check_unit_interval("ratio", ratio)
    rng = np.random.default_rng([int(seed), 0xA06])
    if kind == "node-drop":
        view, _ = _node_drop_view(g, ratio, rng)
        return view
    if kind == "edge-perturb":
        edges = g.undirected_edges()
        m = edges.shape[0]
        n_flip = int(ratio * m)
        removed = rng.choice(m, size=n_flip, replace=False)
        keep_mask = np.ones(m, dtype=bool)
        keep_mask[removed] = False
        kept = edges[keep_mask]
        present = kept[:, 0] * np.int64(g.num_nodes) + kept[:, 1]
        added = _sample_non_edges(rng, g.num_nodes, present, n_flip)
        new_edges = np.concatenate([kept, added]) if added.size else kept
        return Graph(g.num_nodes, new_edges, g.features)
    raise ConfigError(f"augmentation kind must be 'node-drop' or 'edge-perturb', got {kind!r}")


def _sample_non_edges(rng, num_nodes: int, present_keys: np.ndarray, count: int) -> np.ndarray:
    """Uniformly sample ``count`` distinct absent pairs.

    ``present_keys`` are packed ``min * num_nodes + max`` keys of the
    existing edges.  Batched rejection sampling, with an exhaustive
    fallback for graphs too dense to hit absent pairs by chance.
    """
    if count <= 0:
        return np.zeros((0, 2), dtype=np.int64)
    n = np.int64(num_nodes)
    taken = np.sort(np.asarray(present_keys, dtype=np.int64))
    chosen: list[np.ndarray] = []
    have = 0
    for _ in range(12):
        draw = rng.integers(0, num_nodes, size=(2 * (count - have) + 8, 2))
        a = np.minimum(draw[:, 0], draw[:, 1])
        b = np.maximum(draw[:, 0], draw[:, 1])
        keys = a * n + b
        absent = (np.searchsorted(taken, keys, side="left")
                  == np.searchsorted(taken, keys, side="right"))
        keys = np.unique(keys[(a != b) & absent])
        keys = keys[: count - have]
        if keys.size:
            chosen.append(keys)
            have += keys.size
            taken = np.sort(np.concatenate([taken, keys]))
        if have == count:
            break
    if have < count:
        all_keys = np.array(
            [a * num_nodes + b for a in range(num_nodes)
             for b in range(a + 1, num_nodes)],
            dtype=np.int64,
        )
        pool = np.setdiff1d(all_keys, taken, assume_unique=True)
        extra = min(count - have, pool.shape[0])
        if extra:
            chosen.append(rng.choice(pool, size=extra, replace=False))
            have += extra
    keys = np.concatenate(chosen) if chosen else np.zeros(0, np.int64)
    return np.stack([keys // num_nodes, keys % num_nodes], axis=1)


def ntxent_loss(z1: Tensor, z2: Tensor, temperature: float) -> Tensor:
    """Normalized-temperature cross entropy over cosine similarities.

    Row i of z1 pairs with row i of z2; all other rows in the stacked
    2B batch are negatives.  Self-similarities are masked out of the
    softmax.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    if z1.shape != z2.shape:
        raise ConfigError(f"view shapes differ: {z1.shape} vs {z2.shape}")
    b = z1.shape[0]
    if b < 2:
        raise ConfigError("NT-Xent needs a batch of >= 2 pairs (no negatives otherwise)")
    y = T.l2_normalize_rows(T.concat_rows(z1, z2))
    sims = T.scale(T.matmul(y, T.transpose(y)), 1.0 / temperature)
    sims = T.add(sims, Tensor(np.diag(np.full(2 * b, _DIAG_MASK))))
    partners = np.concatenate([np.arange(b) + b, np.arange(b)])
    return T.cross_entropy_with_logits(sims, partners)


class ProjectionHead:
    """Two-layer MLP used only during contrastive pre-training."""

    def __init__(self, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor):
        self.w1, self.b1, self.w2, self.b2 = w1, b1, w2, b2

    @classmethod
    def create(cls, rng, dim: int) -> "ProjectionHead":
        return cls(glorot_uniform(rng, dim, dim), Tensor.zeros(1, dim),
                   glorot_uniform(rng, dim, dim), Tensor.zeros(1, dim))

    def __call__(self, x: Tensor) -> Tensor:
        return T.add_row(T.relu(T.add_row(T.matmul(x, self.w1), self.b1)) @ self.w2, self.b2)

    def trainable(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]


def perturbed_copy(model: GNNModel, scale: float, rng) -> GNNModel:
    """A weight-noised clone; per-tensor noise std is scale x that
    tensor's empirical std, so constant tensors stay constant.  The
    source model is never touched."""
    clone = model.copy()
    for _, t in clone.named_parameters():
        std = float(t.data.std())
        if std > 0.0 and scale > 0.0:
            t.data = t.data + rng.normal(0.0, scale * std, size=t.data.shape)
    return clone


def _as_single_graph(ds: LabeledDataset) -> Graph:
    if len(ds.graphs) == 1:
        return ds.graphs[0]
    g, _ = disjoint_union(ds.graphs)
    return g


class _Pretrainer(BaseEstimator):
    """Shared skeleton: build a fresh backbone, run the strategy loop,
    freeze the result into ``checkpoint_``."""

    strategy = ""

    def fit(self, dataset: LabeledDataset) -> "_Pretrainer":
        if not dataset.graphs:
            raise ConfigError("cannot pre-train on an empty dataset")
        check_positive("epochs", self.epochs)
        check_positive("lr", self.lr)
        dims = (dataset.feature_dim,) + (self.hidden_dim,) * self.num_layers
        model = GNNModel.create(self.model_kind, dims, seed=self.seed)
        rng = np.random.default_rng([int(self.seed), 0x9E7])
        history, metadata = self._train(model, dataset, rng)
        metadata = {"epochs": int(self.epochs), **metadata}
        self.model_ = model
        self.history_ = history
        self.checkpoint_ = checkpoint_from_model(
            model, strategy=self.strategy, seed=self.seed, metadata=metadata
        )
        return self

    def _train(self, model, dataset, rng):  # pragma: no cover - abstract
        raise NotImplementedError


class _ContrastivePretrainer(_Pretrainer):
    """GraphCL / SimGRACE common loop: per-epoch batches of view pairs,
    mean readout, shared projection head, NT-Xent."""

    def _train(self, model, dataset, rng):
        proj = ProjectionHead.create(rng, model.output_dim)
        params = model.parameters() + proj.trainable()
        opt = Adam(params, lr=self.lr)
        history = []
        for epoch in range(self.epochs):
            losses, weights = [], []
            for size, build_views in self._batches(model, dataset, rng):
                with Tape() as tape:
                    tape.watch(*params)
                    z1, z2 = build_views()
                    loss = ntxent_loss(proj(z1), proj(z2), self.temperature)
                    grads = tape.backward(loss)
                    opt.step([grads[p] for p in params])
                losses.append(loss.item())
                weights.append(size)
            history.append(float(np.average(losses, weights=weights)))
        return history, self._metadata()

    def _embed(self, model, graphs):
        union, offsets = disjoint_union(graphs)
        h = model_forward(model, union)
        return readout(h, membership_from_offsets(offsets), "mean")

    def _batches(self, model, dataset, rng):
        raise NotImplementedError

    def _metadata(self):
        raise NotImplementedError


class GraphCLPretrainer(_ContrastivePretrainer):
    """Contrast node-drop and edge-perturb views of the same graph.

    Graph datasets contrast whole-graph readouts across a batch.  On a
    single large graph (node datasets) the instances are nodes: the
    positive pair is the same node's representation in the two views,
    over ``node_batch`` sampled surviving nodes per epoch.  (Whole-graph
    readouts of a single graph's views nearly coincide, which pins
    NT-Xent at its ln(2B-1) plateau with vanishing gradient.)
    """

    strategy = "graphcl"

    def __init__(self, model_kind: str = "gcn", num_layers: int = 2,
                 hidden_dim: int = 128, epochs: int = 100, lr: float = 1e-3,
                 batch_size: int = 32, drop_ratio: float = 0.2,
                 perturb_ratio: float = 0.2, temperature: float = 0.5,
                 node_batch: int = 256, seed: int = 0):
        self.model_kind = model_kind
        self.num_layers = num_layers
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.drop_ratio = drop_ratio
        self.perturb_ratio = perturb_ratio
        self.temperature = temperature
        self.node_batch = node_batch
        self.seed = seed

    def _views(self, graphs, rng):
        v1 = [augment_graph(g, "node-drop", self.drop_ratio, int(rng.integers(2**31)))
              for g in graphs]
        v2 = [augment_graph(g, "edge-perturb", self.perturb_ratio, int(rng.integers(2**31)))
              for g in graphs]
        return v1, v2

    def _batches(self, model, dataset, rng):
        if dataset.task == "node":
            if self.node_batch < 2:
                raise ConfigError("node_batch must be >= 2 for single-graph datasets")
            g = _as_single_graph(dataset)
            view_a, kept = _node_drop_view(
                g, self.drop_ratio, np.random.default_rng([int(rng.integers(2**31)), 0xA06]))
            view_b = augment_graph(g, "edge-perturb", self.perturb_ratio,
                                   int(rng.integers(2**31)))
            batch = min(self.node_batch, kept.size)
            anchors = np.sort(rng.choice(kept, size=batch, replace=False))
            pos_a = np.searchsorted(kept, anchors)

            def build():
                h_a = model_forward(model, view_a)
                h_b = model_forward(model, view_b)
                return T.gather_rows(h_a, pos_a), T.gather_rows(h_b, anchors)

            yield batch, build
            return
        order = rng.permutation(len(dataset.graphs))
        for start in range(0, len(order), self.batch_size):
            batch = [dataset.graphs[i] for i in order[start : start + self.batch_size]]
            if len(batch) < 2:
                continue
            v1, v2 = self._views(batch, rng)
            yield len(batch), lambda v1=v1, v2=v2: (
                self._embed(model, v1), self._embed(model, v2)
            )

    def _metadata(self):
        return {
            "drop_ratio": self.drop_ratio,
            "perturb_ratio": self.perturb_ratio,
            "temperature": self.temperature,
        }


class SimGRACEPretrainer(_ContrastivePretrainer):
    """Augmentation-free: the second view comes from a weight-perturbed
    copy of the model; the original weights are never modified.

    Graph datasets pair whole-graph readouts under the two models; a
    single large graph pairs per-node representations over
    ``node_batch`` sampled nodes.
    """

    strategy = "simgrace"

    def __init__(self, model_kind: str = "gcn", num_layers: int = 2,
                 hidden_dim: int = 128, epochs: int = 100, lr: float = 1e-3,
                 batch_size: int = 32, noise_scale: float = 0.1,
                 temperature: float = 0.5, node_batch: int = 256, seed: int = 0):
        self.model_kind = model_kind
        self.num_layers = num_layers
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.noise_scale = noise_scale
        self.temperature = temperature
        self.node_batch = node_batch
        self.seed = seed

    def _batches(self, model, dataset, rng):
        if dataset.task == "node":
            if self.node_batch < 2:
                raise ConfigError("node_batch must be >= 2 for single-graph datasets")
            g = _as_single_graph(dataset)
            twin = perturbed_copy(model, self.noise_scale, rng)
            batch = min(self.node_batch, g.num_nodes)
            anchors = np.sort(rng.choice(g.num_nodes, size=batch, replace=False))

            def build():
                z1 = T.gather_rows(model_forward(model, g), anchors)
                z2 = T.gather_rows(model_forward(twin, g), anchors)
                return z1, z2

            yield batch, build
            return
        order = rng.permutation(len(dataset.graphs))
        for start in range(0, len(order), self.batch_size):
            batch = [dataset.graphs[i] for i in order[start : start + self.batch_size]]
            if len(batch) < 2:
                continue
            twin = perturbed_copy(model, self.noise_scale, rng)
            yield len(batch), lambda batch=batch, twin=twin: (
                self._embed(model, batch), self._embed(twin, batch)
            )

    def _metadata(self):
        return {"noise_scale": self.noise_scale, "temperature": self.temperature}


class LinkPredictionPretrainer(_Pretrainer):
    """Masked-edge link prediction (the EP-GPPT strategy).

    A fixed fraction of edges is hidden from message passing; every
    original edge is a positive, matched 1:1 with per-epoch uniformly
    resampled non-edges, scored by sigmoid(h_i . h_j).
    """

    strategy = "ep-gppt"

    def __init__(self, model_kind: str = "gcn", num_layers: int = 2,
                 hidden_dim: int = 128, epochs: int = 100, lr: float = 1e-3,
                 mask_ratio: float = 0.2, seed: int = 0):
        self.model_kind = model_kind
        self.num_layers = num_layers
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.lr = lr
        self.mask_ratio = mask_ratio
        self.seed = seed

    def _train(self, model, dataset, rng):
        check_unit_interval("mask_ratio", self.mask_ratio)
        g = _as_single_graph(dataset)
        edges = g.undirected_edges()
        m = edges.shape[0]
        if m == 0:
            raise ConfigError("ep-gppt needs a graph with at least one edge")
        n_mask = int(self.mask_ratio * m)
        masked = rng.choice(m, size=n_mask, replace=False) if n_mask else np.zeros(0, np.int64)
        visible = np.ones(m, dtype=bool)
        visible[masked] = False
        train_graph = Graph(g.num_nodes, edges[visible], g.features)
        present = edges[:, 0] * np.int64(g.num_nodes) + edges[:, 1]
        params = model.parameters()
        opt = Adam(params, lr=self.lr)
        targets = np.concatenate([np.ones(m), np.zeros(m)])
        history = []
        for epoch in range(self.epochs):
            neg = _sample_non_edges(rng, g.num_nodes, present, m)
            pairs = np.concatenate([edges, neg])
            with Tape() as tape:
                tape.watch(*params)
                h = model_forward(model, train_graph)
                scores = T.rowsum(T.mul(T.gather_rows(h, pairs[:, 0]),
                                        T.gather_rows(h, pairs[:, 1])))
                loss = T.binary_cross_entropy_with_logits(scores, targets)
                grads = tape.backward(loss)
                opt.step([grads[p] for p in params])
            history.append(loss.item())
        metadata = {
            "mask_ratio": self.mask_ratio,
            "masked_edges": np.sort(masked).tolist(),
        }
        return history, metadata


class NeighborContrastPretrainer(_Pretrainer):
    """Neighbor vs non-neighbor contrast (the EP-GraphPrompt strategy).

    Each epoch pairs every eligible anchor node with one sampled neighbor
    (positive) and one sampled non-neighbor (negative); the loss is a
    temperature-scaled two-way softmax over cosine similarities.  Isolated
    anchors and anchors with no non-neighbor are skipped.
    """

    strategy = "ep-graphprompt"

    def __init__(self, model_kind: str = "gcn", num_layers: int = 2,
                 hidden_dim: int = 128, epochs: int = 100, lr: float = 1e-3,
                 temperature: float = 0.5, seed: int = 0):
        self.model_kind = model_kind
        self.num_layers = num_layers
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.lr = lr
        self.temperature = temperature
        self.seed = seed

    def _train(self, model, dataset, rng):
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        g = _as_single_graph(dataset)
        deg = g.degrees()
        anchors = np.flatnonzero((deg >= 1) & (deg < g.num_nodes - 1))
        if anchors.size == 0:
            raise ConfigError("no anchor node has both a neighbor and a non-neighbor")
        params = model.parameters()
        opt = Adam(params, lr=self.lr)
        labels = np.zeros(anchors.size, dtype=np.int64)
        history = []
        for epoch in range(self.epochs):
            pos = np.empty(anchors.size, dtype=np.int64)
            neg = np.empty(anchors.size, dtype=np.int64)
            for k, a in enumerate(anchors):
                lo, hi = g.csr_offsets[a], g.csr_offsets[a + 1]
                nbrs = g.csr_targets[lo:hi]
                pos[k] = nbrs[rng.integers(nbrs.size)]
                while True:
                    cand = int(rng.integers(g.num_nodes))
                    if cand != a and cand not in nbrs:
                        neg[k] = cand
                        break
            with Tape() as tape:
                tape.watch(*params)
                hn = T.l2_normalize_rows(model_forward(model, g))
                ha = T.gather_rows(hn, anchors)
                s_pos = T.rowsum(T.mul(ha, T.gather_rows(hn, pos)))
                s_neg = T.rowsum(T.mul(ha, T.gather_rows(hn, neg)))
                logits = T.scale(T.concat_cols(s_pos, s_neg), 1.0 / self.temperature)
                loss = T.cross_entropy_with_logits(logits, labels)
                grads = tape.backward(loss)
                opt.step([grads[p] for p in params])
            history.append(loss.item())
        return history, {"temperature": self.temperature}


PRETRAINERS = {
    cls.strategy: cls
    for cls in (GraphCLPretrainer, SimGRACEPretrainer,
                LinkPredictionPretrainer, NeighborContrastPretrainer)
}


def link_scores(model: GNNModel, g: Graph, pairs: np.ndarray) -> np.ndarray:
    """sigmoid(h_i . h_j) for node pairs, under the current weights."""
    h = model_forward(model, g).data
    raw = np.sum(h[pairs[:, 0]] * h[pairs[:, 1]], axis=1)
    return 1.0 / (1.0 + np.exp(-raw))
