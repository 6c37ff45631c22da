"""Datasets: JSON container IO, few-shot splits, and CSBM generation.

Container format (UTF-8 JSON)::

    {
      "num_classes": int,
      "task": "node" | "graph",
      "graphs": [
        {
          "num_nodes": int,
          "edges": [[i, j], ...],          # undirected, 0-based
          "features": [[f, ...] x num_nodes],
          "node_labels": [int x num_nodes],   # node task only
          "graph_label": int                  # graph task only
        },
        ...
      ]
    }

The loader rejects unknown keys, enforces label ranges, and surfaces
self-loop/duplicate-edge cleanup counts in ``LabeledDataset.load_stats``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DatasetError, InsufficientDataError, ShapeError
from .graph import Graph

logger = logging.getLogger(__name__)

_TOP_KEYS = {"num_classes", "task", "graphs"}
_GRAPH_KEYS = {"num_nodes", "edges", "features", "node_labels", "graph_label"}


@dataclass
class LabeledDataset:
    """A list of graphs with either per-node or per-graph labels."""

    graphs: list[Graph]
    num_classes: int
    node_labels: list[np.ndarray] | None = None
    graph_labels: np.ndarray | None = None
    load_stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.node_labels is None) == (self.graph_labels is None):
            raise DatasetError(
                "exactly one of node_labels / graph_labels must be present"
            )
        for arr in self.node_labels or []:
            if arr.size and (arr.min() < 0 or arr.max() >= self.num_classes):
                raise DatasetError(
                    f"node label out of range [0, {self.num_classes})"
                )
        if self.graph_labels is not None:
            gl = self.graph_labels
            if gl.shape[0] != len(self.graphs):
                raise DatasetError(
                    f"{gl.shape[0]} graph labels for {len(self.graphs)} graphs"
                )
            if gl.size and (gl.min() < 0 or gl.max() >= self.num_classes):
                raise DatasetError(
                    f"graph label out of range [0, {self.num_classes})"
                )

    @property
    def task(self) -> str:
        return "node" if self.node_labels is not None else "graph"

    def all_labels(self) -> np.ndarray:
        """Labels in instance order: concatenated nodes, or graphs."""
        if self.node_labels is not None:
            return np.concatenate(self.node_labels)
        return self.graph_labels

    @property
    def num_instances(self) -> int:
        return int(self.all_labels().shape[0])

    @property
    def feature_dim(self) -> int:
        return self.graphs[0].feature_dim


def load_dataset(path) -> LabeledDataset:
    """Parse a container file into a validated LabeledDataset."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise DatasetError(f"{path}: top level must be an object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise DatasetError(f"{path}: unknown top-level keys {sorted(unknown)}")
    missing = _TOP_KEYS - set(raw)
    if missing:
        raise DatasetError(f"{path}: missing keys {sorted(missing)}")
    task = raw["task"]
    if task not in ("node", "graph"):
        raise DatasetError(f"{path}: task must be 'node' or 'graph', got {task!r}")
    num_classes = raw["num_classes"]
    if not isinstance(num_classes, int) or num_classes < 1:
        raise DatasetError(f"{path}: num_classes must be a positive int")

    graphs: list[Graph] = []
    node_labels: list[np.ndarray] = []
    graph_labels: list[int] = []
    dropped = collapsed = 0
    for k, entry in enumerate(raw["graphs"]):
        unknown = set(entry) - _GRAPH_KEYS
        if unknown:
            raise DatasetError(f"{path}: graph {k}: unknown keys {sorted(unknown)}")
        try:
            n = entry["num_nodes"]
            g = Graph(n, entry["edges"], entry["features"])
        except KeyError as exc:
            raise DatasetError(f"{path}: graph {k}: missing field {exc}") from exc
        except (ShapeError, IndexError, ValueError) as exc:
            raise DatasetError(f"{path}: graph {k}: {exc}") from exc
        dropped += g.dropped_self_loops
        collapsed += g.collapsed_duplicates
        graphs.append(g)
        if task == "node":
            if "node_labels" not in entry:
                raise DatasetError(f"{path}: graph {k}: node task needs node_labels")
            labels = np.asarray(entry["node_labels"], dtype=np.int64)
            if labels.shape != (n,):
                raise DatasetError(
                    f"{path}: graph {k}: {labels.shape[0]} node labels for {n} nodes"
                )
            node_labels.append(labels)
        else:
            if "graph_label" not in entry:
                raise DatasetError(f"{path}: graph {k}: graph task needs graph_label")
            graph_labels.append(int(entry["graph_label"]))
    if not graphs:
        raise DatasetError(f"{path}: container holds no graphs")
    if dropped:
        logger.warning("%s: dropped %d self-loop(s) at load", path, dropped)
    stats = {"dropped_self_loops": dropped, "collapsed_duplicates": collapsed}
    if task == "node":
        return LabeledDataset(graphs, num_classes, node_labels=node_labels,
                              load_stats=stats)
    return LabeledDataset(graphs, num_classes,
                          graph_labels=np.asarray(graph_labels, dtype=np.int64),
                          load_stats=stats)


def save_dataset(ds: LabeledDataset, path) -> None:
    payload = {"num_classes": ds.num_classes, "task": ds.task, "graphs": []}
    for k, g in enumerate(ds.graphs):
        entry = {
            "num_nodes": g.num_nodes,
            "edges": g.undirected_edges().tolist(),
            "features": g.features.tolist(),
        }
        if ds.task == "node":
            entry["node_labels"] = ds.node_labels[k].tolist()
        else:
            entry["graph_label"] = int(ds.graph_labels[k])
        payload["graphs"].append(entry)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


@dataclass
class FewShotSplit:
    """Exactly k training instances per class; everything else is test."""

    train_ids: np.ndarray
    test_ids: np.ndarray
    shots_per_class: int
    seed: int


def kshot_sample(ds: LabeledDataset, k: int, seed: int) -> FewShotSplit:
    """Stratified k-shot split, a pure function of (dataset, k, seed).

    Instances are nodes (in concatenated graph order) for node tasks and
    graphs for graph tasks.  Sampling is uniform without replacement
    within each class; a class with fewer than k instances raises.
    """
    if k < 0:
        raise InsufficientDataError(f"shots must be >= 0, got {k}")
    labels = ds.all_labels()
    rng = np.random.default_rng([int(seed), 0x5E17])
    train: list[np.ndarray] = []
    for c in range(ds.num_classes):
        members = np.flatnonzero(labels == c)
        if members.shape[0] < k:
            raise InsufficientDataError(
                f"class {c} has {members.shape[0]} labeled instances, need {k}"
            )
        picked = rng.choice(members, size=k, replace=False)
        train.append(np.sort(picked))
    train_ids = np.sort(np.concatenate(train)) if train else np.zeros(0, np.int64)
    mask = np.ones(labels.shape[0], dtype=bool)
    mask[train_ids] = False
    return FewShotSplit(
        train_ids=train_ids.astype(np.int64),
        test_ids=np.flatnonzero(mask).astype(np.int64),
        shots_per_class=k,
        seed=seed,
    )


@dataclass
class CSBMParams:
    """Two-class contextual stochastic block model.

    Nodes of class c draw features from N(mu_c, I); an unordered pair is
    connected with probability ``p`` within a class and ``q`` across.
    """

    mu1: np.ndarray
    mu2: np.ndarray
    p: float
    q: float
    n_per_class: int

    def __post_init__(self):
        self.mu1 = np.asarray(self.mu1, dtype=np.float64).reshape(-1)
        self.mu2 = np.asarray(self.mu2, dtype=np.float64).reshape(-1)
        if self.mu1.shape != self.mu2.shape:
            raise ShapeError(
                f"mu1/mu2 dims differ: {self.mu1.shape} vs {self.mu2.shape}"
            )
        if np.array_equal(self.mu1, self.mu2):
            raise ValueError("CSBM needs mu1 != mu2")
        for name, v in (("p", self.p), ("q", self.q)):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")


def _block_pairs(rng, rows, cols, prob, triangular):
    """Sampled index pairs of a Bernoulli block; upper triangle if square."""
    draws = rng.random((rows, cols))
    if triangular:
        mask = np.triu(draws < prob, k=1)
    else:
        mask = draws < prob
    return np.argwhere(mask)


def csbm_generate(params: CSBMParams, seed: int) -> tuple[Graph, np.ndarray]:
    """Sample a graph and its node labels from the CSBM.

    Draw order is fixed (class-1 block, class-2 block, cross block, then
    features) so a seed pins the sample exactly.
    """
    rng = np.random.default_rng([int(seed), 0xC5B3])
    n = params.n_per_class
    blocks = []
    intra1 = _block_pairs(rng, n, n, params.p, triangular=True)
    if intra1.size:
        blocks.append(intra1)
    intra2 = _block_pairs(rng, n, n, params.p, triangular=True)
    if intra2.size:
        blocks.append(intra2 + n)
    cross = _block_pairs(rng, n, n, params.q, triangular=False)
    if cross.size:
        cross = cross.copy()
        cross[:, 1] += n
        blocks.append(cross)
    edges = np.concatenate(blocks) if blocks else np.zeros((0, 2), np.int64)
    dim = params.mu1.shape[0]
    feats = np.empty((2 * n, dim))
    feats[:n] = rng.normal(size=(n, dim)) + params.mu1
    feats[n:] = rng.normal(size=(n, dim)) + params.mu2
    labels = np.repeat(np.array([0, 1], dtype=np.int64), n)
    return Graph(2 * n, edges, feats), labels


def csbm_node_dataset(params: CSBMParams, seed: int) -> LabeledDataset:
    """One CSBM graph wrapped as a 2-class node-classification dataset."""
    g, labels = csbm_generate(params, seed)
    return LabeledDataset([g], num_classes=2, node_labels=[labels])


def csbm_graph_dataset(params_class0: CSBMParams, params_class1: CSBMParams,
                       num_graphs: int, seed: int) -> LabeledDataset:
    """Graph-classification dataset: class = which CSBM regime generated it.

    Graphs alternate between the two regimes so both classes get
    ceil/floor(num_graphs / 2) instances.
    """
    graphs: list[Graph] = []
    labels: list[int] = []
    for k in range(num_graphs):
        cls = k % 2
        params = params_class1 if cls else params_class0
        g, _ = csbm_generate(params, seed=(int(seed) * 100003 + k))
        graphs.append(g)
        labels.append(cls)
    return LabeledDataset(graphs, num_classes=2,
                          graph_labels=np.asarray(labels, dtype=np.int64))
