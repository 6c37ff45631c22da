"""CSR-encoded undirected graphs with node features.

Graphs are stored as symmetric directed pairs: for every undirected edge
{a, b} both (a, b) and (b, a) appear in the CSR arrays and share one
stable ``edge_id``.  Self-loops are never stored (layers that need a
self contribution add it themselves) and duplicate edges collapse at
construction time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


class Graph:
    """Immutable sparse graph: CSR structure plus an N x D feature matrix.

    ``csr_offsets`` has length N+1; the slice ``csr_targets[offsets[i]:
    offsets[i+1]]`` lists the neighbors of node i in ascending order.
    ``csr_owners`` is the matching row index per entry (so entry k is the
    directed pair owners[k] <- targets[k], a message from targets[k] into
    owners[k]).  ``edge_ids[k]`` identifies the undirected edge the entry
    came from; both directions share it.
    """

    def __init__(self, num_nodes: int, edges, features):
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != num_nodes:
            raise ShapeError(
                f"features must be ({num_nodes}, D), got {feats.shape}"
            )
        if isinstance(edges, np.ndarray):
            pairs = edges.astype(np.int64, copy=False).reshape(-1, 2)
        else:
            pairs = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if pairs.size and (pairs.min() < 0 or pairs.max() >= num_nodes):
            bad = pairs[(pairs < 0) | (pairs >= num_nodes)].flat[0]
            raise IndexError(f"edge endpoint {bad} out of range [0, {num_nodes})")

        loops = pairs[:, 0] == pairs[:, 1]
        self.dropped_self_loops = int(loops.sum())
        pairs = pairs[~loops]
        # dedup and sort via packed integer keys; much faster than
        # row-wise unique/lexsort on large edge lists
        lo = np.minimum(pairs[:, 0], pairs[:, 1])
        hi = np.maximum(pairs[:, 0], pairs[:, 1])
        keys = np.unique(lo * np.int64(num_nodes) + hi)
        self.collapsed_duplicates = int(pairs.shape[0] - keys.shape[0])

        m = keys.shape[0]
        a, b = keys // num_nodes, keys % num_nodes
        ids = np.arange(m, dtype=np.int64)
        owners = np.concatenate([a, b])
        targets = np.concatenate([b, a])
        both_ids = np.concatenate([ids, ids])
        order = np.argsort(owners * np.int64(num_nodes) + targets, kind="stable")

        self.num_nodes = int(num_nodes)
        self.csr_targets = targets[order]
        self.edge_ids = both_ids[order]
        counts = np.bincount(owners, minlength=num_nodes)
        self.csr_offsets = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        self.csr_owners = np.repeat(np.arange(num_nodes, dtype=np.int64), counts)
        self.features = feats
        self.num_edges = m
        self._target_order = None

    @property
    def csr_target_order(self) -> np.ndarray:
        """Cached stable argsort of csr_targets (reused by backward scatters)."""
        if self._target_order is None:
            self._target_order = np.argsort(self.csr_targets, kind="stable")
        return self._target_order

    @property
    def num_directed_edges(self) -> int:
        return int(self.csr_targets.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    def degrees(self) -> np.ndarray:
        return np.diff(self.csr_offsets)

    def undirected_edges(self) -> np.ndarray:
        """The m x 2 canonical (min, max) edge list, row k = edge_id k."""
        keep = self.csr_owners < self.csr_targets
        pairs = np.stack([self.csr_owners[keep], self.csr_targets[keep]], axis=1)
        return pairs[np.argsort(self.edge_ids[keep])]

    def has_edge(self, a: int, b: int) -> bool:
        lo, hi = self.csr_offsets[a], self.csr_offsets[a + 1]
        return bool(np.isin(b, self.csr_targets[lo:hi]).item())

    def dense_adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        a[self.csr_owners, self.csr_targets] = 1.0
        return a


@dataclass
class NormalizedAdjacency:
    """Per-CSR-entry aggregation coefficients, plus self coefficients.

    With self-loops enabled these are the entries of
    D̃^{-1/2} (A + I) D̃^{-1/2}: entry (i, j) gets 1/sqrt((d_i+1)(d_j+1))
    and the self term 1/(d_i+1).  Without self-loops the shift is 0 and
    ``self_coeffs`` is None.
    """

    entry_coeffs: np.ndarray
    self_coeffs: np.ndarray | None


def normalized_adjacency(g: Graph, add_self_loops: bool = True) -> NormalizedAdjacency:
    deg = g.degrees().astype(np.float64)
    shift = 1.0 if add_self_loops else 0.0
    d = deg + shift
    inv_sqrt = np.zeros_like(d)
    nz = d > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(d[nz])
    entry = inv_sqrt[g.csr_owners] * inv_sqrt[g.csr_targets]
    self_coeffs = None
    if add_self_loops:
        self_coeffs = inv_sqrt * inv_sqrt
    return NormalizedAdjacency(entry_coeffs=entry, self_coeffs=self_coeffs)


def disjoint_union(graphs: list[Graph]) -> tuple[Graph, np.ndarray]:
    """Stack graphs block-diagonally.

    Returns the batched graph and an offset table of length len(graphs)+1;
    nodes of source graph k occupy [offsets[k], offsets[k+1]).  Edge ids
    are re-derived over the union and stay unique across the batch.
    """
    if not graphs:
        raise ValueError("disjoint_union: need at least one graph")
    dim = graphs[0].feature_dim
    for g in graphs:
        if g.feature_dim != dim:
            raise ShapeError(
                f"disjoint_union: feature dims differ, {g.feature_dim} vs {dim}"
            )
    sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    offsets = np.concatenate(([0], np.cumsum(sizes)))
    edge_blocks = [g.undirected_edges() + offsets[k] for k, g in enumerate(graphs)]
    edges = np.concatenate(edge_blocks) if edge_blocks else np.zeros((0, 2), np.int64)
    features = np.concatenate([g.features for g in graphs], axis=0)
    return Graph(int(offsets[-1]), edges, features), offsets


def membership_from_offsets(offsets: np.ndarray) -> np.ndarray:
    """Node -> source-graph table for a disjoint union."""
    sizes = np.diff(offsets)
    return np.repeat(np.arange(sizes.shape[0], dtype=np.int64), sizes)
