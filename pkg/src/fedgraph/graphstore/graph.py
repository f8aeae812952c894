"""Global graph container, degree-normalized adjacency, and synthetic graphs."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import ShapeError
from ..numkit import RngStream


@dataclass(eq=False)
class Graph:
    """Undirected graph with node features, labels, and split masks.

    The adjacency is stored as symmetric CSR without self-loops; the
    self-loop only ever appears inside the normalized adjacency.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    labeled_mask: np.ndarray = field(default=None)
    train_mask: np.ndarray = field(default=None)
    val_mask: np.ndarray = field(default=None)
    test_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.labeled_mask is None:
            self.labeled_mask = np.ones(self.n, dtype=bool)
        for name in ("train_mask", "val_mask", "test_mask"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(self.n, dtype=bool))

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        """Number of undirected edges (half the stored directed entries)."""
        return len(self.indices) // 2

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]


def build_csr(n: int, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric dedup'd CSR (indptr, indices) from an array of undirected edges.

    Self-loops are dropped; duplicates are stored once per direction.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges):
        keep = edges[:, 0] != edges[:, 1]
        edges = edges[keep]
    if len(edges) == 0:
        return np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    both = np.concatenate([edges, edges[:, ::-1]])
    # dedupe directed pairs
    key = both[:, 0] * np.int64(n) + both[:, 1]
    order = np.argsort(key, kind="stable")
    key = key[order]
    uniq = np.ones(len(key), dtype=bool)
    uniq[1:] = key[1:] != key[:-1]
    src = key[uniq] // n
    dst = key[uniq] % n
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    indptr = np.cumsum(indptr)
    return indptr, dst.astype(np.int64)


@dataclass
class NormalizedAdjacency:
    """Symmetric degree-normalized adjacency with self-loops.

    matrix[v, u] = 1/sqrt(d~(v) d~(u)) for u adjacent to v or u == v,
    where d~ = degree + 1.
    """

    matrix: sp.csr_matrix
    d_tilde: np.ndarray


def normalized_adjacency(g: Graph) -> NormalizedAdjacency:
    adj = sp.csr_matrix(
        (np.ones(len(g.indices)), g.indices, g.indptr), shape=(g.n, g.n)
    )
    a_tilde = adj + sp.eye(g.n, format="csr")
    d_tilde = np.asarray(a_tilde.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(d_tilde)
    d_half = sp.diags(inv_sqrt)
    q = (d_half @ a_tilde @ d_half).tocsr()
    q.sort_indices()
    return NormalizedAdjacency(matrix=q, d_tilde=d_tilde)


def make_masks(g: Graph, ratios=(0.6, 0.2, 0.2), seed: int = 0) -> Graph:
    """Split labeled nodes into disjoint train/val/test masks in place."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ShapeError("split ratios must sum to 1")
    labeled = np.flatnonzero(g.labeled_mask)
    order = RngStream(seed).substream("masks").permutation(len(labeled))
    labeled = labeled[order]
    n_train = int(round(ratios[0] * len(labeled)))
    n_val = int(round(ratios[1] * len(labeled)))
    g.train_mask = np.zeros(g.n, dtype=bool)
    g.val_mask = np.zeros(g.n, dtype=bool)
    g.test_mask = np.zeros(g.n, dtype=bool)
    g.train_mask[labeled[:n_train]] = True
    g.val_mask[labeled[n_train:n_train + n_val]] = True
    g.test_mask[labeled[n_train + n_val:]] = True
    return g


def synth_sbm(blocks: int, nodes_per_block: int, p_in: float, p_out: float,
              feature_dim: int, seed: int, signal: float = 1.0,
              noise: float = 1.0, split_ratios=(0.6, 0.2, 0.2)) -> Graph:
    """Stochastic-block-model graph with one-hot block features plus noise.

    Labels are block ids. Features put `signal` into the block's coordinate
    (when feature_dim allows) on top of Gaussian noise scaled by `noise`.
    """
    if not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
        raise ShapeError("edge probabilities must lie in [0, 1]")
    n = blocks * nodes_per_block
    rng = RngStream(seed).substream("sbm")
    labels = np.repeat(np.arange(blocks), nodes_per_block).astype(np.int64)

    u = rng.substream("edges").uniform((n, n))
    prob = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    pick = np.triu(u < prob, k=1)
    src, dst = np.nonzero(pick)
    indptr, indices = build_csr(n, np.stack([src, dst], axis=1))

    feats = rng.substream("features").normal(scale=noise, size=(n, feature_dim))
    sig_dims = min(blocks, feature_dim)
    for b in range(sig_dims):
        feats[labels == b, b] += signal

    g = Graph(n=n, indptr=indptr, indices=indices,
              features=np.ascontiguousarray(feats), labels=labels,
              num_classes=blocks)
    make_masks(g, split_ratios, seed=seed)
    return g
