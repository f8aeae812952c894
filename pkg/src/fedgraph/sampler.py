"""Per-iteration sampled computation graphs.

A plan lists, per GCN layer, which nodes participate and the rescaled sparse
aggregation matrices between consecutive layers. Nodes owned by other
clients appear as tagged external references; their embeddings arrive
through the exchange broker at layers >= 2 and contribute nothing at
layer 1.

Aggregation matrices are stored as two CSR blocks per step: columns over
the layer's internal nodes and columns over its external references. Rows
cover the internal members of the upper layer (external references are
leaves and never aggregate locally).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, PlanError
from .graphstore.partition import ClientGraph
from .numkit import RngStream

_EMPTY = np.zeros(0, dtype=np.int64)


@dataclass
class SamplingPolicy:
    """Mini-batch size plus one neighbor-selection probability per layer.

    p[0] applies to the aggregation closest to the input features.
    """

    kappa: int
    p: tuple[float, ...]

    def __post_init__(self):
        self.p = tuple(float(x) for x in self.p)
        if self.kappa < 1:
            raise ConfigError("kappa must be >= 1")
        if any(not (0.0 < x <= 1.0) for x in self.p):
            raise ConfigError("selection probabilities must lie in (0, 1]")

    def build(self, cg: ClientGraph, rng: RngStream) -> "LayerPlan":
        return model_construct(cg, self, rng)


@dataclass
class BaselineConfig:
    """One of the three reference samplers.

    kind: full_batch | node_wise | layer_wise. Fanouts are listed
    batch-outward (first entry = the batch's immediate neighbors). kappa
    limits the mini-batch for node_wise/layer_wise; full_batch always uses
    every labeled training node.
    """

    kind: str
    fanouts: tuple[int, ...] = (25, 10)
    layer_size: int = 256
    kappa: int | None = None
    num_layers: int = 3

    def __post_init__(self):
        if self.kind not in ("full_batch", "node_wise", "layer_wise"):
            raise ConfigError(f"unknown baseline kind {self.kind!r}")
        if any(f < 1 for f in self.fanouts):
            raise ConfigError("fanouts must be positive")
        if self.layer_size < 1:
            raise ConfigError("layer_size must be >= 1")

    def build(self, cg: ClientGraph, rng: RngStream) -> "LayerPlan":
        if self.kind == "full_batch":
            return full_batch_plan(cg, num_layers=self.num_layers)
        if self.kind == "node_wise":
            return nodewise_plan(cg, self.fanouts, rng, batch_size=self.kappa)
        return layerwise_plan(cg, self.layer_size, rng,
                              batch_size=self.kappa, num_layers=self.num_layers)


@dataclass
class LayerNodes:
    internal: np.ndarray
    ext_client: np.ndarray = field(default_factory=lambda: _EMPTY.copy())
    ext_gid: np.ndarray = field(default_factory=lambda: _EMPTY.copy())

    @property
    def num_external(self) -> int:
        return len(self.ext_gid)


@dataclass
class LayerPlan:
    """Sampled computation graph: node sets per layer and scaled adjacency blocks.

    layers[0] is the input layer; layers[-1].internal is the mini-batch.
    qt_int[s] / qt_ext[s] aggregate layer s+1 from layer s (0-based), with
    rows ordered like layers[s+1].internal.
    """

    layers: list[LayerNodes]
    qt_int: list[sp.csr_matrix]
    qt_ext: list[sp.csr_matrix]
    kappa: int

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def batch(self) -> np.ndarray:
        return self.layers[-1].internal

    def edge_count(self) -> int:
        return int(sum(m.nnz for m in self.qt_int) + sum(m.nnz for m in self.qt_ext))

    def node_count(self) -> int:
        return int(sum(len(l.internal) + l.num_external for l in self.layers))


def _pools(cg: ClientGraph, rows: np.ndarray):
    """Per-row candidate arrays: self-loop, internal neighbors, boundary neighbors.

    Returns (off, cand_local, cand_client, cand_gid, cand_q) where off has
    len(rows)+1 entries delimiting each row's candidates; cand_local is -1
    for boundary candidates.
    """
    ideg = cg.int_indptr[rows + 1] - cg.int_indptr[rows]
    bdeg = cg.bnd_indptr[rows + 1] - cg.bnd_indptr[rows]
    counts = 1 + ideg + bdeg
    off = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum(counts, out=off[1:])
    total = int(off[-1])
    cand_local = np.empty(total, dtype=np.int64)
    cand_client = np.full(total, -1, dtype=np.int64)
    cand_gid = np.full(total, -1, dtype=np.int64)
    cand_q = np.empty(total, dtype=np.float64)

    # self-loop entries sit first in every row's slice
    cand_local[off[:-1]] = rows
    cand_q[off[:-1]] = 1.0 / cg.d_tilde[rows]

    if ideg.sum():
        dest = np.arange(int(ideg.sum()), dtype=np.int64)
        starts = np.zeros(len(rows), dtype=np.int64)
        np.cumsum(ideg[:-1], out=starts[1:])
        dest += np.repeat(off[:-1] + 1 - starts, ideg)
        src = np.arange(int(ideg.sum()), dtype=np.int64)
        src += np.repeat(cg.int_indptr[rows] - starts, ideg)
        cand_local[dest] = cg.int_indices[src]
        cand_q[dest] = cg.int_qw[src]

    if bdeg.sum():
        dest = np.arange(int(bdeg.sum()), dtype=np.int64)
        starts = np.zeros(len(rows), dtype=np.int64)
        np.cumsum(bdeg[:-1], out=starts[1:])
        dest += np.repeat(off[:-1] + 1 + ideg - starts, bdeg)
        src = np.arange(int(bdeg.sum()), dtype=np.int64)
        src += np.repeat(cg.bnd_indptr[rows] - starts, bdeg)
        cand_local[dest] = -1
        cand_client[dest] = cg.bnd_client[src]
        cand_gid[dest] = cg.bnd_gid[src]
        cand_q[dest] = cg.bnd_qw[src]

    return off, cand_local, cand_client, cand_gid, cand_q


def _pack_ext(client: np.ndarray, gid: np.ndarray) -> np.ndarray:
    return (client << 32) | gid


def _assemble_layer(rows, off, cand_local, cand_client, cand_gid, vals, sel):
    """Build (LayerNodes, qt_int, qt_ext) from a selection mask over candidates."""
    row_rep = np.repeat(np.arange(len(rows), dtype=np.int64),
                        np.diff(off))
    sel_int = sel & (cand_local >= 0)
    sel_ext = sel & (cand_local < 0)

    int_cols = cand_local[sel_int]
    uniq_int = np.unique(int_cols)
    qt_i = sp.csr_matrix(
        (vals[sel_int], (row_rep[sel_int], np.searchsorted(uniq_int, int_cols))),
        shape=(len(rows), len(uniq_int)),
    )
    packed = _pack_ext(cand_client[sel_ext], cand_gid[sel_ext])
    uniq_ext = np.unique(packed)
    qt_e = sp.csr_matrix(
        (vals[sel_ext], (row_rep[sel_ext], np.searchsorted(uniq_ext, packed))),
        shape=(len(rows), len(uniq_ext)),
    )
    nodes = LayerNodes(internal=uniq_int,
                       ext_client=(uniq_ext >> 32).astype(np.int64),
                       ext_gid=(uniq_ext & 0xFFFFFFFF).astype(np.int64))
    qt_i.sort_indices()
    qt_e.sort_indices()
    return nodes, qt_i, qt_e


def _empty_layer(n_rows: int):
    z = sp.csr_matrix((n_rows, 0))
    return LayerNodes(internal=_EMPTY.copy()), z, z


def _pick_batch(cg: ClientGraph, size: int | None, rng: RngStream | None) -> np.ndarray:
    train = cg.train_nodes()
    if len(train) == 0:
        raise PlanError(f"client {cg.client_id} has no labeled training nodes")
    if size is None or size >= len(train):
        return train  # already sorted
    return np.sort(rng.choice(train, size=size, replace=False))


def model_construct(cg: ClientGraph, policy: SamplingPolicy, rng: RngStream) -> LayerPlan:
    """Probabilistic plan: mini-batch at the top, then per-layer neighbor draws.

    Each candidate neighbor (the self-loop included) is kept independently
    with probability p; a row whose draw comes up empty keeps one uniformly
    random candidate instead. Selected entries are rescaled by
    |pool| / |selected| so the aggregation stays an unbiased estimate of the
    unsampled one.
    """
    num_layers = len(policy.p) + 1
    batch = _pick_batch(cg, policy.kappa, rng.substream("batch"))
    layers = [LayerNodes(internal=batch)]
    qt_int: list[sp.csr_matrix] = []
    qt_ext: list[sp.csr_matrix] = []
    rows = batch
    for l in range(num_layers - 1, 0, -1):
        if len(rows) == 0:
            nodes, qi, qe = _empty_layer(0)
        else:
            p = policy.p[l - 1]
            layer_rng = rng.substream("layer", l)
            off, cand_local, cand_client, cand_gid, cand_q = _pools(cg, rows)
            counts = np.diff(off)
            # one uniform per candidate: raising p can only grow the selection
            sel = layer_rng.uniform(int(off[-1])) < p
            sel_counts = np.add.reduceat(sel, off[:-1])
            empty = np.flatnonzero(sel_counts == 0)
            if len(empty):
                u = layer_rng.uniform(len(empty))
                pick = off[empty] + np.minimum(
                    (u * counts[empty]).astype(np.int64), counts[empty] - 1)
                sel[pick] = True
                sel_counts[empty] = 1
            scale = counts.astype(np.float64) / sel_counts
            vals = cand_q * np.repeat(scale, counts)
            nodes, qi, qe = _assemble_layer(
                rows, off, cand_local, cand_client, cand_gid, vals, sel)
        layers.insert(0, nodes)
        qt_int.insert(0, qi)
        qt_ext.insert(0, qe)
        rows = nodes.internal
    return LayerPlan(layers=layers, qt_int=qt_int, qt_ext=qt_ext, kappa=len(batch))


def full_batch_plan(cg: ClientGraph, num_layers: int = 3) -> LayerPlan:
    """Unsampled plan: every labeled training node, every neighbor, Q unchanged.

    Deterministic; consumes no randomness.
    """
    batch = _pick_batch(cg, None, None)
    layers = [LayerNodes(internal=batch)]
    qt_int: list[sp.csr_matrix] = []
    qt_ext: list[sp.csr_matrix] = []
    rows = batch
    for _ in range(num_layers - 1):
        off, cand_local, cand_client, cand_gid, cand_q = _pools(cg, rows)
        sel = np.ones(int(off[-1]), dtype=bool)
        nodes, qi, qe = _assemble_layer(
            rows, off, cand_local, cand_client, cand_gid, cand_q, sel)
        layers.insert(0, nodes)
        qt_int.insert(0, qi)
        qt_ext.insert(0, qe)
        rows = nodes.internal
    return LayerPlan(layers=layers, qt_int=qt_int, qt_ext=qt_ext, kappa=len(batch))


def nodewise_plan(cg: ClientGraph, fanouts, rng: RngStream,
                  batch_size: int | None = None) -> LayerPlan:
    """Fixed-fanout neighbor sampling with the same |pool|/|selected| rescaling.

    Per node, min(fanout, pool size) candidates are drawn uniformly without
    replacement, so the rescaled aggregation is exactly unbiased.
    """
    fanouts = tuple(int(f) for f in fanouts)
    num_layers = len(fanouts) + 1
    batch = _pick_batch(cg, batch_size, rng.substream("batch"))
    layers = [LayerNodes(internal=batch)]
    qt_int: list[sp.csr_matrix] = []
    qt_ext: list[sp.csr_matrix] = []
    rows = batch
    for l in range(num_layers - 1, 0, -1):
        fanout = fanouts[num_layers - 1 - l]  # fanouts listed batch-outward
        if len(rows) == 0:
            nodes, qi, qe = _empty_layer(0)
        else:
            layer_rng = rng.substream("layer", l)
            off, cand_local, cand_client, cand_gid, cand_q = _pools(cg, rows)
            counts = np.diff(off)
            draws = layer_rng.uniform(int(off[-1]))
            sel = np.zeros(int(off[-1]), dtype=bool)
            sel_counts = np.minimum(counts, fanout)
            for k in range(len(rows)):
                seg = slice(off[k], off[k + 1])
                take = int(sel_counts[k])
                if take == counts[k]:
                    sel[seg] = True
                else:
                    local = np.argpartition(draws[seg], take)[:take]
                    sel[off[k] + local] = True
            scale = counts.astype(np.float64) / sel_counts
            vals = cand_q * np.repeat(scale, counts)
            nodes, qi, qe = _assemble_layer(
                rows, off, cand_local, cand_client, cand_gid, vals, sel)
        layers.insert(0, nodes)
        qt_int.insert(0, qi)
        qt_ext.insert(0, qe)
        rows = nodes.internal
    return LayerPlan(layers=layers, qt_int=qt_int, qt_ext=qt_ext, kappa=len(batch))


def layerwise_plan(cg: ClientGraph, layer_size: int, rng: RngStream,
                   batch_size: int | None = None, num_layers: int = 3) -> LayerPlan:
    """Degree-weighted independent node sampling per layer.

    Every layer below the batch draws `layer_size` nodes with replacement
    with probability proportional to d~, deduplicated into the layer's node
    set. Entries keep multiplicity in the importance weight
    count * Q(v,u) / (layer_size * q(u)) so the aggregation stays unbiased.
    Sampled nodes with no edge into the layer above are allowed and simply
    contribute nothing.
    """
    if layer_size < 1:
        raise ConfigError("layer_size must be >= 1")
    batch = _pick_batch(cg, batch_size, rng.substream("batch"))

    # sampling pool: all internal nodes, then all distinct boundary refs
    packed_bnd = np.unique(_pack_ext(cg.bnd_client, cg.bnd_gid))
    n_int = cg.n
    pool_dt = np.concatenate([cg.d_tilde, np.zeros(len(packed_bnd))])
    if len(packed_bnd):
        order = np.argsort(_pack_ext(cg.bnd_client, cg.bnd_gid), kind="stable")
        packed_sorted = _pack_ext(cg.bnd_client, cg.bnd_gid)[order]
        first = np.searchsorted(packed_sorted, packed_bnd)
        pool_dt[n_int:] = cg.bnd_remote_dtilde[order][first]
    probs = pool_dt / pool_dt.sum()

    layers = [LayerNodes(internal=batch)]
    qt_int: list[sp.csr_matrix] = []
    qt_ext: list[sp.csr_matrix] = []
    rows = batch
    for l in range(num_layers - 1, 0, -1):
        layer_rng = rng.substream("layer", l)
        draws = layer_rng.choice(len(probs), size=layer_size, replace=True, p=probs)
        mult = np.bincount(draws, minlength=len(probs))
        sampled_int = np.flatnonzero(mult[:n_int] > 0)
        sampled_ext_idx = np.flatnonzero(mult[n_int:] > 0)
        sampled_ext = packed_bnd[sampled_ext_idx]

        if len(rows) == 0:
            nodes, qi, qe = _empty_layer(0)
            nodes = LayerNodes(internal=sampled_int,
                               ext_client=(sampled_ext >> 32).astype(np.int64),
                               ext_gid=(sampled_ext & 0xFFFFFFFF).astype(np.int64))
            qi = sp.csr_matrix((0, len(sampled_int)))
            qe = sp.csr_matrix((0, len(sampled_ext)))
        else:
            off, cand_local, cand_client, cand_gid, cand_q = _pools(cg, rows)
            cand_pool = np.where(
                cand_local >= 0, cand_local,
                n_int + np.searchsorted(packed_bnd, _pack_ext(cand_client, cand_gid)))
            m = mult[cand_pool]
            sel = m > 0
            vals = np.zeros(len(cand_q))
            vals[sel] = m[sel] * cand_q[sel] / (layer_size * probs[cand_pool[sel]])
            row_rep = np.repeat(np.arange(len(rows), dtype=np.int64), np.diff(off))
            sel_int = sel & (cand_local >= 0)
            sel_ext = sel & (cand_local < 0)
            qi = sp.csr_matrix(
                (vals[sel_int],
                 (row_rep[sel_int], np.searchsorted(sampled_int, cand_local[sel_int]))),
                shape=(len(rows), len(sampled_int)))
            qe = sp.csr_matrix(
                (vals[sel_ext],
                 (row_rep[sel_ext],
                  np.searchsorted(sampled_ext, _pack_ext(cand_client[sel_ext],
                                                         cand_gid[sel_ext])))),
                shape=(len(rows), len(sampled_ext)))
            qi.sort_indices()
            qe.sort_indices()
            nodes = LayerNodes(internal=sampled_int,
                               ext_client=(sampled_ext >> 32).astype(np.int64),
                               ext_gid=(sampled_ext & 0xFFFFFFFF).astype(np.int64))
        layers.insert(0, nodes)
        qt_int.insert(0, qi)
        qt_ext.insert(0, qe)
        rows = nodes.internal
    return LayerPlan(layers=layers, qt_int=qt_int, qt_ext=qt_ext, kappa=len(batch))
