"""Partitioning a global graph into client subgraphs with preserved cross-client edges."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import ConfigError, PartitionError
from ..numkit import RngStream
from .graph import Graph

FRACTION_CLAMP = (0.05, 1.0)


@dataclass
class PartitionSpec:
    """How to draw per-client node sets.

    Each client samples a fraction of the global nodes drawn from
    Normal(mean_fraction, fraction_variance), clamped to [0.05, 1]. Client
    node sets may overlap; overlapping copies are treated as distinct nodes.
    In noniid mode a client only samples nodes from a random subset of
    classes.
    """

    num_clients: int
    mean_fraction: float = 0.8
    fraction_variance: float = 0.1
    mode: str = "iid"
    noniid_classes_per_client: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1")
        if not (0.0 < self.mean_fraction <= 1.0):
            raise ConfigError("mean_fraction must lie in (0, 1]")
        if self.fraction_variance < 0.0:
            raise ConfigError("fraction_variance must be >= 0")
        if self.mode not in ("iid", "noniid"):
            raise ConfigError(f"unknown partition mode {self.mode!r}")
        if self.mode == "noniid" and self.noniid_classes_per_client < 1:
            raise ConfigError("noniid_classes_per_client must be >= 1")


@dataclass(eq=False)
class ClientGraph:
    """One client's share of the graph.

    Internal edges live in a local CSR; edges whose far end is owned by
    another client are kept as boundary references (owning client, global
    node id) together with the Q weight computed from global degrees and the
    remote node's d~. `incoming` registers, per requesting client, which of
    our nodes they are entitled to ask for, as (our gid, their gid) pairs.
    """

    client_id: int
    global_ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    labeled_mask: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    int_indptr: np.ndarray
    int_indices: np.ndarray
    int_qw: np.ndarray
    d_tilde: np.ndarray
    bnd_indptr: np.ndarray
    bnd_client: np.ndarray
    bnd_gid: np.ndarray
    bnd_qw: np.ndarray
    bnd_remote_dtilde: np.ndarray
    incoming: dict[int, np.ndarray] = field(default_factory=dict)
    _internal_q: sp.csr_matrix = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.global_ids)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def internal_degrees(self) -> np.ndarray:
        return np.diff(self.int_indptr)

    def boundary_degrees(self) -> np.ndarray:
        return np.diff(self.bnd_indptr)

    def neighbor_counts(self) -> np.ndarray:
        """Full neighbor count per node (internal + boundary, no self-loop)."""
        return self.internal_degrees() + self.boundary_degrees()

    def train_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.train_mask & self.labeled_mask)

    def local_index(self) -> dict[int, int]:
        return {int(g): i for i, g in enumerate(self.global_ids)}

    def internal_q(self) -> sp.csr_matrix:
        """Normalized adjacency over internal edges plus self-loops.

        Weights use the global d~, so this is the restriction of the global
        normalized adjacency to this client's nodes.
        """
        if self._internal_q is None:
            q_edges = sp.csr_matrix(
                (self.int_qw, self.int_indices, self.int_indptr),
                shape=(self.n, self.n),
            )
            q = q_edges + sp.diags(1.0 / self.d_tilde)
            q = q.tocsr()
            q.sort_indices()
            self._internal_q = q
        return self._internal_q


def _gather_rows(indptr: np.ndarray, indices: np.ndarray, rows: np.ndarray):
    """Flatten the CSR rows `rows` into (src_repeated, dst, counts)."""
    starts = indptr[rows]
    counts = indptr[rows + 1] - starts
    total = int(counts.sum())
    if total == 0:
        return (np.zeros(0, dtype=np.int64),) * 2 + (counts,)
    # positions of each row's slice inside the flat output
    out_off = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum(counts, out=out_off[1:])
    flat = np.empty(total, dtype=np.int64)
    shift = np.repeat(starts - out_off[:-1], counts)
    flat = np.arange(total, dtype=np.int64) + shift
    dst = indices[flat]
    src = np.repeat(rows, counts)
    return src, dst, counts


def partition(g: Graph, spec: PartitionSpec, assignments=None) -> list[ClientGraph]:
    """Split a graph into overlapping client subgraphs.

    `assignments` forces explicit node sets (one array per client) and is
    meant for tests; otherwise sets are drawn per the spec. Nodes owned by no
    client are dropped together with their edges, and all Q weights are
    computed from degrees of the resulting effective graph. Boundary edges
    are routed to the lowest-id owner of the far end.
    """
    c = spec.num_clients
    rng = RngStream(spec.seed).substream("partition")
    if assignments is not None:
        if len(assignments) != c:
            raise PartitionError("assignments count != num_clients")
        node_sets = [np.unique(np.asarray(a, dtype=np.int64)) for a in assignments]
    else:
        node_sets = []
        sigma = math.sqrt(spec.fraction_variance)
        for i in range(c):
            frac = float(rng.substream("fraction", i).normal(spec.mean_fraction, sigma))
            frac = min(max(frac, FRACTION_CLAMP[0]), FRACTION_CLAMP[1])
            if spec.mode == "noniid":
                k = min(spec.noniid_classes_per_client, g.num_classes)
                classes = rng.substream("classes", i).choice(g.num_classes, size=k, replace=False)
                pool = np.flatnonzero(np.isin(g.labels, classes))
            else:
                pool = np.arange(g.n)
            size = min(max(int(math.ceil(frac * g.n)), 1), len(pool))
            chosen = rng.substream("nodes", i).choice(pool, size=size, replace=False)
            node_sets.append(np.sort(chosen))

    member = np.zeros((c, g.n), dtype=bool)
    for i, nodes in enumerate(node_sets):
        if len(nodes) and (nodes.min() < 0 or nodes.max() >= g.n):
            raise PartitionError(f"client {i} references nodes outside the graph")
        member[i, nodes] = True
    owned_any = member.any(axis=0)

    # effective degrees: neighbors owned by at least one client
    src_all = np.repeat(np.arange(g.n), np.diff(g.indptr))
    live = owned_any[src_all] & owned_any[g.indices]
    eff_deg = np.bincount(src_all[live], minlength=g.n)
    d_tilde_g = (eff_deg + 1).astype(np.float64)

    owner = np.full(g.n, -1, dtype=np.int64)
    for i in range(c - 1, -1, -1):  # lowest client id wins
        owner[node_sets[i]] = i

    incoming_pairs: list[dict[int, list]] = [dict() for _ in range(c)]
    clients: list[ClientGraph] = []
    for i in range(c):
        nodes = node_sets[i]
        n_local = len(nodes)
        lidx = np.full(g.n, -1, dtype=np.int64)
        lidx[nodes] = np.arange(n_local)
        src, dst, _ = _gather_rows(g.indptr, g.indices, nodes)
        in_set = member[i]
        is_int = in_set[dst]
        is_bnd = (~is_int) & (owner[dst] >= 0)

        int_src_l = lidx[src[is_int]]
        int_counts = np.bincount(int_src_l, minlength=n_local)
        int_indptr = np.zeros(n_local + 1, dtype=np.int64)
        np.cumsum(int_counts, out=int_indptr[1:])
        int_indices = lidx[dst[is_int]]
        int_qw = 1.0 / np.sqrt(d_tilde_g[src[is_int]] * d_tilde_g[dst[is_int]])

        bnd_src_l = lidx[src[is_bnd]]
        bnd_counts = np.bincount(bnd_src_l, minlength=n_local)
        bnd_indptr = np.zeros(n_local + 1, dtype=np.int64)
        np.cumsum(bnd_counts, out=bnd_indptr[1:])
        bnd_dst = dst[is_bnd]
        bnd_client = owner[bnd_dst]
        bnd_qw = 1.0 / np.sqrt(d_tilde_g[src[is_bnd]] * d_tilde_g[bnd_dst])
        for j, u, v in zip(bnd_client, bnd_dst, src[is_bnd]):
            incoming_pairs[j].setdefault(i, []).append((int(u), int(v)))

        cg = ClientGraph(
            client_id=i,
            global_ids=nodes.copy(),
            features=np.ascontiguousarray(g.features[nodes]),
            labels=g.labels[nodes].copy(),
            num_classes=g.num_classes,
            labeled_mask=g.labeled_mask[nodes].copy(),
            train_mask=g.train_mask[nodes].copy(),
            val_mask=g.val_mask[nodes].copy(),
            test_mask=g.test_mask[nodes].copy(),
            int_indptr=int_indptr,
            int_indices=int_indices,
            int_qw=int_qw,
            d_tilde=d_tilde_g[nodes].copy(),
            bnd_indptr=bnd_indptr,
            bnd_client=bnd_client.astype(np.int64),
            bnd_gid=bnd_dst.astype(np.int64),
            bnd_qw=bnd_qw,
            bnd_remote_dtilde=d_tilde_g[bnd_dst].copy(),
        )
        clients.append(cg)

    for j in range(c):
        clients[j].incoming = {
            req: np.unique(np.array(pairs, dtype=np.int64), axis=0)
            for req, pairs in sorted(incoming_pairs[j].items())
        }

    for i, cg in enumerate(clients):
        if len(cg.train_nodes()) == 0:
            raise PartitionError(
                f"client {i} has no labeled training nodes; retry with a new seed"
            )
    return clients
