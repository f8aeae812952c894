"""Client-side GCN: forward pass over a sampled plan, manual backprop, the
local training round, and full-neighborhood evaluation.

External contributions (rows served by other clients) are added as constants
at layers >= 2; no gradient ever crosses a client boundary.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CacheError, ConfigError, ExchangeError, ModelError, StateError
from .graphstore.graph import Graph, normalized_adjacency
from .graphstore.partition import ClientGraph
from .numkit import AdamState, RngStream, adam_step, relu, softmax_cross_entropy
from .sampler import LayerPlan


@dataclass
class GcnWeights:
    """Trainable feature weights, one matrix per aggregation step."""

    w: list[np.ndarray]

    @property
    def dims(self) -> list[tuple[int, int]]:
        return [m.shape for m in self.w]

    def copy(self) -> "GcnWeights":
        return GcnWeights([m.copy() for m in self.w])

    def flatten(self) -> np.ndarray:
        return np.concatenate([m.ravel() for m in self.w])

    @staticmethod
    def layer_dims(feature_dim: int, hidden_dim: int, num_classes: int,
                   num_layers: int) -> list[tuple[int, int]]:
        sizes = [feature_dim] + [hidden_dim] * (num_layers - 2) + [num_classes]
        return list(zip(sizes[:-1], sizes[1:]))

    @classmethod
    def init(cls, dims, rng: RngStream) -> "GcnWeights":
        mats = []
        for k, (din, dout) in enumerate(dims):
            lim = np.sqrt(6.0 / (din + dout))
            mats.append(rng.substream("glorot", k).uniform((din, dout)) * 2 * lim - lim)
        return cls(mats)


@dataclass
class TrainConfig:
    num_layers: int = 3
    hidden_dim: int = 16
    dropout: float = 0.5
    learning_rate: float = 0.01
    optimizer: str = "adam"
    local_iterations: int = 1
    reset_optimizer_each_round: bool = False

    def __post_init__(self):
        if self.num_layers < 2:
            raise ConfigError("need at least 2 GCN layers")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError("dropout must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.local_iterations < 0:
            raise ConfigError("local_iterations must be >= 0")


@dataclass
class ForwardTrace:
    """Values cached by forward for the exact backward pass."""

    plan: LayerPlan
    weights: GcnWeights
    inputs: list[np.ndarray]
    masks: list[np.ndarray | None]
    zs: list[np.ndarray]


def forward(plan: LayerPlan, cg: ClientGraph, weights: GcnWeights,
            ext: dict[int, np.ndarray] | None = None, *, train_mode: bool = False,
            dropout_rate: float = 0.0, rng: RngStream | None = None,
            strict: bool = True) -> tuple[np.ndarray, ForwardTrace]:
    """Run the sampled propagation stack; returns raw logits over the batch.

    `ext` maps layer number l (>= 2, or 1 in the all-share ablation) to the
    served rows h_j(u) W_j for that layer's external references, in the
    plan's reference order. Layer-1 externals contribute nothing unless
    explicitly provided. With strict=True a needed-but-missing layer raises.
    """
    ext = ext or {}
    steps = plan.num_layers - 1
    if len(weights.w) != steps:
        raise ModelError(f"{len(weights.w)} weight matrices for {steps} aggregation steps")
    h = cg.features[plan.layers[0].internal]
    inputs: list[np.ndarray] = []
    masks: list[np.ndarray | None] = []
    zs: list[np.ndarray] = []
    for s in range(steps):
        layer = s + 1
        if train_mode and dropout_rate > 0.0:
            keep = rng.substream("dropout", s).uniform(h.shape) >= dropout_rate
            mask = keep / (1.0 - dropout_rate)
            hd = h * mask
        else:
            mask = None
            hd = h
        z = plan.qt_int[s] @ (hd @ weights.w[s])
        nodes = plan.layers[s]
        if nodes.num_external and plan.qt_ext[s].nnz:
            rows = ext.get(layer)
            if rows is None:
                if strict and layer >= 2:
                    raise ExchangeError(
                        f"missing external rows: client {int(nodes.ext_client[0])}, "
                        f"layer {layer}, node {int(nodes.ext_gid[0])}")
                # layer-1 features never cross clients; the term is dropped
            else:
                if rows.shape != (nodes.num_external, weights.w[s].shape[1]):
                    raise ModelError(
                        f"external rows at layer {layer} have shape {rows.shape}, "
                        f"expected {(nodes.num_external, weights.w[s].shape[1])}")
                z = z + plan.qt_ext[s] @ rows
        inputs.append(hd)
        masks.append(mask)
        zs.append(z)
        h = relu(z) if s + 1 < steps else z
    return zs[-1], ForwardTrace(plan=plan, weights=weights, inputs=inputs,
                                masks=masks, zs=zs)


def backward(trace: ForwardTrace, logits_grad: np.ndarray) -> list[np.ndarray]:
    """Exact gradients of every weight matrix given dL/dlogits.

    External rows are constants, so nothing propagates across clients.
    """
    w = trace.weights.w
    grads: list[np.ndarray | None] = [None] * len(w)
    g = logits_grad
    for s in range(len(w) - 1, -1, -1):
        qtg = trace.plan.qt_int[s].T @ g
        grads[s] = trace.inputs[s].T @ qtg
        if s > 0:
            gh = qtg @ w[s].T
            if trace.masks[s] is not None:
                gh = gh * trace.masks[s]
            g = gh * (trace.zs[s - 1] > 0.0)
    return grads


# ---------------------------------------------------------------- training


@dataclass
class RoundStats:
    """Per-client resource usage over one round, consumed by the clock model."""

    losses: list[float] = field(default_factory=list)
    kappa: int = 0
    nodes: int = 0
    edges: int = 0
    values_received: int = 0

    @property
    def loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


def make_optimizer(weights: GcnWeights, cfg: TrainConfig) -> list[AdamState]:
    return [
        AdamState.for_param(m.shape, lr=cfg.learning_rate, sgd=cfg.optimizer == "sgd")
        for m in weights.w
    ]


def fetch_external(plan: LayerPlan, cg: ClientGraph, exchange,
                   ext_mode: str, stats: RoundStats | None = None) -> dict[int, np.ndarray]:
    """Collect served embedding rows for every external reference in the plan."""
    ext: dict[int, np.ndarray] = {}
    if ext_mode == "nonshare":
        return ext
    for s in range(plan.num_layers - 1):
        layer = s + 1
        nodes = plan.layers[s]
        if nodes.num_external == 0 or plan.qt_ext[s].nnz == 0:
            continue
        if layer == 1 and ext_mode != "allshare":
            continue
        rows = None
        # references are sorted by client, so per-client slices are contiguous
        for j in np.unique(nodes.ext_client):
            sel = np.flatnonzero(nodes.ext_client == j)
            got = exchange.fetch(cg.client_id, int(j), layer, nodes.ext_gid[sel])
            if rows is None:
                rows = np.empty((nodes.num_external, got.shape[1]))
            rows[sel] = got
        ext[layer] = rows
        if stats is not None:
            stats.values_received += rows.size
    return ext


def train_iteration(cg: ClientGraph, weights: GcnWeights, sampler_spec,
                    cfg: TrainConfig, exchange, rng: RngStream,
                    opt_states: list[AdamState], iteration: int,
                    stats: RoundStats, ext_mode: str = "share") -> GcnWeights:
    """One sampled mini-batch update; mutates stats and opt_states."""
    plan = sampler_spec.build(cg, rng.substream("plan", iteration))
    ext = fetch_external(plan, cg, exchange, ext_mode, stats)
    logits, trace = forward(
        plan, cg, weights, ext, train_mode=True, dropout_rate=cfg.dropout,
        rng=rng.substream("iter", iteration), strict=ext_mode != "nonshare")
    loss, dlogits = softmax_cross_entropy(logits, cg.labels[plan.batch])
    grads = backward(trace, dlogits)
    new_w = [adam_step(m, gr, st) for m, gr, st in zip(weights.w, grads, opt_states)]
    stats.losses.append(loss)
    stats.kappa = plan.kappa
    stats.edges += plan.edge_count()
    stats.nodes += plan.node_count()
    return GcnWeights(new_w)


def local_train_round(cg: ClientGraph, global_weights: GcnWeights, sampler_spec,
                      cfg: TrainConfig, exchange, rng: RngStream,
                      opt_states: list[AdamState] | None = None,
                      ext_mode: str = "share") -> tuple[GcnWeights, RoundStats]:
    """Initialize local weights from the global ones and run the configured
    number of sampled training iterations."""
    weights = global_weights.copy()
    if opt_states is None:
        opt_states = make_optimizer(weights, cfg)
    stats = RoundStats()
    if cfg.local_iterations == 0:
        stats.kappa = len(cg.train_nodes())
    for it in range(cfg.local_iterations):
        weights = train_iteration(cg, weights, sampler_spec, cfg, exchange, rng,
                                  opt_states, it, stats, ext_mode)
    return weights, stats


# ---------------------------------------------------------------- serving & eval


def serving_tables(cg: ClientGraph, weights: GcnWeights, max_layer: int,
                   include_layer1: bool = False):
    """Embedding-times-weight rows for every local node, per layer.

    Layer l rows are h^(l)(u) W^(l) computed over the client's full internal
    neighborhood, recursively down to the features, with dropout off. Returns
    (tables, edges_processed) where tables maps layer -> [n x d_{l+1}].
    """
    q = cg.internal_q()
    tables: dict[int, np.ndarray] = {}
    edges = 0
    if include_layer1:
        tables[1] = cg.features @ weights.w[0]
    h = cg.features
    for layer in range(2, max_layer + 1):
        h = relu(q @ (h @ weights.w[layer - 2]))
        edges += q.nnz
        tables[layer] = h @ weights.w[layer - 1]
    return tables, edges


def evaluate(g_or_cg, weights: GcnWeights, node_set, q=None) -> float:
    """Accuracy of argmax predictions from a full-neighborhood forward pass.

    Ties break toward the lowest class index. For a ClientGraph only internal
    edges participate (no exchange during evaluation).
    """
    node_set = np.asarray(node_set, dtype=np.int64)
    if node_set.size == 0:
        raise StateError("empty evaluation node set")
    if isinstance(g_or_cg, ClientGraph):
        qm = g_or_cg.internal_q()
        feats, labels = g_or_cg.features, g_or_cg.labels
    elif isinstance(g_or_cg, Graph):
        qm = (q if q is not None else normalized_adjacency(g_or_cg)).matrix
        feats, labels = g_or_cg.features, g_or_cg.labels
    else:
        raise ModelError(f"cannot evaluate on {type(g_or_cg)!r}")
    h = feats
    for s, m in enumerate(weights.w):
        z = qm @ (h @ m)
        h = relu(z) if s + 1 < len(weights.w) else z
    pred = np.argmax(h[node_set], axis=1)
    return float(np.mean(pred == labels[node_set]))


# ---------------------------------------------------------------- checkpoints

_WEIGHTS_MAGIC = b"FGWT"
_WEIGHTS_VERSION = 1


def save_weights(path: str, weights: GcnWeights) -> None:
    """Versioned binary checkpoint: layer dims then row-major float64 data."""
    with open(path, "wb") as fh:
        fh.write(_WEIGHTS_MAGIC)
        fh.write(struct.pack("<IH", _WEIGHTS_VERSION, len(weights.w)))
        for m in weights.w:
            fh.write(struct.pack("<QQ", *m.shape))
        for m in weights.w:
            fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def load_weights(path: str) -> GcnWeights:
    with open(path, "rb") as fh:
        if fh.read(4) != _WEIGHTS_MAGIC:
            raise CacheError(f"{path}: not a weight checkpoint")
        version, count = struct.unpack("<IH", fh.read(6))
        if version != _WEIGHTS_VERSION:
            raise CacheError(f"{path}: unsupported checkpoint version {version}")
        dims = [struct.unpack("<QQ", fh.read(16)) for _ in range(count)]
        mats = []
        for din, dout in dims:
            buf = fh.read(din * dout * 8)
            if len(buf) != din * dout * 8:
                raise CacheError(f"{path}: truncated checkpoint")
            mats.append(np.frombuffer(buf, dtype="<f8").reshape(din, dout).copy())
    return GcnWeights(mats)
