"""Self-contained numeric kernel: dense matrices, activations, loss, Adam,
PCA via power iteration, a finite-difference oracle, and seeded RNG streams.

Everything runs in 64-bit floats; gradient checks at 1e-5 tolerance are not
feasible in 32-bit.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError, StateError

# A "matrix" throughout the package is a 2-D C-contiguous float64 ndarray.
Matrix = np.ndarray


def as_matrix(data) -> Matrix:
    """Coerce nested lists / arrays to a 2-D float64 matrix."""
    m = np.ascontiguousarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Dense row-major product a @ b with explicit shape checking."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = a @ b
    if not np.isfinite(out).all():
        raise NumericError("matmul produced non-finite entries")
    return out


def relu(z: Matrix) -> Matrix:
    """Elementwise max(0, z)."""
    return np.maximum(np.asarray(z, dtype=np.float64), 0.0)


def softmax_cross_entropy(logits: Matrix, labels) -> tuple[float, Matrix]:
    """Mean softmax cross-entropy over a batch of logits.

    Args:
        logits: [B x C] raw scores.
        labels: length-B integer class indices, each < C.

    Returns:
        (loss, grad) where loss = (1/B) * sum(-log softmax[label]) and
        grad = (1/B) * (softmax - onehot), the exact gradient w.r.t. logits.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2:
        raise ShapeError("logits must be 2-D")
    n, c = z.shape
    if n < 1:
        raise StateError("empty batch")
    if y.shape != (n,):
        raise ShapeError(f"labels shape {y.shape} does not match batch {n}")
    if (y < 0).any() or (y >= c).any():
        raise ShapeError("label index out of range")
    shifted = z - z.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    p = expz / expz.sum(axis=1, keepdims=True)
    loss = float(-np.mean(np.log(p[np.arange(n), y] + 1e-300)))
    grad = p.copy()
    grad[np.arange(n), y] -= 1.0
    grad /= n
    if not np.isfinite(loss) or not np.isfinite(grad).all():
        raise NumericError("cross-entropy produced non-finite values")
    return loss, grad


def finite_diff_grad(f, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a 1-D vector."""
    if h <= 0:
        raise StateError("finite difference step must be positive")
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class AdamState:
    """Per-parameter optimizer state.

    With sgd=True the update degenerates to plain param - lr*grad, which is
    the bare gradient-descent weight rule; otherwise standard Adam with bias
    correction.
    """

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    sgd: bool = False

    @classmethod
    def for_param(cls, shape, lr: float = 0.01, beta1: float = 0.9,
                  beta2: float = 0.999, eps: float = 1e-8, sgd: bool = False) -> "AdamState":
        return cls(m=np.zeros(shape), v=np.zeros(shape), lr=lr,
                   beta1=beta1, beta2=beta2, eps=eps, sgd=sgd)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """One optimizer step; mutates `state`, returns the updated parameter."""
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape:
        raise ShapeError(f"grad shape {grad.shape} != param shape {param.shape}")
    if state.m.shape != param.shape:
        raise ShapeError(f"optimizer state shape {state.m.shape} != param shape {param.shape}")
    state.t += 1
    if state.sgd:
        out = param - state.lr * grad
    else:
        state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
        state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
        mhat = state.m / (1.0 - state.beta1 ** state.t)
        vhat = state.v / (1.0 - state.beta2 ** state.t)
        out = param - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    if not np.isfinite(out).all():
        raise NumericError("optimizer step produced non-finite parameters")
    return out


# ---------------------------------------------------------------------------
# Deterministic RNG streams


class RngStream:
    """Counter-based random stream with derivable, order-independent substreams.

    Built on Philox, so two streams created from the same seed produce
    identical draws on any platform. Substreams are derived from a text label
    plus integer indices; concurrent workers each own their substream and the
    overall run stays deterministic regardless of scheduling.
    """

    def __init__(self, seed: int, _key: bytes | None = None):
        self.seed = int(seed)
        if _key is None:
            _key = hashlib.blake2b(
                self.seed.to_bytes(16, "little", signed=True), digest_size=16
            ).digest()
        self._key = _key
        self.gen = np.random.Generator(
            np.random.Philox(key=int.from_bytes(_key, "little"))
        )

    def substream(self, label: str, *indices: int) -> "RngStream":
        material = self._key + label.encode("utf-8") + b"".join(
            int(i).to_bytes(8, "little", signed=True) for i in indices
        )
        return RngStream(self.seed, _key=hashlib.blake2b(material, digest_size=16).digest())

    # Thin wrappers over the numpy Generator for the common draw kinds.

    def uniform(self, size=None) -> np.ndarray:
        return self.gen.random(size)

    def normal(self, loc=0.0, scale=1.0, size=None) -> np.ndarray:
        return self.gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self.gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def choice(self, a, size=None, replace=True, p=None) -> np.ndarray:
        return self.gen.choice(a, size=size, replace=replace, p=p)

    def __repr__(self) -> str:  # pragma: no cover
        return f"RngStream(seed={self.seed}, key={self._key.hex()[:8]})"


# ---------------------------------------------------------------------------
# PCA via power iteration with deflation

PCA_TOL = 1e-10
PCA_MAX_ITERS = 1000


@dataclass
class PcaModel:
    """Linear projector onto the top-k principal directions.

    Component rows are orthonormal to 1e-8; directions with no variance in
    the fitted data are stored as zero rows so that projections onto them
    vanish.
    """

    mean: np.ndarray
    components: np.ndarray  # [k x d]
    k: int = field(default=0)

    def __post_init__(self):
        if self.k == 0:
            self.k = self.components.shape[0]


def pca_fit(samples, k: int) -> PcaModel:
    """Fit a k-component PCA by power iteration with deflation.

    Samples with no variance at all yield a zero-variance model whose
    projections are the zero vector.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("samples must form a 2-D array")
    n, d = x.shape
    if n < 2:
        raise StateError("PCA needs at least 2 samples")
    if k > min(n, d) or k < 1:
        raise StateError(f"k={k} must lie in [1, min(n={n}, d={d})]")
    mean = x.mean(axis=0)
    xc = x - mean
    components = np.zeros((k, d))
    scale = float(np.abs(xc).max())
    if scale == 0.0:
        return PcaModel(mean=mean, components=components, k=k)

    start_rng = RngStream(0x9C0FFEE)
    denom = max(n - 1, 1)
    top_eig = None
    for j in range(k):
        v = start_rng.substream("pca-start", j).normal(size=d)
        # keep the search inside the orthogonal complement of found components
        if j:
            v -= components[:j].T @ (components[:j] @ v)
        nrm = np.linalg.norm(v)
        if nrm == 0.0:
            break
        v /= nrm
        for _ in range(PCA_MAX_ITERS):
            w = xc.T @ (xc @ v) / denom
            if j:
                w -= components[:j].T @ (components[:j] @ w)
            nrm = np.linalg.norm(w)
            if nrm < 1e-300:
                v = None
                break
            w /= nrm
            if np.linalg.norm(w - v) < PCA_TOL or np.linalg.norm(w + v) < PCA_TOL:
                v = w
                break
            v = w
        if v is None:
            break
        eig = float(v @ (xc.T @ (xc @ v)) / denom)
        if top_eig is None:
            top_eig = eig
        if eig <= max(1e-14 * max(top_eig, 1.0), 0.0):
            break  # remaining directions carry no variance; leave zero rows
        # canonical sign: largest-magnitude coordinate is positive
        pivot = int(np.argmax(np.abs(v)))
        if v[pivot] < 0:
            v = -v
        components[j] = v
    return PcaModel(mean=mean, components=components, k=k)


def pca_project(model: PcaModel, x) -> np.ndarray:
    """Project a vector onto the fitted components: components @ (x - mean)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.mean.shape:
        raise ShapeError(f"vector dim {x.shape} != fitted dim {model.mean.shape}")
    return model.components @ (x - model.mean)
