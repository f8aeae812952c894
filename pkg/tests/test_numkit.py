import numpy as np
import pytest

from fedgraph import numkit
from fedgraph.errors import NumericError, ShapeError, StateError
from fedgraph.numkit import (
    AdamState,
    RngStream,
    adam_step,
    finite_diff_grad,
    matmul,
    pca_fit,
    pca_project,
    relu,
    softmax_cross_entropy,
)


# ---------------------------------------------------------------- matmul

def test_matmul_identity():
    m = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    assert np.array_equal(matmul(np.eye(2), m), m)


def test_matmul_zeros():
    z = matmul(np.zeros((2, 3)), np.arange(12.0).reshape(3, 4))
    assert z.shape == (2, 4)
    assert np.all(z == 0.0)


def test_matmul_hand_case():
    out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [1.0]]))
    assert np.array_equal(out, np.array([[3.0], [7.0]]))


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(np.zeros((2, 3)), np.zeros((4, 2)))


def test_matmul_rejects_nonfinite():
    a = np.array([[np.inf, 1.0]])
    with pytest.raises(NumericError):
        matmul(a, np.ones((2, 1)))


def test_matmul_associativity():
    rng = RngStream(7)
    for _ in range(20):
        a = rng.normal(size=(4, 5))
        b = rng.normal(size=(5, 3))
        c = rng.normal(size=(3, 6))
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        denom = np.abs(left).max() + 1e-30
        assert np.abs(left - right).max() / denom < 1e-9


# ---------------------------------------------------------------- relu

def test_relu_cases():
    assert np.array_equal(relu(np.array([[-1.0, 2.0]])), np.array([[0.0, 2.0]]))
    assert np.array_equal(relu(np.zeros((2, 2))), np.zeros((2, 2)))
    pos = np.array([[0.5, 3.0], [1.0, 2.0]])
    assert np.array_equal(relu(pos), pos)


# ---------------------------------------------------------------- loss

def test_cross_entropy_uniform_logits():
    loss, grad = softmax_cross_entropy(np.zeros((4, 7)), np.array([0, 1, 2, 3]))
    assert abs(loss - np.log(7.0)) < 1e-12
    # gradient rows sum to zero
    assert np.abs(grad.sum(axis=1)).max() < 1e-12


def test_cross_entropy_saturated():
    logits = np.zeros((1, 3))
    logits[0, 2] = 50.0
    loss, grad = softmax_cross_entropy(logits, np.array([2]))
    assert loss < 1e-8
    assert np.abs(grad).max() < 1e-8


def test_cross_entropy_empty_batch():
    with pytest.raises(StateError):
        softmax_cross_entropy(np.zeros((0, 3)), np.array([], dtype=int))


def test_cross_entropy_grad_matches_finite_difference():
    rng = RngStream(13)
    logits = rng.normal(size=(3, 4))
    labels = np.array([1, 3, 0])
    _, grad = softmax_cross_entropy(logits, labels)

    def f(flat):
        loss, _ = softmax_cross_entropy(flat.reshape(3, 4), labels)
        return loss

    fd = finite_diff_grad(f, logits.ravel(), h=1e-6).reshape(3, 4)
    assert np.abs(fd - grad).max() < 1e-6


def test_cross_entropy_grad_a_hundred_random_instances():
    rng = RngStream(99)
    worst = 0.0
    for _ in range(100):
        b = int(rng.integers(1, 6))
        c = int(rng.integers(2, 7))
        logits = rng.normal(scale=2.0, size=(b, c))
        labels = rng.integers(0, c, size=b)
        _, grad = softmax_cross_entropy(logits, labels)

        def f(flat):
            loss, _ = softmax_cross_entropy(flat.reshape(b, c), labels)
            return loss

        fd = finite_diff_grad(f, logits.ravel(), h=1e-6).reshape(b, c)
        rel = np.abs(fd - grad).max() / (np.abs(grad).max() + 1e-12)
        worst = max(worst, rel)
    assert worst <= 1e-5


# ---------------------------------------------------------------- adam

def test_adam_first_step_closed_form():
    state = AdamState.for_param((1, 1), lr=0.01)
    p = adam_step(np.zeros((1, 1)), np.ones((1, 1)), state)
    # bias-corrected mhat/sqrt(vhat) = 1 on the first step
    assert abs(p[0, 0] + 0.01) < 1e-9
    assert state.t == 1


def test_adam_zero_grad_no_move():
    state = AdamState.for_param((2, 2), lr=0.1)
    p0 = np.full((2, 2), 3.0)
    p1 = adam_step(p0, np.zeros((2, 2)), state)
    assert np.array_equal(p0, p1)


def test_sgd_mode_exact():
    state = AdamState.for_param((1, 1), lr=0.1, sgd=True)
    p = adam_step(np.array([[1.0]]), np.array([[2.0]]), state)
    assert abs(p[0, 0] - 0.8) < 1e-15


def test_adam_shape_mismatch():
    state = AdamState.for_param((2, 2))
    with pytest.raises(ShapeError):
        adam_step(np.zeros((2, 2)), np.zeros((3, 2)), state)


def test_adam_t_strictly_increasing():
    state = AdamState.for_param((1,))
    p = np.zeros(1)
    seen = []
    for _ in range(5):
        p = adam_step(p, np.ones(1), state)
        seen.append(state.t)
    assert seen == [1, 2, 3, 4, 5]


# ---------------------------------------------------------------- finite differences

def test_finite_diff_quadratic():
    g = finite_diff_grad(lambda x: float(x[0] ** 2), np.array([1.0]), h=1e-5)
    assert abs(g[0] - 2.0) < 1e-8


def test_finite_diff_linear_exact():
    w = np.array([2.0, -3.0, 0.5])
    g = finite_diff_grad(lambda x: float(w @ x), np.zeros(3), h=1e-4)
    assert np.abs(g - w).max() < 1e-10


def test_finite_diff_sin():
    g = finite_diff_grad(lambda x: float(np.sin(x[0])), np.zeros(1), h=1e-5)
    assert abs(g[0] - 1.0) < 1e-9


# ---------------------------------------------------------------- rng

def test_rng_same_seed_same_million_draws():
    a = RngStream(1234).uniform(1_000_000)
    b = RngStream(1234).uniform(1_000_000)
    assert np.array_equal(a, b)


def test_rng_substreams_differ_and_are_stable():
    root = RngStream(5)
    s1 = root.substream("sampling", 0).uniform(16)
    s2 = root.substream("sampling", 1).uniform(16)
    s1_again = RngStream(5).substream("sampling", 0).uniform(16)
    assert not np.array_equal(s1, s2)
    assert np.array_equal(s1, s1_again)


def test_rng_substream_independent_of_parent_consumption():
    root = RngStream(5)
    child_before = root.substream("x").uniform(8)
    root.uniform(1000)
    child_after = root.substream("x").uniform(8)
    assert np.array_equal(child_before, child_after)


# ---------------------------------------------------------------- pca

def test_pca_rank_one_line():
    rng = RngStream(21)
    direction = np.array([1.0, 2.0, -2.0])
    direction /= np.linalg.norm(direction)
    ts = rng.normal(size=40)
    samples = np.outer(ts, direction)
    model = pca_fit(samples, 1)
    cos = abs(model.components[0] @ direction)
    assert cos > 1.0 - 1e-6


def test_pca_project_mean_is_zero():
    rng = RngStream(22)
    samples = rng.normal(size=(10, 4))
    model = pca_fit(samples, 2)
    z = pca_project(model, samples.mean(axis=0))
    assert np.abs(z).max() < 1e-9


def test_pca_project_unit_along_component():
    rng = RngStream(23)
    samples = rng.normal(size=(12, 5))
    model = pca_fit(samples, 3)
    z = pca_project(model, model.mean + model.components[0])
    assert abs(z[0] - 1.0) < 1e-8
    assert np.abs(z[1:]).max() < 1e-8


def test_pca_matches_eigendecomposition_oracle():
    rng = RngStream(24)
    samples = rng.normal(size=(10, 6)) @ np.diag([3.0, 2.0, 1.5, 1.0, 0.5, 0.2])
    k = 3
    model = pca_fit(samples, k)
    xc = samples - samples.mean(axis=0)
    cov = xc.T @ xc / (len(samples) - 1)
    evals = np.linalg.eigh(cov)[0][::-1]
    captured = np.array([c @ cov @ c for c in model.components])
    assert np.abs(captured - evals[:k]).max() < 1e-6


def test_pca_orthonormal_components():
    rng = RngStream(25)
    samples = rng.normal(size=(30, 8))
    model = pca_fit(samples, 5)
    gram = model.components @ model.components.T
    assert np.abs(gram - np.eye(5)).max() <= 1e-8


def test_pca_degenerate_all_identical():
    samples = np.tile(np.array([1.0, 2.0, 3.0]), (5, 1))
    model = pca_fit(samples, 2)
    assert np.all(model.components == 0.0)
    z = pca_project(model, np.array([9.0, 9.0, 9.0]))
    assert np.all(z == 0.0)


def test_pca_roundtrip_error_bounded_by_residual_variance():
    rng = RngStream(26)
    samples = rng.normal(size=(20, 6)) @ np.diag([4.0, 2.0, 1.0, 0.5, 0.3, 0.1])
    k = 2
    model = pca_fit(samples, k)
    xc = samples - model.mean
    recon = (xc @ model.components.T) @ model.components
    err = float(np.sum((xc - recon) ** 2) / (len(samples) - 1))
    cov = xc.T @ xc / (len(samples) - 1)
    resid = float(np.linalg.eigh(cov)[0][::-1][k:].sum())
    assert err <= resid + 1e-6


def test_pca_preconditions():
    with pytest.raises(StateError):
        pca_fit(np.zeros((1, 3)), 1)
    with pytest.raises(StateError):
        pca_fit(np.zeros((4, 3)), 4)
    model = pca_fit(np.random.default_rng(0).normal(size=(5, 3)), 2)
    with pytest.raises(ShapeError):
        pca_project(model, np.zeros(4))
