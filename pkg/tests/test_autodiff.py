import numpy as np
import pytest

from hiercase.autodiff import (
    Tensor,
    backward,
    bag_sum,
    concat,
    gather_rows,
    log_softmax,
    matmul,
    narrow,
    sigmoid,
    softmax_xent,
    tanh,
)


def _fd_check(build, tensors, eps=1e-6, tol=1e-6):
    """Finite-difference check of d(loss)/d(tensor) for each tensor."""
    loss = build()
    backward(loss)
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        fd = np.zeros_like(analytic).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(build().data)
            flat[i] = orig - eps
            down = float(build().data)
            flat[i] = orig
            fd[i] = (up - down) / (2 * eps)
        np.testing.assert_allclose(analytic.reshape(-1), fd, atol=tol, rtol=tol)


def _rng():
    return np.random.RandomState(7)


def test_add_mul_broadcast_backward():
    rng = _rng()
    a = Tensor(rng.randn(3, 4))
    b = Tensor(rng.randn(4))  # broadcasts over rows
    w = rng.randn(3, 4)

    def build():
        out = (a + b) * a + (1.0 - a) * 2.0
        return softmax_xent(out * w, np.zeros(3, dtype=int), np.ones(3))

    _fd_check(build, [a, b])


def test_matmul_backward_both_sides():
    rng = _rng()
    a = Tensor(rng.randn(2, 3))
    b = Tensor(rng.randn(3, 4))

    def build():
        return softmax_xent(matmul(a, b), np.array([1, 3]), np.ones(2))

    _fd_check(build, [a, b])


def test_sigmoid_tanh_backward_and_numpy_agreement():
    rng = _rng()
    x = Tensor(rng.randn(2, 5))

    def build():
        return softmax_xent(
            concat([sigmoid(x), tanh(x)], axis=1),
            np.array([0, 7]),
            np.ones(2),
        )

    _fd_check(build, [x])
    assert np.allclose(sigmoid(x).data, sigmoid(x.data))
    assert np.allclose(tanh(x).data, tanh(x.data))


def test_sigmoid_extreme_values_saturate_cleanly():
    x = np.array([-1e4, 1e4])
    out = sigmoid(x)
    assert out[0] == 0.0 and out[1] == 1.0


def test_narrow_backward():
    rng = _rng()
    x = Tensor(rng.randn(3, 6))

    def build():
        return softmax_xent(
            narrow(x, -1, 2, 3) * 1.5, np.array([0, 1, 2]), np.ones(3)
        )

    _fd_check(build, [x])


def test_gather_rows_accumulates_duplicates():
    rng = _rng()
    table = Tensor(rng.randn(4, 3))
    idx = np.array([1, 1, 3])

    def build():
        return softmax_xent(gather_rows(table, idx), np.array([0, 1, 2]),
                            np.ones(3))

    _fd_check(build, [table])


def test_bag_sum_forward_matches_loop():
    rng = _rng()
    table = Tensor(rng.randn(6, 4))
    flat = np.array([0, 2, 2, 5, 1, 3, 3])
    offsets = np.array([0, 3, 4, 7])
    out = bag_sum(table, flat, offsets)
    want = np.stack(
        [
            table.data[0] + table.data[2] + table.data[2],
            table.data[5],
            table.data[1] + table.data[3] + table.data[3],
        ]
    )
    np.testing.assert_allclose(out.data, want)

    def build():
        return softmax_xent(bag_sum(table, flat, offsets),
                            np.array([1, 0, 3]), np.ones(3))

    _fd_check(build, [table])


def test_bag_sum_rejects_empty_groups():
    table = Tensor(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        bag_sum(table, np.array([0]), np.array([0, 0, 1]))


def test_softmax_xent_matches_manual_nll():
    logits = Tensor(np.array([[1.0, 2.0, 0.5], [0.0, 0.0, 0.0]]))
    targets = np.array([1, 2])
    weights = np.array([1.0, 0.5])
    loss = softmax_xent(logits, targets, weights)
    probs = np.exp(log_softmax(logits.data, axis=1))
    want = -np.log(probs[0, 1]) * 1.0 + -np.log(probs[1, 2]) * 0.5
    assert np.isclose(float(loss.data), want)


def test_softmax_xent_zero_weight_rows_get_zero_grad():
    logits = Tensor(np.random.RandomState(0).randn(3, 4))
    loss = softmax_xent(logits, np.array([0, 1, 2]),
                        np.array([1.0, 0.0, 1.0]))
    backward(loss)
    assert np.all(logits.grad[1] == 0.0)
    assert np.any(logits.grad[0] != 0.0)


def test_uniform_logits_give_log_num_classes():
    logits = Tensor(np.zeros((4, 2)))
    loss = softmax_xent(logits, np.array([0, 1, 0, 1]), np.full(4, 0.25))
    assert np.isclose(float(loss.data), np.log(2.0))


def test_shared_buffer_accumulation_is_safe():
    # h = a + b hands the same gradient buffer to both parents; later
    # accumulation into one must not corrupt the other.
    a = Tensor(np.ones((2, 2)))
    b = Tensor(np.ones((2, 2)))
    h = a + b
    loss = softmax_xent(concat([h, a], axis=1), np.array([0, 1]), np.ones(2))
    backward(loss)
    assert not np.shares_memory(a.grad, b.grad)
    np.testing.assert_allclose(b.grad, h.grad)


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        backward(Tensor(np.zeros(3)))


def test_log_softmax_rows_sum_to_one():
    x = np.random.RandomState(3).randn(5, 7) * 10
    lp = log_softmax(x, axis=1)
    np.testing.assert_allclose(np.exp(lp).sum(axis=1), np.ones(5), atol=1e-12)


def test_xent_falls_as_correct_logit_margin_grows():
    targets = np.array([1])
    weights = np.ones(1)
    losses = []
    for margin in (-2.0, 0.0, 1.0, 3.0, 8.0):
        logits = Tensor(np.array([[0.0, margin, 0.0]]))
        losses.append(float(softmax_xent(logits, targets, weights).data))
    assert all(a > b for a, b in zip(losses, losses[1:]))
