import numpy as np
import pytest

from simba import tensor as T
from simba.errors import DomainError, ShapeError, ValidationError
from simba.tensor import Tensor


def test_pointwise_conv2d_sum_of_ones():
    x = Tensor(np.ones((1, 2, 1, 1)))
    w = Tensor([[1.0, 1.0]])
    b = Tensor([0.0])
    out = T.pointwise_conv2d(x, w, b)
    assert out.shape == (1, 1, 1, 1)
    assert out.data.ravel()[0] == 2.0


def test_pointwise_conv2d_identity():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(2, 3, 4, 5)))
    out = T.pointwise_conv2d(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))
    np.testing.assert_array_equal(out.data, x.data)


def test_pointwise_conv2d_matches_triple_loop():
    rng = np.random.default_rng(7)
    n, cin, t, v, cout = 2, 3, 4, 5, 6
    x = rng.normal(size=(n, cin, t, v))
    w = rng.normal(size=(cout, cin))
    b = rng.normal(size=cout)
    out = T.pointwise_conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    ref = np.empty((n, cout, t, v))
    for ni in range(n):
        for o in range(cout):
            for ti in range(t):
                for vi in range(v):
                    acc = b[o]
                    for i in range(cin):
                        acc += w[o, i] * x[ni, i, ti, vi]
                    ref[ni, o, ti, vi] = acc
    assert np.max(np.abs(out - ref)) <= 1e-12


def test_pointwise_conv2d_shape_error_names_both_shapes():
    x = Tensor(np.zeros((1, 3, 2, 2)))
    w = Tensor(np.zeros((4, 5)))
    with pytest.raises(ShapeError, match=r"\(1, 3, 2, 2\).*\(4, 5\)"):
        T.pointwise_conv2d(x, w, Tensor(np.zeros(4)))


def test_batchnorm_eval_constant_input_is_zeroed():
    const = np.array([2.0, -1.0, 0.5])
    x = Tensor(np.broadcast_to(const[None, :, None, None], (2, 3, 4, 5)).copy())
    gamma, beta = Tensor(np.ones(3)), Tensor(np.zeros(3))
    out = T.batch_norm2d(x, gamma, beta, const.copy(), np.ones(3), training=False, eps=0.0)
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_batchnorm_train_normalizes_per_channel():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(2.0, 3.0, size=(4, 3, 5, 6)))
    out = T.batch_norm2d(x, Tensor(np.ones(3)), Tensor(np.zeros(3)),
                         np.zeros(3), np.ones(3), training=True, eps=0.0)
    mean = out.data.mean(axis=(0, 2, 3))
    var = out.data.var(axis=(0, 2, 3))
    np.testing.assert_allclose(mean, 0.0, atol=1e-6)
    np.testing.assert_allclose(var, 1.0, atol=1e-6)


def test_batchnorm_affine_applies_after_normalization():
    rng = np.random.default_rng(4)
    x = Tensor(rng.normal(size=(2, 3, 4, 5)))
    plain = T.batch_norm2d(x, Tensor(np.ones(3)), Tensor(np.zeros(3)),
                           np.zeros(3), np.ones(3), training=True)
    scaled = T.batch_norm2d(x, Tensor(np.full(3, 2.0)), Tensor(np.full(3, 3.0)),
                            np.zeros(3), np.ones(3), training=True)
    np.testing.assert_allclose(scaled.data, 2.0 * plain.data + 3.0, atol=1e-12)


def test_batchnorm_degenerate_batch_rejected():
    x = Tensor(np.zeros((1, 3, 1, 1)))
    with pytest.raises(DomainError):
        T.batch_norm2d(x, Tensor(np.ones(3)), Tensor(np.zeros(3)),
                       np.zeros(3), np.ones(3), training=True)


def test_batchnorm_running_stats_update():
    rng = np.random.default_rng(5)
    x = rng.normal(1.5, 2.0, size=(4, 2, 3, 3))
    rm, rv = np.zeros(2), np.ones(2)
    T.batch_norm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                   rm, rv, training=True, momentum=0.1)
    count = 4 * 3 * 3
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)), atol=1e-12)
    np.testing.assert_allclose(
        rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * count / (count - 1), atol=1e-12)


def test_rmsnorm_hand_values():
    out = T.rms_norm(Tensor([3.0, 4.0]), Tensor([1.0, 1.0]), eps=0.0)
    np.testing.assert_allclose(out.data, np.array([3.0, 4.0]) / np.sqrt(12.5), atol=1e-12)
    assert abs(out.data[0] - 0.8485281374238570) < 1e-12
    assert abs(out.data[1] - 1.1313708498984762) < 1e-12


def test_rmsnorm_zero_input():
    out = T.rms_norm(Tensor(np.zeros((2, 3))), Tensor(np.ones(3)))
    np.testing.assert_array_equal(out.data, 0.0)


def test_rmsnorm_scale_invariance():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(4, 5))
    g = Tensor(rng.normal(size=5))
    base = T.rms_norm(Tensor(x), g, eps=0.0).data
    for alpha in (0.25, 3.0, 117.0):
        scaled = T.rms_norm(Tensor(alpha * x), g, eps=0.0).data
        assert np.max(np.abs(scaled - base)) <= 1e-12


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_square_analytic():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2).backward()


def test_backward_accumulates_without_zero_grad():
    x = Tensor([1.0, 2.0], requires_grad=True)
    (x * x).sum().backward()
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [4.0, 8.0])
    x.zero_grad()
    assert x.grad is None


def test_fanout_sums_both_contributions():
    # y = sum(x*a) + sum(x*b): two consumers of x must both contribute
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    a, b = Tensor([2.0, 2.0, 2.0]), Tensor([5.0, 5.0, 5.0])
    ((x * a).sum() + (x * b).sum()).backward()
    np.testing.assert_array_equal(x.grad, [7.0, 7.0, 7.0])


def test_grads_finite_after_full_backward():
    rng = np.random.default_rng(8)
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    loss = T.cross_entropy_logits(T.silu(x @ w), np.array([0, 1, 0]))
    loss.backward()
    for leaf in (x, w):
        assert leaf.grad is not None and np.all(np.isfinite(leaf.grad))


def test_forward_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(21)
        x = Tensor(rng.normal(size=(2, 3, 4, 5)))
        w = Tensor(rng.normal(size=(6, 3)))
        b = Tensor(rng.normal(size=6))
        return T.softmax(T.pointwise_conv2d(x, w, b).mean(axis=(2, 3)), axis=1).data

    assert np.array_equal(run(), run())


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(9)
    probs = T.softmax(Tensor(rng.normal(size=(4, 7)) * 30), axis=1).data
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(probs >= 0)


def test_cross_entropy_uniform_logits():
    for k in (2, 5, 11):
        loss = T.cross_entropy_logits(Tensor(np.zeros((3, k))), np.zeros(3, dtype=int))
        assert abs(loss.item() - np.log(k)) < 1e-12


def test_cross_entropy_confident_logits():
    loss = T.cross_entropy_logits(Tensor([[10.0, -10.0]]), np.array([0]))
    assert abs(loss.item() - np.log1p(np.exp(-20.0))) < 1e-15
    assert abs(loss.item() - 2.061153618190204e-09) < 1e-15


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    rng = np.random.default_rng(10)
    logits = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    labels = np.array([1, 0, 4, 2])
    T.cross_entropy_logits(logits, labels).backward()
    expected = T.softmax(Tensor(logits.data), axis=1).data.copy()
    expected[np.arange(4), labels] -= 1.0
    np.testing.assert_allclose(logits.grad, expected / 4.0, atol=1e-12)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(ValidationError, match="label"):
        T.cross_entropy_logits(Tensor(np.zeros((2, 3))), np.array([0, 3]))


def test_softplus_linear_above_cutoff():
    x = Tensor([25.0, -3.0])
    out = T.softplus(x)
    assert out.data[0] == 25.0
    assert abs(out.data[1] - np.log1p(np.exp(-3.0))) < 1e-15


def test_relu_subgradient_at_zero_is_zero():
    x = Tensor([0.0, -1.0, 2.0], requires_grad=True)
    T.relu(x).sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_gather_and_scatter_add_roundtrip():
    x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
    idx = np.array([[1, 1, 0, 2], [2, 0, 0, 1], [0, 2, 1, 1]])
    out = T.gather(x, idx, axis=0)
    np.testing.assert_array_equal(out.data, np.take_along_axis(x.data, idx, axis=0))
    out.sum().backward()
    # each column's gradient counts how often the row was picked
    counts = np.zeros((3, 4))
    for col in range(4):
        for row in range(3):
            counts[idx[row, col], col] += 1
    np.testing.assert_array_equal(x.grad, counts)


def test_no_grad_suppresses_recording():
    x = Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        out = (x * 2).sum()
    assert not out.requires_grad
    assert out._parents == ()


def test_dtype_switch():
    T.set_default_dtype("float32")
    assert Tensor([1.0]).dtype == np.float32
    T.set_default_dtype("float64")
    assert Tensor([1.0]).dtype == np.float64
    with pytest.raises(ValidationError):
        T.set_default_dtype("int32")
