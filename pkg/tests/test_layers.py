import numpy as np
import pytest

from cgcn import layers as L
from cgcn.errors import (
    BatchTooSmall,
    DimensionMismatch,
    InvalidLabel,
    KernelLargerThanSequence,
    MissingCache,
    NonFiniteActivation,
)
from cgcn.gradcheck import LAYERS, THRESHOLD, run_gradcheck

P3 = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)


# spatial convolution


def test_spatial_identity(rng):
    x = rng.normal(size=(2, 3, 4, 5))
    np.testing.assert_array_equal(L.spatial_conv(x, np.eye(5), np.eye(3)), x)


def test_spatial_zero_input(rng):
    out = L.spatial_conv(np.zeros((2, 3, 4, 5)), rng.normal(size=(5, 5)), rng.normal(size=(3, 2)))
    assert out.shape == (2, 2, 4, 5) and not out.any()


def test_spatial_dense_oracle(rng):
    c = P3 + np.eye(3) + 0.3
    x = rng.normal(size=(2, 4, 5, 3))
    theta = rng.normal(size=(4, 6))
    out = L.spatial_conv(x, c, theta)
    for b in range(2):
        for t in range(5):
            xs = x[b, :, t, :].T  # joints x channels
            np.testing.assert_allclose(out[b, :, t, :].T, (c @ xs) @ theta, atol=1e-12)


def test_spatial_errors(rng):
    x = rng.normal(size=(1, 2, 3, 4))
    with pytest.raises(DimensionMismatch):
        L.spatial_conv(x, np.eye(3), np.eye(2))
    with pytest.raises(DimensionMismatch):
        L.spatial_conv(x, np.eye(4), np.eye(3))
    with pytest.raises(NonFiniteActivation):
        L.spatial_conv(np.full((1, 2, 3, 4), 1e308), np.full((4, 4), 10.0), np.eye(2))
    with pytest.raises(MissingCache):
        L.spatial_conv_backward(np.zeros((1, 2, 3, 4)), None)


def test_spatial_backward_zero_and_scalar(rng):
    x = rng.normal(size=(2, 3, 4, 5))
    _, cache = L.spatial_conv_forward(x, np.eye(5), rng.normal(size=(3, 2)))
    dx, dth = L.spatial_conv_backward(np.zeros((2, 2, 4, 5)), cache)
    assert not dx.any() and not dth.any()
    # N = C = 1: z = c * x * theta
    x1 = np.array([[[[2.0]]]])
    _, cache = L.spatial_conv_forward(x1, np.array([[3.0]]), np.array([[5.0]]))
    dx, dth = L.spatial_conv_backward(np.array([[[[1.0]]]]), cache)
    assert dx.item() == 15.0 and dth.item() == 6.0


def test_spatial_backward_formula(rng):
    c = rng.normal(size=(4, 4))
    x = rng.normal(size=(2, 3, 5, 4))
    theta = rng.normal(size=(3, 2))
    g = rng.normal(size=(2, 2, 5, 4))
    _, cache = L.spatial_conv_forward(x, c, theta)
    dx, dth = L.spatial_conv_backward(g, cache)
    want_th = sum((c @ x[b, :, t].T).T @ g[b, :, t].T for b in range(2) for t in range(5))
    np.testing.assert_allclose(dth, want_th, atol=1e-12)
    for b in range(2):
        for t in range(5):
            np.testing.assert_allclose(dx[b, :, t].T, c.T @ g[b, :, t].T @ theta.T, atol=1e-12)


# temporal convolution


def naive_temporal(x, w, stride):
    b, cin, t, n = x.shape
    cout, _, k = w.shape
    left = (k - 1) // 2
    t_out = -(-t // stride)
    out = np.zeros((b, cout, t_out, n))
    for o in range(t_out):
        for j in range(k):
            src = o * stride + j - left
            if 0 <= src < t:
                out[:, :, o, :] += np.einsum("oc,bcn->bon", w[:, :, j], x[:, :, src, :])
    return out


def test_temporal_identity(rng):
    x = rng.normal(size=(2, 3, 6, 4))
    np.testing.assert_array_equal(L.temporal_conv(x, np.array([1.0])), x)


def test_temporal_constant_interior():
    x = np.full((1, 2, 10, 3), 4.0)
    out = L.temporal_conv(x, np.full(5, 0.2))
    np.testing.assert_allclose(out[:, :, 2:-2], 4.0, atol=1e-14)


@pytest.mark.parametrize("k,stride", [(1, 1), (3, 1), (4, 1), (5, 2), (2, 2), (7, 1)])
def test_temporal_naive_oracle(rng, k, stride):
    x = rng.normal(size=(2, 3, 9, 4))
    w = rng.normal(size=(5, 3, k))
    out = L.temporal_conv(x, w, stride)
    assert out.shape == (2, 5, -(-9 // stride), 4)
    np.testing.assert_allclose(out, naive_temporal(x, w, stride), rtol=0, atol=1e-12)


def test_temporal_kernel_too_long(rng):
    with pytest.raises(KernelLargerThanSequence):
        L.temporal_conv(rng.normal(size=(1, 1, 3, 2)), np.ones(4))


# batch normalization


def test_batch_norm_train_moments(rng):
    x = rng.normal(3.0, 5.0, size=(4, 3, 6, 5))
    c = 3
    out = L.batch_norm(x, np.ones(c), np.zeros(c), np.zeros(c), np.ones(c), "train")
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-6)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-5)


def test_batch_norm_constant_channel():
    x = np.full((2, 1, 3, 4), 7.0)
    out = L.batch_norm(x, np.ones(1), np.zeros(1), np.zeros(1), np.ones(1), "train")
    assert not out.any()


def test_batch_norm_running_stats(rng):
    x = rng.normal(2.0, 3.0, size=(3, 2, 4, 5))
    rm, rv = np.zeros(2), np.ones(2)
    L.batch_norm(x, np.ones(2), np.zeros(2), rm, rv, "train")
    m = x.shape[0] * x.shape[2] * x.shape[3]
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * m / (m - 1))


def test_batch_norm_eval(rng):
    x = rng.normal(size=(1, 2, 3, 4))
    rm, rv = np.array([1.0, -1.0]), np.array([4.0, 0.25])
    before = rm.copy(), rv.copy()
    a = L.batch_norm(x, np.ones(2), np.zeros(2), rm, rv, "eval")
    b = L.batch_norm(x, np.ones(2), np.zeros(2), rm, rv, "eval")
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(rm, before[0])
    np.testing.assert_array_equal(rv, before[1])
    np.testing.assert_allclose(a[0, 0], (x[0, 0] - 1) / np.sqrt(4 + 1e-5))


def test_batch_norm_needs_two(rng):
    with pytest.raises(BatchTooSmall):
        L.batch_norm(rng.normal(size=(1, 2, 3, 4)), np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), "train")


# pointwise layers


def test_relu_softmax_pool_examples():
    np.testing.assert_array_equal(L.relu(np.array([-1.0, 2.0])), [0, 2])
    np.testing.assert_array_equal(L.softmax(np.array([0.0, 0.0])), [0.5, 0.5])
    pooled = L.global_average_pool(np.full((2, 3, 4, 5), 1.5))
    assert pooled.shape == (2, 3)
    np.testing.assert_array_equal(pooled, 1.5)


def test_softmax_large_logits():
    for scale in (1e2, 1e3, 1e4):
        p = L.softmax(np.array([[scale, -scale, 0.0], [-scale, -scale, -scale]]))
        assert np.all(np.isfinite(p))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    loss, grad = L.softmax_cross_entropy(np.array([[1e4, -1e4]]), [1])
    assert np.isfinite(loss) and np.all(np.isfinite(grad))


def test_softmax_cross_entropy_labels():
    with pytest.raises(InvalidLabel):
        L.softmax_cross_entropy(np.zeros((2, 3)), [0, 3])
    with pytest.raises(InvalidLabel):
        L.softmax_cross_entropy(np.zeros((2, 3)), [0])
    loss, _ = L.softmax_cross_entropy(np.zeros((4, 2)), [0, 1, 1, 0])
    assert loss == pytest.approx(np.log(2))


def test_dropout_eval_identity(rng):
    x = rng.normal(size=(2, 3))
    assert L.dropout(x, 0.5, "eval") is x


def test_dropout_preserves_mean():
    x = np.full((100, 100), 2.0)  # 10^4 trials
    out = L.dropout(x, 0.5, "train", 0)
    assert set(np.unique(out)) <= {0.0, 4.0}
    assert abs(out.mean() - 2.0) / 2.0 < 0.02


def test_dropout_rate_bounds(rng):
    with pytest.raises(ValueError):
        L.dropout(np.ones(3), 1.0, "train", 0)


# finite-difference checks


@pytest.mark.parametrize("layer", LAYERS)
def test_gradcheck_layer(layer):
    (report,) = run_gradcheck([layer], shapes=5, seed=7)
    assert report.max_rel_error < THRESHOLD, report
    assert len(report.shapes) >= (2 if layer == "model" else 5)


@pytest.mark.parametrize("layer", ["spatial_conv", "temporal_conv", "softmax_xent", "block"])
def test_gradcheck_negative_control(layer):
    (report,) = run_gradcheck([layer], shapes=2, seed=3, negate=[layer])
    assert not report.passed
