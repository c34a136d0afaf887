import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kspace_triage import autodiff as ad
from kspace_triage.errors import ShapeError
from kspace_triage.evaluation import binary_cross_entropy
from kspace_triage.spectral import dft2 as plain_dft2

TOL = 1e-3


def away_from_zero(rng, shape, margin=0.05):
    """Normal samples pushed away from ReLU kinks."""
    x = rng.normal(size=shape)
    return x + np.sign(x) * margin


def check(fn, *inputs, tol=TOL, **kw):
    err = ad.gradient_check(fn, list(inputs), **kw)
    assert err < tol, err
    return err


def weighted_sum(t, rng):
    w = rng.normal(size=t.shape)
    return ad.tsum(ad.mul(t, ad.constant(w)))


# ---------------------------------------------------------------- backward semantics


def test_sum_gradient_is_ones(rng):
    p = ad.parameter(rng.normal(size=(3, 4)))
    grads = ad.backward(ad.tsum(p))
    np.testing.assert_array_equal(grads[p], np.ones((3, 4)))


def test_half_squared_norm_gradient_is_identity(rng):
    p = ad.parameter(rng.normal(size=(5,)))
    grads = ad.backward(ad.mul(ad.tsum(ad.mul(p, p)), 0.5))
    np.testing.assert_allclose(grads[p], p.value, rtol=1e-15)


def test_non_scalar_loss_rejected(rng):
    with pytest.raises(ShapeError):
        ad.backward(ad.parameter(np.ones(3)) * 2.0)


def test_backward_is_repeatable_and_linear(rng):
    p = ad.parameter(rng.normal(size=(4, 4)))
    q = ad.parameter(rng.normal(size=(4,)))
    l1 = ad.tsum(ad.relu(ad.matmul(p, ad.reshape(q, (4, 1)))))
    l2 = ad.tsum(ad.sigmoid(ad.mul(p, p)))
    g_a, g_b = ad.backward(l1), ad.backward(l1)
    assert all(np.array_equal(g_a[t], g_b[t]) for t in (p, q))
    g_sum = ad.backward(ad.add(l1, l2))
    g2 = ad.backward(l2)
    np.testing.assert_allclose(g_sum[p], g_a[p] + g2[p], rtol=0, atol=1e-10)
    np.testing.assert_allclose(g_sum[q], g_a[q], rtol=0, atol=1e-10)


def test_shared_node_gradients_accumulate(rng):
    p = ad.parameter(rng.normal(size=(3,)))
    h = ad.mul(p, 2.0)
    grads = ad.backward(ad.tsum(ad.add(h, h)))
    np.testing.assert_array_equal(grads[p], np.full(3, 4.0))


def test_no_grad_records_nothing(rng):
    p = ad.parameter(rng.normal(size=(3,)))
    with ad.no_grad():
        out = ad.tsum(ad.mul(p, p))
    assert not out.requires_grad and out.is_leaf
    assert ad.backward(out) == {}


def test_gradient_dtype_follows_parameter(rng):
    p = ad.parameter(rng.normal(size=(3,)).astype(np.float32))
    g = ad.backward(ad.tsum(ad.mul(p, p)))[p]
    assert g.dtype == np.float32


def test_gradient_check_on_linear_map(rng):
    a = rng.normal(size=(3, 5))
    err = ad.gradient_check(lambda t: ad.tsum(ad.matmul(ad.constant(a), t[0])), [rng.normal(size=(5, 2))])
    assert err < 1e-6


def test_gradient_check_reports_wrong_gradients(rng):
    def broken(t):
        return ad._node(np.sum(t[0].value ** 2), (t[0],), lambda g: (g * t[0].value,), "broken")
    assert ad.gradient_check(broken, [rng.normal(size=4) + 2]) > 0.1


def test_operator_overloads(rng):
    a = ad.parameter(rng.normal(size=(2, 2)))
    b = ad.parameter(rng.normal(size=(2, 2)))
    out = (a + b) * 2.0 - a @ b
    np.testing.assert_allclose(out.value, (a.value + b.value) * 2 - a.value @ b.value)
    np.testing.assert_allclose((1.0 - a).value, 1 - a.value)
    grads = ad.backward((-a).sum() + a.mean() + a.reshape(4).sum())
    np.testing.assert_allclose(grads[a], np.full((2, 2), -1 + 0.25 + 1))


# ---------------------------------------------------------------- per-op finite differences


def test_elementwise_ops(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(1, 4))
    check(lambda t: weighted_sum(ad.add(t[0], t[1]), np.random.default_rng(0)), a, b)
    check(lambda t: weighted_sum(ad.mul(t[0], t[1]), np.random.default_rng(0)), a, b)
    check(lambda t: weighted_sum(ad.neg(t[0]), np.random.default_rng(0)), a)
    check(lambda t: weighted_sum(ad.sigmoid(t[0]), np.random.default_rng(0)), a)


def test_relu_away_from_kinks(rng):
    x = away_from_zero(rng, (4, 5), margin=0.1)
    err = check(lambda t: weighted_sum(ad.relu(t[0]), np.random.default_rng(0)), x, eps=1e-6)
    assert err < 1e-4


def test_shape_ops(rng):
    x = rng.normal(size=(2, 3, 4))
    check(lambda t: weighted_sum(ad.reshape(t[0], (6, 4)), np.random.default_rng(0)), x)
    check(lambda t: weighted_sum(ad.transpose(t[0], (2, 0, 1)), np.random.default_rng(0)), x)
    check(lambda t: weighted_sum(ad.concat([t[0], t[1]], axis=1), np.random.default_rng(0)),
          x, rng.normal(size=(2, 2, 4)))
    check(lambda t: weighted_sum(ad.zero_pad(t[0], ((0, 0), (1, 2), (0, 3))), np.random.default_rng(0)), x)
    check(lambda t: weighted_sum(ad.tsum(t[0], axis=1), np.random.default_rng(0)), x)
    check(lambda t: weighted_sum(ad.mean(t[0], axis=(0, 2)), np.random.default_rng(0)), x)


def test_matmul_and_dense(rng):
    check(lambda t: weighted_sum(ad.matmul(t[0], t[1]), np.random.default_rng(0)),
          rng.normal(size=(3, 4)), rng.normal(size=(4, 2)))
    check(lambda t: weighted_sum(ad.dense(t[0], t[1], t[2]), np.random.default_rng(0)),
          rng.normal(size=(5, 4)), rng.normal(size=(4, 3)), rng.normal(size=(3,)))


def test_complex_mul_matches_complex_arithmetic(rng):
    a, b = rng.normal(size=(3, 3, 2)), rng.normal(size=(3, 3, 2))
    out = ad.complex_mul(ad.constant(a), ad.constant(b)).value
    want = (a[..., 0] + 1j * a[..., 1]) * (b[..., 0] + 1j * b[..., 1])
    np.testing.assert_allclose(out[..., 0], want.real, atol=1e-14)
    np.testing.assert_allclose(out[..., 1], want.imag, atol=1e-14)
    check(lambda t: weighted_sum(ad.complex_mul(t[0], t[1]), np.random.default_rng(0)), a, b)
    # broadcasting over a leading axis
    check(lambda t: weighted_sum(ad.complex_mul(t[0], t[1]), np.random.default_rng(0)),
          rng.normal(size=(2, 1, 3, 2)), rng.normal(size=(4, 3, 2)))


@pytest.mark.parametrize("inverse", [False, True])
def test_dft2_op(rng, inverse):
    x = rng.normal(size=(2, 6, 5, 2))
    out = ad.dft2(ad.constant(x), inverse=inverse).value
    want = plain_dft2(x[..., 0] + 1j * x[..., 1], "inverse" if inverse else "forward")
    np.testing.assert_allclose(out[..., 0] + 1j * out[..., 1], want, atol=1e-13)
    check(lambda t: weighted_sum(ad.dft2(t[0], inverse=inverse), np.random.default_rng(0)), x)


@pytest.mark.parametrize("sparse", [False, True])
def test_spectral_conv(rng, sparse):
    x = rng.normal(size=(2, 8, 8)) + 1j * rng.normal(size=(2, 8, 8))
    columns = None
    if sparse:
        columns = np.array([1, 4, 6])
        keep = np.zeros(8, bool)
        keep[columns] = True
        x = x * keep
    check(lambda t: weighted_sum(ad.spectral_conv(x, t[0], columns), np.random.default_rng(0)),
          rng.normal(size=(3, 3, 3, 2)))


@pytest.mark.parametrize("stride,padding,k", [(1, 1, 3), (2, 1, 3), (2, 0, 2), (1, 0, 1), (3, 2, 3)])
def test_conv2d(rng, stride, padding, k):
    check(lambda t: weighted_sum(ad.conv2d(t[0], t[1], t[2], stride=stride, padding=padding),
                                 np.random.default_rng(0)),
          rng.normal(size=(2, 3, 8, 8)), rng.normal(size=(4, 3, k, k)), rng.normal(size=(4,)))


def test_conv2d_matches_loop(rng):
    x, w = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3))
    out = ad.conv2d(ad.constant(x), ad.constant(w), stride=2, padding=1).value
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    for o in range(3):
        for i in range(3):
            for j in range(3):
                want = np.sum(xp[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o])
                assert abs(out[0, o, i, j] - want) < 1e-12
    with pytest.raises(ShapeError):
        ad.conv2d(ad.constant(x), ad.constant(rng.normal(size=(3, 4, 3, 3))))


def test_group_norm(rng):
    check(lambda t: weighted_sum(ad.group_norm(t[0], t[1], t[2], groups=2), np.random.default_rng(0)),
          rng.normal(size=(2, 4, 3, 3)), rng.normal(size=(4,)), rng.normal(size=(4,)))
    out = ad.group_norm(ad.constant(rng.normal(size=(2, 4, 5, 5)) * 3 + 1),
                        ad.constant(np.ones(4)), ad.constant(np.zeros(4)), groups=2).value
    grouped = out.reshape(2, 2, -1)
    np.testing.assert_allclose(grouped.mean(axis=2), 0, atol=1e-12)
    np.testing.assert_allclose(grouped.var(axis=2), 1, atol=1e-3)
    with pytest.raises(ShapeError):
        ad.group_norm(ad.constant(np.ones((1, 3, 2, 2))), ad.constant(np.ones(3)), ad.constant(np.zeros(3)), 2)


def test_pooling(rng):
    check(lambda t: weighted_sum(ad.avg_pool2d(t[0], 2), np.random.default_rng(0)), rng.normal(size=(2, 3, 4, 6)))
    check(lambda t: weighted_sum(ad.global_avg_pool(t[0]), np.random.default_rng(0)), rng.normal(size=(2, 3, 4, 4)))
    with pytest.raises(ShapeError):
        ad.avg_pool2d(ad.constant(np.ones((1, 1, 3, 3))), 2)


@pytest.mark.parametrize("pos_weight", [None, 2.5, [1.0, 3.0]])
def test_sigmoid_bce(rng, pos_weight):
    y = rng.integers(0, 2, size=(6, 2))
    check(lambda t: ad.sigmoid_bce(t[0], y, pos_weight), rng.normal(size=(6, 2)) * 3)


def test_bce_matches_evaluation_cross_entropy(rng):
    z = rng.normal(size=(50, 2)) * 4
    y = rng.integers(0, 2, size=(50, 2))
    loss = float(ad.sigmoid_bce(ad.constant(z), y).value)
    probs = 1 / (1 + np.exp(-z))
    assert abs(loss - binary_cross_entropy(probs, y)) < 1e-6


def test_bce_stable_for_extreme_logits():
    z = ad.parameter(np.array([[-800.0], [800.0]]))
    loss = ad.sigmoid_bce(z, np.array([[1], [0]]))
    assert np.isfinite(loss.value) and loss.value > 100
    assert np.all(np.isfinite(ad.backward(loss)[z]))


@given(st.integers(0, 2 ** 32 - 1))
def test_three_layer_net_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 5))
    y = rng.integers(0, 2, size=(4, 1))

    def net(t):
        h = ad.sigmoid(ad.dense(ad.constant(x), t[0], t[1]))
        h = ad.sigmoid(ad.dense(h, t[2]))
        return ad.sigmoid_bce(ad.dense(h, t[3]), y)

    err = ad.gradient_check(net, [rng.normal(size=(5, 6)), rng.normal(size=(6,)),
                                  rng.normal(size=(6, 6)), rng.normal(size=(6, 1))], eps=1e-3)
    assert err < TOL
