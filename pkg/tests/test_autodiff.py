import numpy as np
import pytest

from pansharp import autodiff as ad
from pansharp.gradcheck import check_gradient, numeric_gradient, relative_error

from oracles import conv2d_loop

GRAD_TOL = 1e-4


def rand64(rng, *shape, lo=0.2, hi=1.2):
    """Random values bounded away from zero so kinked ops stay smooth."""
    mag = rng.uniform(lo, hi, size=shape)
    sign = np.where(rng.uniform(size=shape) < 0.5, -1.0, 1.0)
    return ad.tensor(mag * sign, requires_grad=True, dtype=np.float64)


# ---------------------------------------------------------------------------
# conv2d


def test_conv2d_box_sum_of_ones():
    x = ad.tensor(np.ones((1, 1, 3, 3)))
    w = ad.tensor(np.ones((1, 1, 3, 3)))
    b = ad.tensor(np.zeros(1))
    out = ad.conv2d(x, w, b, stride=1, padding=1).data[0, 0]
    assert out[1, 1] == 9.0
    assert out[0, 0] == 4.0
    assert out[0, 2] == 4.0 and out[2, 0] == 4.0 and out[2, 2] == 4.0


def test_conv2d_identity_kernel_is_exact(rng):
    x = ad.tensor(rng.normal(size=(2, 3, 8, 8)).astype(np.float32))
    w = np.zeros((3, 3, 3, 3), dtype=np.float32)
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    out = ad.conv2d(x, ad.tensor(w), None, stride=1, padding=1)
    assert np.array_equal(out.data, x.data)


def test_conv2d_matches_loop_oracle_stride2(rng):
    x = rng.normal(size=(1, 2, 4, 4))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    got = ad.conv2d(
        ad.tensor(x, dtype=np.float64), ad.tensor(w, dtype=np.float64),
        ad.tensor(b, dtype=np.float64), stride=2, padding=0,
    ).data
    want = conv2d_loop(x, w, b, stride=2, padding=0)
    assert got.shape == want.shape == (1, 3, 1, 1)
    assert np.max(np.abs(got - want)) < 1e-6


@pytest.mark.parametrize("stride,padding,k", [(1, 1, 3), (2, 1, 4), (1, 0, 1), (2, 0, 3)])
def test_conv2d_matches_loop_oracle_shapes(rng, stride, padding, k):
    x = rng.normal(size=(2, 3, 9, 7))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4)
    got = ad.conv2d(
        ad.tensor(x, dtype=np.float64), ad.tensor(w, dtype=np.float64),
        ad.tensor(b, dtype=np.float64), stride=stride, padding=padding,
    ).data
    want = conv2d_loop(x, w, b, stride=stride, padding=padding)
    assert np.max(np.abs(got - want)) < 1e-9


def test_conv2d_channel_mismatch_names_axis():
    x = ad.tensor(np.zeros((1, 2, 4, 4)))
    w = ad.tensor(np.zeros((1, 3, 3, 3)))
    with pytest.raises(ValueError, match="channel axis"):
        ad.conv2d(x, w, None)


# ---------------------------------------------------------------------------
# instance_norm


def test_instance_norm_constant_channel_is_zero():
    x = ad.tensor(np.full((1, 2, 4, 4), 7.0))
    out = ad.instance_norm(x, eps=1e-5)
    assert np.allclose(out.data, 0.0)


def test_instance_norm_small_channel():
    x = ad.tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2))
    out = ad.instance_norm(x, eps=0.0).data.ravel()
    assert abs(out.mean()) < 1e-6
    assert abs(out.std() - 1.0) < 1e-6


def test_instance_norm_statistics(rng):
    x = ad.tensor(rng.normal(2.0, 3.0, size=(2, 3, 5, 5)), dtype=np.float64)
    eps = 1e-5
    out = ad.instance_norm(x, eps=eps).data
    for n in range(2):
        for c in range(3):
            s = out[n, c]
            var = x.data[n, c].var()
            assert abs(s.mean()) < 1e-6
            assert abs(s.var() - var / (var + eps)) < 1e-4


def test_instance_norm_rejects_single_pixel():
    with pytest.raises(ValueError, match="H\\*W >= 2"):
        ad.instance_norm(ad.tensor(np.ones((1, 1, 1, 1))))


# ---------------------------------------------------------------------------
# activations and simple maps


def test_activation_values():
    x = ad.tensor(np.array([-1.0, 2.0]).reshape(1, 1, 1, 2))
    assert np.allclose(ad.relu(x).data.ravel(), [0.0, 2.0])
    assert np.allclose(ad.leaky_relu(x, 0.2).data.ravel(), [-0.2, 2.0])
    z = ad.sigmoid(ad.tensor(np.zeros((1, 1, 1, 1))))
    assert z.data.ravel()[0] == 0.5


def test_global_avg_pool():
    x = ad.tensor(np.full((1, 1, 3, 3), 4.5))
    assert ad.global_avg_pool(x).data.ravel()[0] == pytest.approx(4.5)
    y = ad.tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
    assert ad.global_avg_pool(y).data.ravel()[0] == pytest.approx(2.5)


def test_global_avg_pool_matches_loop(rng):
    x = rng.normal(size=(2, 3, 4, 5))
    got = ad.global_avg_pool(ad.tensor(x, dtype=np.float64)).data
    for n in range(2):
        for c in range(3):
            acc = 0.0
            for y in range(4):
                for xx in range(5):
                    acc += x[n, c, y, xx]
            assert abs(got[n, c, 0, 0] - acc / 20.0) < 1e-7


def test_channel_max_single_channel_identity(rng):
    x = ad.tensor(rng.normal(size=(1, 1, 4, 4)))
    assert np.array_equal(ad.channel_max(x).data, x.data)


def test_channel_max_first_tie_gradient():
    x = ad.tensor(
        np.array([3.0, -1.0, 7.0, 7.0]).reshape(1, 4, 1, 1), requires_grad=True
    )
    out = ad.channel_max(x)
    assert out.data.ravel()[0] == 7.0
    ad.backward(ad.sum_all(out))
    assert np.array_equal(x.grad.ravel(), [0.0, 0.0, 1.0, 0.0])


def test_channel_max_matches_loop(rng):
    x = rng.normal(size=(1, 4, 8, 8))
    got = ad.channel_max(ad.tensor(x)).data[0, 0]
    for y in range(8):
        for xx in range(8):
            assert got[y, xx] == max(x[0, c, y, xx] for c in range(4))


def test_channel_max_dominates_every_channel(rng):
    x = rng.normal(size=(2, 4, 6, 6))
    out = ad.channel_max(ad.tensor(x)).data
    assert np.all(out >= x)


# ---------------------------------------------------------------------------
# joins and means


def test_concat_and_add_shape_checks(rng):
    a = ad.tensor(rng.normal(size=(1, 2, 4, 4)))
    b = ad.tensor(rng.normal(size=(1, 3, 4, 4)))
    out = ad.concat_channels(a, b)
    assert out.shape == (1, 5, 4, 4)
    with pytest.raises(ValueError, match="non-channel"):
        ad.concat_channels(a, ad.tensor(rng.normal(size=(1, 2, 5, 4))))
    with pytest.raises(ValueError, match="l1_mean shape mismatch"):
        ad.l1_mean(a, b)


def test_l1_and_sq_mean_values():
    x = ad.tensor(np.array([1.0, 2.0]).reshape(1, 1, 1, 2))
    y = ad.tensor(np.array([3.0, 5.0]).reshape(1, 1, 1, 2))
    assert ad.l1_mean(x, x).item() == 0.0
    assert ad.l1_mean(x, y).item() == pytest.approx(2.5)
    ones = ad.tensor(np.ones((1, 1, 2, 2)))
    assert ad.sq_mean(ones, 1.0).item() == 0.0


def test_repeat_channels(rng):
    x = ad.tensor(rng.normal(size=(2, 1, 3, 3)), requires_grad=True)
    out = ad.repeat_channels(x, 4)
    assert out.shape == (2, 4, 3, 3)
    for c in range(4):
        assert np.array_equal(out.data[:, c], x.data[:, 0])
    ad.backward(ad.sum_all(out))
    assert np.allclose(x.grad, 4.0)


def test_block_mean(rng):
    x = rng.normal(size=(1, 2, 5, 7))
    out = ad.block_mean(ad.tensor(x, dtype=np.float64), 2, 3).data
    assert out.shape == (1, 2, 2, 2)
    assert out[0, 1, 1, 1] == pytest.approx(x[1 if False else 0, 1, 2:4, 3:6].mean())


# ---------------------------------------------------------------------------
# backward semantics


def test_backward_sum_gives_ones(rng):
    x = ad.tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
    ad.backward(ad.sum_all(x))
    assert np.array_equal(x.grad, np.ones_like(x.data))


def test_backward_sq_mean_single_element():
    x = ad.tensor(np.array([[[[2.0]]]]), requires_grad=True)
    ad.backward(ad.sq_mean(x, 0.0))
    assert x.grad.ravel()[0] == pytest.approx(4.0)


def test_backward_requires_scalar(rng):
    x = ad.tensor(rng.normal(size=(1, 1, 2, 2)), requires_grad=True)
    y = ad.relu(x)
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(y)


def test_backward_accumulates_and_is_linear(rng):
    x = ad.tensor(rng.normal(size=(1, 2, 3, 3)), requires_grad=True, dtype=np.float64)

    def loss_a():
        return ad.sq_mean(ad.relu(x), 0.3)

    def loss_b():
        return ad.l1_mean(x, ad.tensor(np.zeros_like(x.data)))

    ad.backward(ad.add(loss_a(), loss_b()))
    combined = x.grad.copy()

    x.grad = None
    ad.backward(loss_a())
    ad.backward(loss_b())  # second call accumulates
    assert np.allclose(x.grad, combined, atol=1e-12)


def test_detach_blocks_gradient(rng):
    x = ad.tensor(rng.normal(size=(1, 1, 2, 2)), requires_grad=True)
    y = ad.sq_mean(x.detach(), 0.0)
    assert not y.requires_grad


def test_no_grad_context(rng):
    x = ad.tensor(rng.normal(size=(1, 1, 2, 2)), requires_grad=True)
    with ad.no_grad():
        y = ad.sq_mean(x, 0.0)
    assert not y.requires_grad


# ---------------------------------------------------------------------------
# finite-difference checks for every primitive (64-bit, h=1e-3)


def test_grad_conv2d(rng):
    x = rand64(rng, 1, 2, 5, 5)
    w = rand64(rng, 3, 2, 3, 3)
    b = rand64(rng, 3)
    for stride, padding in [(1, 1), (2, 0)]:
        err = check_gradient(
            lambda: ad.sq_mean(ad.conv2d(x, w, b, stride=stride, padding=padding), 0.3),
            [x, w, b],
        )
        assert err < GRAD_TOL


def test_grad_instance_norm(rng):
    x = rand64(rng, 2, 2, 4, 4)
    err = check_gradient(lambda: ad.sq_mean(ad.instance_norm(x), 0.5), [x])
    assert err < GRAD_TOL


def test_grad_activations(rng):
    x = rand64(rng, 1, 2, 4, 4)
    for fn in (ad.relu, lambda t: ad.leaky_relu(t, 0.2), ad.sigmoid, ad.absolute):
        err = check_gradient(lambda: ad.sq_mean(fn(x), 0.4), [x])
        assert err < GRAD_TOL


def test_grad_pools_and_slices(rng):
    x = rand64(rng, 2, 4, 4, 4)
    cases = [
        lambda: ad.sq_mean(ad.global_avg_pool(x), 0.3),
        lambda: ad.sq_mean(ad.channel_max(x), 0.3),
        lambda: ad.sq_mean(ad.channel_mean(x), 0.3),
        lambda: ad.sq_mean(ad.channel_slice(x, 1, 3), 0.3),
        lambda: ad.sq_mean(ad.batch_slice(x, 1), 0.3),
        lambda: ad.sq_mean(ad.block_mean(x, 2, 2), 0.3),
        lambda: ad.sq_mean(ad.repeat_channels(ad.channel_slice(x, 0, 1), 3), 0.3),
    ]
    for f in cases:
        assert check_gradient(f, [x]) < GRAD_TOL


def test_grad_filter2d_replicate(rng):
    x = rand64(rng, 1, 2, 6, 6)
    kern = np.full((3, 3), 1.0 / 9.0)
    err = check_gradient(
        lambda: ad.sq_mean(ad.filter2d_replicate(x, kern), 0.2), [x]
    )
    assert err < GRAD_TOL


def test_grad_separable_map(rng):
    x = rand64(rng, 1, 2, 6, 6)
    wr = rng.normal(size=(3, 6))
    wc = rng.normal(size=(4, 6))
    err = check_gradient(lambda: ad.sq_mean(ad.separable_map(x, wr, wc), 0.1), [x])
    assert err < GRAD_TOL


def test_grad_arithmetic(rng):
    a = rand64(rng, 1, 2, 3, 3)
    b = rand64(rng, 1, 2, 3, 3)
    s = rand64(rng, 1, 2, 1, 1)  # broadcast operand
    cases = [
        lambda: ad.sq_mean(a + b, 0.1),
        lambda: ad.sq_mean(a - b, 0.1),
        lambda: ad.sq_mean(ad.mul(a, b), 0.1),
        lambda: ad.sq_mean(ad.div(a, b), 0.1),
        lambda: ad.sq_mean(ad.mul(a, s), 0.1),
        lambda: ad.l1_mean(a, b),
        lambda: ad.mean_all(ad.concat_channels(ad.mul(a, b), a)),
    ]
    for f in cases:
        assert check_gradient(f, [a, b, s]) < GRAD_TOL


def test_numeric_gradient_self_check(rng):
    # the FD harness itself: gradient of mean(x^2) is 2x/n
    x = ad.tensor(rng.normal(size=(1, 1, 2, 2)), requires_grad=True, dtype=np.float64)
    num = numeric_gradient(lambda: ad.sq_mean(x, 0.0), x)
    assert relative_error(2.0 * x.data.ravel() / x.data.size, num) < 1e-6
