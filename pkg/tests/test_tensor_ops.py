import numpy as np
import pytest

from flowcodec.nn import functional as F
from flowcodec.nn.tensor import Parameter, Tensor, no_grad

from gradcheck import numeric_grad, rand_tensor


def t(arr, requires_grad=False, dtype=np.float64):
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------


def test_conv_identity_kernel():
    x = t(np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4))
    w = t(np.ones((1, 1, 1, 1)))
    b = t(np.zeros((1, 1, 1, 1)))
    y = F.conv2d(x, w, b, stride=1, padding=0)
    np.testing.assert_array_equal(y.data, x.data)


def test_conv_stride2_shape():
    x = t(np.zeros((1, 3, 256, 256)))
    w = t(np.zeros((8, 3, 3, 3)))
    y = F.conv2d(x, w, None, stride=2, padding=1)
    assert y.shape == (1, 8, 128, 128)


def test_conv_all_ones_sum():
    # direct summation oracle: ones * ones over a 3x3 window
    x = t(np.ones((1, 1, 3, 3)))
    w = t(np.ones((1, 1, 3, 3)))
    y = F.conv2d(x, w, None, stride=1, padding=0)
    assert y.shape == (1, 1, 1, 1)
    assert y.item() == pytest.approx(9.0)


def test_conv_matches_bruteforce():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    y = F.conv2d(t(x), t(w), None, stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    expect = np.zeros_like(y)
    for b in range(2):
        for o in range(4):
            for i in range(y.shape[2]):
                for j in range(y.shape[3]):
                    patch = xp[b, :, i * 2 : i * 2 + 3, j * 2 : j * 2 + 3]
                    expect[b, o, i, j] = np.sum(patch * w[o])
    np.testing.assert_allclose(y, expect, rtol=1e-12)


def test_conv_rejects_bad_shapes():
    x = t(np.zeros((1, 3, 8, 8)))
    w = t(np.zeros((4, 2, 3, 3)))
    with pytest.raises(ValueError, match="channels"):
        F.conv2d(x, w, None)
    with pytest.raises(ValueError):
        F.conv2d(t(np.zeros((1, 1, 2, 2))), t(np.zeros((1, 1, 5, 5))), None)


# ---------------------------------------------------------------------------
# transposed conv
# ---------------------------------------------------------------------------


def test_tconv_shape_upsample():
    x = t(np.zeros((1, 4, 128, 128)))
    w = t(np.zeros((4, 2, 3, 3)))
    y = F.conv_transpose2d(x, w, None, stride=2, padding=1, output_padding=1)
    assert y.shape == (1, 2, 256, 256)


def test_tconv_scatter_oracle():
    x = t([[[[1.0]]]])
    w = t(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
    y = F.conv_transpose2d(x, w, None, stride=2, padding=0)
    np.testing.assert_array_equal(y.data.reshape(2, 2), [[1.0, 2.0], [3.0, 4.0]])


@pytest.mark.parametrize("stride,k", [(1, 3), (2, 3), (2, 5), (3, 2)])
def test_tconv_is_adjoint_of_conv(stride, k):
    # <conv(x), y> == <x, tconv(y)> checked with brute-force inner products
    rng = np.random.default_rng(11)
    x = rng.normal(size=(1, 2, 9, 9))
    h_out = (9 - k) // stride + 1
    y = rng.normal(size=(1, 3, h_out, h_out))
    w = rng.normal(size=(3, 2, k, k))
    cx = F.conv2d(t(x), t(w), None, stride=stride, padding=0).data
    op = 9 - ((h_out - 1) * stride + k)
    ty = F.conv_transpose2d(t(y), t(w), None, stride=stride, padding=0, output_padding=op).data
    lhs = float(np.sum(cx * y))
    rhs = float(np.sum(x * ty))
    assert abs(lhs - rhs) / max(abs(lhs), 1e-12) < 1e-10


def test_conv_then_tconv_restores_extents():
    rng = np.random.default_rng(3)
    x = t(rng.normal(size=(1, 2, 37, 53)))
    w = t(rng.normal(size=(5, 2, 3, 3)))
    wt = t(rng.normal(size=(5, 2, 3, 3)))
    y = F.conv2d(x, w, None, stride=2, padding=1)
    op_h = 37 - ((y.shape[2] - 1) * 2 - 2 + 3)
    z = F.conv_transpose2d(y, wt, None, stride=2, padding=1, output_padding=op_h)
    assert z.shape[2:] == x.shape[2:]


# ---------------------------------------------------------------------------
# gdn / leaky relu / concat
# ---------------------------------------------------------------------------


def test_gdn_unit_denominator():
    rng = np.random.default_rng(5)
    x = t(rng.normal(size=(1, 3, 4, 4)))
    beta = t(np.ones((1, 3, 1, 1)))
    gamma = t(np.zeros((3, 3, 1, 1)))
    for inverse in (False, True):
        y = F.gdn(x, beta, gamma, inverse)
        np.testing.assert_allclose(y.data, x.data, rtol=1e-12)


def test_gdn_scalar_value():
    x = t([[[[2.0]]]])
    beta = t([[[[1.0]]]])
    gamma = t([[[[0.5]]]])
    y = F.gdn(x, beta, gamma, inverse=False)
    assert y.item() == pytest.approx(2.0 / np.sqrt(3.0), abs=1e-12)


def test_igdn_inverts_gdn_only_for_constant_denominator():
    rng = np.random.default_rng(9)
    x = t(rng.normal(size=(1, 2, 3, 3)))
    beta = t(np.full((1, 2, 1, 1), 1.7))
    zero_gamma = t(np.zeros((2, 2, 1, 1)))
    round_trip = F.gdn(F.gdn(x, beta, zero_gamma, False), beta, zero_gamma, True)
    np.testing.assert_allclose(round_trip.data, x.data, atol=1e-6)
    gamma = t(np.full((2, 2, 1, 1), 0.3))
    noisy = F.gdn(F.gdn(x, beta, gamma, False), beta, gamma, True)
    assert np.max(np.abs(noisy.data - x.data)) > 1e-3


def test_gdn_rejects_nonpositive_beta():
    x = t(np.ones((1, 1, 2, 2)))
    with pytest.raises(ValueError, match="beta"):
        F.gdn(x, t(np.zeros((1, 1, 1, 1))), t(np.zeros((1, 1, 1, 1))), False)


def test_leaky_relu_values():
    x = t([[[[3.0, -2.0], [0.0, -1.0]]]])
    y = F.leaky_relu(x, 0.01)
    np.testing.assert_allclose(y.data.reshape(-1), [3.0, -0.02, 0.0, -0.01])
    with pytest.raises(ValueError):
        F.leaky_relu(x, 1.5)


def test_concat_channels_shape_and_slice():
    rng = np.random.default_rng(1)
    a = t(rng.normal(size=(1, 2, 4, 4)))
    b = t(rng.normal(size=(1, 3, 4, 4)))
    c = F.concat_channels(a, b)
    assert c.shape == (1, 5, 4, 4)
    np.testing.assert_array_equal(F.slice_channels(c, 0, 2).data, a.data)
    np.testing.assert_array_equal(F.slice_channels(c, 2, 5).data, b.data)
    with pytest.raises(ValueError):
        F.concat_channels(a, t(np.zeros((1, 2, 5, 4))))


def test_concat_gradient_is_identity():
    a = t(np.ones((1, 2, 3, 3)), requires_grad=True)
    b = t(np.ones((1, 1, 3, 3)), requires_grad=True)
    F.sum_all(F.concat_channels(a, b)).backward()
    np.testing.assert_array_equal(a.grad, np.ones_like(a.data))
    np.testing.assert_array_equal(b.grad, np.ones_like(b.data))


# ---------------------------------------------------------------------------
# backward mechanics
# ---------------------------------------------------------------------------


def test_backward_sum_all_ones():
    x = t(np.arange(4.0).reshape(1, 1, 2, 2), requires_grad=True)
    F.sum_all(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((1, 1, 2, 2)))


def test_backward_rejects_nonscalar():
    x = t(np.ones((1, 1, 2, 2)), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        x.backward()


def test_gradients_accumulate_until_zeroed():
    x = t(np.ones((1, 1, 1, 1)), requires_grad=True)
    F.sum_all(x).backward()
    F.sum_all(x).backward()
    assert x.grad[0, 0, 0, 0] == pytest.approx(2.0)
    x.zero_grad()
    assert x.grad is None


def test_no_grad_builds_no_graph():
    x = t(np.ones((1, 1, 2, 2)), requires_grad=True)
    with no_grad():
        y = F.sum_all(F.mul(x, x))
    assert not y.requires_grad and y._prev == ()


def test_conv_gradcheck_finite_differences():
    rng = np.random.default_rng(21)
    x = rand_tensor(rng, (1, 2, 6, 6))
    w = rand_tensor(rng, (3, 2, 3, 3))

    def loss(x_, w_):
        y = F.conv2d(x_, w_, None, stride=1, padding=1)
        return F.sum_all(F.mul(y, y))

    assert numeric_grad(loss, [x, w], rng=rng) < 1e-5


def test_composed_pipeline_gradcheck():
    rng = np.random.default_rng(22)
    x = rand_tensor(rng, (1, 2, 6, 6))
    w = rand_tensor(rng, (2, 2, 3, 3), scale=0.5)
    b = rand_tensor(rng, (1, 2, 1, 1), scale=0.1)
    # beta near 1 as in an initialized layer; near-zero beta is numerically
    # singular and outside the operating range
    beta_raw = Tensor(1.0 + 0.2 * rng.normal(size=(1, 2, 1, 1)), requires_grad=True)
    gamma_raw = rand_tensor(rng, (2, 2, 1, 1), scale=0.3)

    def loss(x_, w_, b_, br, gr):
        y = F.conv2d(x_, w_, b_, stride=1, padding=1)
        beta = F.add_scalar(F.mul(br, br), 1e-6)
        gamma = F.mul(gr, gr)
        y = F.gdn(y, beta, gamma, inverse=False)
        y = F.leaky_relu(y, 0.01)
        return F.sum_all(y)

    assert numeric_grad(loss, [x, w, b, beta_raw, gamma_raw], rng=rng) < 1e-4


@pytest.mark.parametrize(
    "op",
    [
        lambda x_: F.exp(F.mul_scalar(x_, 0.3)),
        lambda x_: F.log(F.add_scalar(F.mul(x_, x_), 1.2)),
        F.erf,
        F.softplus,
        lambda x_: F.pow_scalar(F.add_scalar(F.mul(x_, x_), 0.5), -0.5),
        F.upsample_nearest2,
        lambda x_: F.gaussian_cdf(x_),
        lambda x_: F.conv_transpose2d(x_, Tensor(np.full((2, 1, 3, 3), 0.2)), None, 2, 1, 1),
    ],
)
def test_elementwise_gradchecks(op):
    rng = np.random.default_rng(33)
    x = rand_tensor(rng, (1, 2, 4, 4), scale=0.8)
    assert numeric_grad(lambda x_: F.sum_all(op(x_)), [x], rng=rng) < 1e-5


def test_determinism_bitwise():
    rng = np.random.default_rng(44)
    x = Tensor(rng.normal(size=(2, 3, 16, 16)).astype(np.float32), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 3, 3, 3)).astype(np.float32), requires_grad=True)

    def run():
        x.zero_grad()
        w.zero_grad()
        y = F.conv2d(x, w, None, stride=2, padding=1)
        loss = F.sum_all(F.mul(y, y))
        loss.backward()
        return loss.item(), x.grad.copy(), w.grad.copy()

    l1, gx1, gw1 = run()
    l2, gx2, gw2 = run()
    assert l1 == l2
    np.testing.assert_array_equal(gx1, gx2)
    np.testing.assert_array_equal(gw1, gw2)


# ---------------------------------------------------------------------------
# adam
# ---------------------------------------------------------------------------


def test_adam_zero_gradient_keeps_parameter():
    from flowcodec.nn.optim import adam_step

    p = Parameter(np.full((1, 1, 1, 1), 2.5, dtype=np.float32))
    p.grad = np.zeros_like(p.data)
    adam_step([p], lr=1e-4)
    assert p.data[0, 0, 0, 0] == pytest.approx(2.5)


def test_adam_first_step_magnitude():
    from flowcodec.nn.optim import adam_step

    p = Parameter(np.zeros((1, 1, 1, 1), dtype=np.float32))
    p.grad = np.full((1, 1, 1, 1), 4.0, dtype=np.float32)
    adam_step([p], lr=1e-4)
    # m_hat / sqrt(v_hat) = g / |g| = 1, so the step is -lr
    assert p.data[0, 0, 0, 0] == pytest.approx(-1e-4, rel=1e-3)


def test_adam_minimizes_quadratic():
    from flowcodec.nn.optim import adam_step

    p = Parameter(np.zeros((1, 1, 1, 1), dtype=np.float64))
    for _ in range(500):
        p.grad = 2.0 * (p.data - 3.0)
        adam_step([p], lr=0.1)
        p.grad = None
    assert abs(p.data[0, 0, 0, 0] - 3.0) < 0.05


def test_adam_rejects_nonpositive_lr():
    from flowcodec.nn.optim import adam_step

    with pytest.raises(ValueError):
        adam_step([], lr=0.0)
