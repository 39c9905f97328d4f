import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from centermask import ops
from centermask.gradcheck import backward_and_check
from centermask.tensor import NonFiniteError, Tape, Tensor, parameter, precision
from oracles import naive_bilinear, naive_conv


# --- conv2d -----------------------------------------------------------------

def test_conv_zero_kernel():
    y = ops.conv2d(Tensor(np.full((1, 1, 1, 1), 3.0)), Tensor(np.zeros((1, 1, 1, 1))), Tensor(np.zeros(1)))
    assert y.data.item() == 0.0


def test_conv_identity_kernel(rng):
    x = rng.normal(size=(1, 1, 3, 3))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1
    y = ops.conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(1)), stride=1, pad=1)
    np.testing.assert_allclose(y.data, x.astype(np.float32))


@pytest.mark.parametrize("stride,pad", [(1, 1), (1, 0), (2, 1)])
def test_conv_matches_naive_sum(rng, stride, pad):
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    with precision(np.float64):
        y = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad)
    np.testing.assert_allclose(y.data, naive_conv(x, w, b, stride, pad), atol=1e-6)


def test_conv_output_extent_rule():
    x = Tensor(np.zeros((1, 1, 7, 9)))
    y = ops.conv2d(x, Tensor(np.zeros((2, 1, 3, 3))), Tensor(np.zeros(2)), stride=2, pad=1)
    assert y.shape == (1, 2, (7 + 2 - 3) // 2 + 1, (9 + 2 - 3) // 2 + 1)


def test_conv_shape_errors():
    with pytest.raises(ValueError):
        ops.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ValueError):
        ops.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))))


def test_non_finite_output_is_an_error():
    with pytest.raises(NonFiniteError):
        ops.conv2d(Tensor(np.full((1, 1, 1, 1), np.inf)), Tensor(np.ones((1, 1, 1, 1))))


# --- deconv -----------------------------------------------------------------

def test_deconv_ones_kernel_spreads_value():
    y = ops.deconv2d_2x2(Tensor(np.full((1, 1, 1, 1), 1.75)), Tensor(np.ones((1, 1, 2, 2))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(y.data, np.full((1, 1, 2, 2), 1.75, dtype=np.float32))


def test_deconv_zero_kernel_and_extent(rng):
    y = ops.deconv2d_2x2(Tensor(rng.normal(size=(2, 3, 14, 14))), Tensor(np.zeros((3, 4, 2, 2))))
    assert y.shape == (2, 4, 28, 28)
    assert not y.data.any()


def test_deconv_is_adjoint_of_stride2_conv(rng):
    # <deconv(x), y> == <x, conv_s2(y)> with the matching 2x2 kernel
    x = rng.normal(size=(1, 3, 4, 4))
    w = rng.normal(size=(3, 2, 2, 2))
    y = rng.normal(size=(1, 2, 8, 8))
    with precision(np.float64):
        up = ops.deconv2d_2x2(Tensor(x), Tensor(w)).data
    down = np.zeros_like(x)
    for c in range(3):
        for i in range(4):
            for j in range(4):
                down[0, c, i, j] = np.sum(y[0, :, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2] * w[c])
    assert np.sum(up * y) == pytest.approx(np.sum(x * down), rel=1e-10)


# --- reductions, affine, activations ----------------------------------------

def test_reduce_channel_values():
    x = Tensor(np.array([1.0, 3.0]).reshape(1, 2, 1, 1))
    assert ops.reduce_channel(x, "max").data.item() == 3.0
    assert ops.reduce_channel(x, "avg").data.item() == 2.0


@pytest.mark.parametrize("mode", ["max", "avg"])
def test_reduce_channel_single_channel_and_constant(rng, mode):
    x = rng.normal(size=(2, 1, 3, 3)).astype(np.float32)
    np.testing.assert_array_equal(ops.reduce_channel(Tensor(x), mode).data, x)
    c = Tensor(np.full((1, 4, 2, 2), 0.7))
    np.testing.assert_allclose(ops.reduce_channel(c, mode).data, np.float32(0.7), rtol=1e-6)


def test_reduce_channel_max_tie_routes_gradient_to_first_channel():
    x = parameter(np.ones((1, 3, 1, 1)))
    with Tape() as tape:
        y = ops.total(ops.reduce_channel(x, "max"))
    tape.backward(y)
    np.testing.assert_array_equal(x.grad.ravel(), [1, 0, 0])


def test_global_avg_pool():
    x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2))
    assert ops.global_avg_pool(x).data.item() == 2.5
    c = Tensor(np.full((1, 3, 4, 5), -1.5))
    np.testing.assert_array_equal(ops.global_avg_pool(c).data.ravel(), np.full(3, -1.5, dtype=np.float32))


def test_fully_connected_identity_zero_and_oracle(rng):
    x = rng.normal(size=(2, 4))
    y = ops.fully_connected(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4)))
    np.testing.assert_allclose(y.data, x.astype(np.float32))
    b = rng.normal(size=3)
    y = ops.fully_connected(Tensor(x), Tensor(np.zeros((3, 4))), Tensor(b))
    np.testing.assert_allclose(y.data, np.tile(b.astype(np.float32), (2, 1)))
    w = rng.normal(size=(3, 4))
    v = rng.normal(size=(1, 4))
    with precision(np.float64):
        y = ops.fully_connected(Tensor(v), Tensor(w), Tensor(b)).data
    oracle = [sum(w[o, i] * v[0, i] for i in range(4)) + b[o] for o in range(3)]
    np.testing.assert_allclose(y[0], oracle, atol=1e-6)


def test_activation_values():
    assert ops.sigmoid(Tensor(np.zeros(1))).data.item() == 0.5
    np.testing.assert_array_equal(ops.relu(Tensor(np.array([-5.0, 5.0]))).data, [0.0, 5.0])
    assert ops.sigmoid(Tensor(np.ones(1))).data.item() == pytest.approx(0.73106, abs=1e-5)


@given(st.lists(st.floats(-15, 15), min_size=1, max_size=20))
def test_activation_ranges(values):
    x = Tensor(np.array(values))
    s = ops.sigmoid(x).data
    assert np.all((s > 0) & (s < 1))
    assert np.all(ops.relu(x).data >= 0)


def test_concat_channels(rng):
    a = rng.normal(size=(1, 2, 3, 3)).astype(np.float32)
    b = rng.normal(size=(1, 3, 3, 3)).astype(np.float32)
    y = ops.concat_channels([Tensor(a), Tensor(b)])
    assert y.shape == (1, 5, 3, 3)
    np.testing.assert_array_equal(y.data[:, :2], a)
    np.testing.assert_array_equal(y.data[:, 2:], b)
    np.testing.assert_array_equal(ops.concat_channels([Tensor(a)]).data, a)
    with pytest.raises(ValueError):
        ops.concat_channels([Tensor(a), Tensor(np.zeros((1, 1, 2, 3)))])


def test_bilinear_sample():
    m = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
    assert ops.bilinear_sample(m, 0.5, 0.5).data.item() == 2.5
    assert ops.bilinear_sample(m, 1, 0).data.item() == 2.0
    assert ops.bilinear_sample(m, 0, 1).data.item() == 3.0
    # border clamping
    assert ops.bilinear_sample(m, 5.0, -3.0).data.item() == 2.0
    c = Tensor(np.full((1, 2, 3, 4), 0.25))
    np.testing.assert_allclose(ops.bilinear_sample(c, 1.3, 0.7).data, [0.25, 0.25], rtol=1e-6)


def test_bilinear_sample_matches_scalar_oracle(rng):
    img = rng.normal(size=(4, 5))
    with precision(np.float64):
        t = Tensor(img.reshape(1, 1, 4, 5))
        for px, py in rng.uniform(-1, 6, size=(20, 2)):
            assert ops.bilinear_sample(t, px, py).data.item() == pytest.approx(naive_bilinear(img, px, py), abs=1e-12)


# --- linearity ---------------------------------------------------------------

@settings(deadline=None, max_examples=20)
@given(st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 2**31 - 1))
def test_linear_operators(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 1, 2, 5, 5))
    w = Tensor(rng.normal(size=(3, 2, 3, 3)))
    fw = Tensor(rng.normal(size=(4, 50)))
    cases = [
        lambda t: ops.conv2d(t, w, None, 1, 1),
        lambda t: ops.fully_connected(ops.flatten(t), fw),
        lambda t: ops.concat_channels([t, t]),
        ops.global_avg_pool,
    ]
    with precision(np.float64):
        for f in cases:
            lhs = f(Tensor(a * x + b * y)).data
            rhs = a * f(Tensor(x)).data + b * f(Tensor(y)).data
            np.testing.assert_allclose(lhs, rhs, atol=1e-5)


@settings(deadline=None, max_examples=20)
@given(st.integers(0, 2**31 - 1))
def test_avg_reduce_is_permutation_symmetric(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(1, 5, 3, 3))
    perm = rng.permutation(5)
    with precision(np.float64):
        np.testing.assert_allclose(ops.reduce_channel(Tensor(x[:, perm]), "avg").data,
                                   ops.reduce_channel(Tensor(x), "avg").data, atol=1e-12)


def test_seeded_computation_is_bitwise_repeatable():
    def run():
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(2, 3, 8, 8)))
        w = Tensor(rng.normal(size=(4, 3, 3, 3)))
        return ops.sigmoid(ops.conv2d(x, w, None, 2, 1)).data

    assert run().tobytes() == run().tobytes()


# --- tape --------------------------------------------------------------------

def test_cleared_tape_gives_no_gradient():
    w = parameter(np.ones(3))
    with Tape() as tape:
        y = ops.total(ops.sigmoid(w))
    tape.clear()
    tape.backward(y)
    assert w.grad is None or not np.any(w.grad)


def test_backward_accumulates_additively():
    w = parameter(np.array([0.3, -0.2]))
    with Tape() as tape:
        y = ops.total(ops.sigmoid(w))
    tape.backward(y)
    first = w.grad.copy()
    tape.backward(y)
    np.testing.assert_allclose(w.grad, 2 * first)


def test_no_recording_outside_tape():
    w = parameter(np.ones(2))
    y = ops.sigmoid(w)
    assert not y.requires_grad


# --- gradient checker --------------------------------------------------------

def test_constant_loss_has_zero_gradient():
    w = parameter(np.ones((2, 2)))
    report = backward_and_check(lambda: Tensor(np.array(3.0)), [w])
    assert not w.grad.any()
    assert report.max_error == 0.0


def test_sigmoid_gradient_at_zero():
    w = parameter(np.zeros(1))
    report = backward_and_check(lambda: ops.total(ops.sigmoid(w)), [w])
    assert w.grad.item() == pytest.approx(0.25)
    assert report.passed(1e-3)


def test_untracked_parameter_rejected():
    with pytest.raises(ValueError):
        backward_and_check(lambda: Tensor(np.array(1.0)), [Tensor(np.ones(2))])


def test_two_layer_conv_relu_gradients(rng):
    x = Tensor(rng.normal(size=(2, 2, 6, 6)))
    w1 = parameter(rng.normal(size=(3, 2, 3, 3)) * 0.5, "w1")
    b1 = parameter(rng.normal(size=3) * 0.1, "b1")
    w2 = parameter(rng.normal(size=(2, 3, 3, 3)) * 0.5, "w2")
    b2 = parameter(rng.normal(size=2) * 0.1, "b2")

    def loss():
        h = ops.relu(ops.conv2d(x, w1, b1, 1, 1))
        return ops.total(ops.relu(ops.conv2d(h, w2, b2, 2, 1)))

    report = backward_and_check(loss, [w1, b1, w2, b2])
    assert report.passed(1e-3), report.lines()
