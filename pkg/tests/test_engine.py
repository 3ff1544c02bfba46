import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecgaug.engine import (
    AdamState, GeometryError, Parameter, ShapeError, TapeError, Tensor, adam_step,
    backward, grad, init_normal, load_checkpoint, save_checkpoint,
)
from ecgaug.engine import functional as F
from ecgaug.engine.gradcheck import check_gradients, numeric_grad, rel_error


def naive_conv1d(x, w, b, stride, pad):
    B, Cin, L = x.shape
    Cout, _, K = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    Lout = (L + 2 * pad - K) // stride + 1
    out = np.zeros((B, Cout, Lout))
    for bi in range(B):
        for o in range(Cout):
            for l in range(Lout):
                out[bi, o, l] = np.sum(w[o] * xp[bi, :, l * stride:l * stride + K])
                if b is not None:
                    out[bi, o, l] += b[o]
    return out


# -- conv1d ---------------------------------------------------------------

def test_conv1d_sliding_window_example():
    out = F.conv1d(Tensor([[[1, 2, 3, 4]]]), Tensor([[[1, 1]]]))
    np.testing.assert_array_equal(out.data, [[[3, 5, 7]]])


def test_conv1d_identity_kernel():
    x = np.random.default_rng(0).normal(size=(2, 1, 9))
    np.testing.assert_array_equal(F.conv1d(Tensor(x), Tensor([[[1.0]]])).data, x)


def test_conv1d_geometry():
    assert F.conv_output_length(256, 4, 2, 1) == 128
    x = Tensor(np.zeros((1, 1, 256)))
    assert F.conv1d(x, Tensor(np.zeros((3, 1, 4))), stride=2, padding=1).shape == (1, 3, 128)


@pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1), (3, 2), (2, 0)])
def test_conv1d_matches_naive_loop(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    x, w, b = rng.normal(size=(2, 3, 11)), rng.normal(size=(4, 3, 3)), rng.normal(size=4)
    out = F.conv1d(Tensor(x), Tensor(w), Tensor(b), stride, pad)
    np.testing.assert_allclose(out.data, naive_conv1d(x, w, b, stride, pad), atol=1e-12)


def test_conv1d_errors():
    with pytest.raises(ShapeError):
        F.conv1d(Tensor(np.zeros((1, 2, 5))), Tensor(np.zeros((1, 3, 2))))
    with pytest.raises(GeometryError):
        F.conv1d(Tensor(np.zeros((1, 1, 3))), Tensor(np.zeros((1, 1, 5))))


# -- conv_transpose1d ------------------------------------------------------

def test_conv_transpose_geometry():
    assert F.conv_transpose_output_length(128, 4, 2, 1) == 256
    out = F.conv_transpose1d(Tensor(np.zeros((1, 2, 128))), Tensor(np.zeros((2, 1, 4))), stride=2, padding=1)
    assert out.shape == (1, 1, 256)


def test_conv_transpose_scalar_case():
    out = F.conv_transpose1d(Tensor([[[3.0]]]), Tensor([[[-2.5]]]))
    np.testing.assert_array_equal(out.data, [[[-7.5]]])


def test_conv_transpose_invalid_geometry():
    with pytest.raises(GeometryError):
        F.conv_transpose1d(Tensor(np.zeros((1, 1, 1))), Tensor(np.zeros((1, 1, 1))), padding=1)


@settings(max_examples=60, deadline=None)
@given(
    L=st.integers(1, 12), K=st.integers(1, 5), stride=st.integers(1, 3), pad=st.integers(0, 2),
    cin=st.integers(1, 3), cout=st.integers(1, 3), seed=st.integers(0, 2**31),
)
def test_conv_adjoint_identity(L, K, stride, pad, cin, cout, seed):
    if L + 2 * pad < K:
        return
    rng = np.random.default_rng(seed)
    lout = (L + 2 * pad - K) // stride + 1
    # the transpose recovers length L only when the windows tile it exactly
    L = (lout - 1) * stride + K - 2 * pad
    if L < 1:
        return
    a, w = rng.normal(size=(2, cin, L)), rng.normal(size=(cout, cin, K))
    b = rng.normal(size=(2, cout, lout))
    lhs = np.sum(F.conv1d(Tensor(a), Tensor(w), None, stride, pad).data * b)
    rhs = np.sum(a * F.conv_transpose1d(Tensor(b), Tensor(w), None, stride, pad).data)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_conv_adjoint_1x1x8():
    rng = np.random.default_rng(3)
    a, b, w = rng.normal(size=(1, 1, 8)), rng.normal(size=(1, 1, 8)), rng.normal(size=(1, 1, 3))
    lhs = np.sum(F.conv1d(Tensor(a), Tensor(w), padding=1).data * b)
    rhs = np.sum(a * F.conv_transpose1d(Tensor(b), Tensor(w), padding=1).data)
    assert abs(lhs - rhs) < 1e-12


# -- normalization -----------------------------------------------------------

def test_batch_norm_constant_input_gives_beta():
    x = Tensor(np.full((3, 2, 5), 4.0))
    out = F.batch_norm1d(x, Tensor(np.ones(2)), Tensor(np.zeros(2)))
    np.testing.assert_array_equal(out.data, 0.0)


def test_batch_norm_zero_gamma():
    x = Tensor(np.random.default_rng(1).normal(size=(2, 3, 4)))
    beta = np.array([0.5, -1.0, 2.0])
    out = F.batch_norm1d(x, Tensor(np.zeros(3)), Tensor(beta))
    np.testing.assert_array_equal(out.data, np.broadcast_to(beta[None, :, None], (2, 3, 4)))


def test_batch_norm_statistics():
    x = np.random.default_rng(2).normal(3.0, 2.0, size=(2, 3, 4))
    out = F.batch_norm1d(Tensor(x)).data
    np.testing.assert_allclose(out.mean(axis=(0, 2)), 0.0, atol=1e-6)
    # epsilon shrinks the variance slightly; 1e-5 / 4 is far inside the tolerance budget
    np.testing.assert_allclose(out.var(axis=(0, 2)), x.var(axis=(0, 2)) / (x.var(axis=(0, 2)) + 1e-5), atol=1e-12)
    np.testing.assert_allclose(out.var(axis=(0, 2)), 1.0, atol=1e-4)


def test_batch_norm_running_stats_and_eval():
    rm, rv = np.zeros(2), np.ones(2)
    x = np.random.default_rng(4).normal(size=(4, 2, 6))
    F.batch_norm1d(Tensor(x), training=True, running_mean=rm, running_var=rv)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2), ddof=1))
    out = F.batch_norm1d(Tensor(x), training=False, running_mean=rm, running_var=rv).data
    np.testing.assert_allclose(out, (x - rm[None, :, None]) / np.sqrt(rv[None, :, None] + 1e-5))


def test_instance_norm_hand_case():
    out = F.instance_norm1d(Tensor([[[1.0, 2.0, 3.0]]])).data
    np.testing.assert_allclose(out, [[[-np.sqrt(1.5), 0.0, np.sqrt(1.5)]]], atol=1e-6)


def test_instance_norm_constant_row():
    np.testing.assert_array_equal(F.instance_norm1d(Tensor(np.full((2, 2, 7), -3.0))).data, 0.0)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(0.1, 10.0), b=st.floats(-10.0, 10.0), seed=st.integers(0, 2**31))
def test_instance_norm_affine_invariance(a, b, seed):
    x = np.random.default_rng(seed).normal(size=(2, 3, 8))
    base = F.instance_norm1d(Tensor(x)).data
    np.testing.assert_allclose(F.instance_norm1d(Tensor(a * x + b)).data, base, atol=1e-9)


# -- activations, linear, embedding -------------------------------------------

def test_activations():
    np.testing.assert_array_equal(F.activation(Tensor([-1.0, 0.0, 2.0]), "relu").data, [0, 0, 2])
    np.testing.assert_allclose(F.activation(Tensor([-1.0, 2.0]), "leaky_relu", 0.2).data, [-0.2, 2.0])
    np.testing.assert_allclose(F.activation(Tensor([-1.0, 2.0]), "leaky_relu").data, [-0.2, 2.0])
    with pytest.raises(ValueError):
        F.activation(Tensor([1.0]), "gelu")


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
def test_tanh_range(xs):
    # float64 tanh saturates to exactly 1 beyond |x| ~ 19; the open interval holds below that
    out = F.activation(Tensor(np.clip(xs, -18, 18)), "tanh").data
    assert np.all(np.abs(out) < 1.0)


def test_linear_identity_and_hand_case():
    x = np.random.default_rng(0).normal(size=(3, 4))
    np.testing.assert_array_equal(F.linear(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4))).data, x)
    out = F.linear(Tensor([[1.0, 2.0]]), Tensor([[1.0, 1.0], [0.0, 1.0]]), Tensor([1.0, 0.0]))
    np.testing.assert_array_equal(out.data, [[4.0, 2.0]])
    with pytest.raises(ShapeError):
        F.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


def test_linear_weight_grad_vs_finite_differences():
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(3, 2, 4)))
    w, b = Parameter(rng.normal(size=(5, 4))), Parameter(rng.normal(size=5))
    assert check_gradients(lambda: (F.linear(x, w, b) ** 2).sum(), [w, b]) < 1e-6


def test_embedding_lookup_and_scatter():
    table = Parameter(np.random.default_rng(0).normal(size=(4, 3)))
    rows = F.embedding([0, 0], table).data
    np.testing.assert_array_equal(rows[0], rows[1])
    onehot = Tensor(np.eye(4))
    np.testing.assert_array_equal(F.embedding([2], onehot).data, [[0, 0, 1, 0]])
    backward(F.embedding([1], table).sum())
    expected = np.zeros((4, 3))
    expected[1] = 1.0
    np.testing.assert_array_equal(table.grad, expected)
    with pytest.raises(IndexError):
        F.embedding([4], table)


# -- backward / higher order ----------------------------------------------------

def test_backward_square():
    x = Parameter([1.0, 2.0])
    backward((x * x).sum())
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_second_order_cubic():
    x = Parameter([2.0])
    (g,) = grad((x ** 3).sum(), [x], higher_order=True)
    np.testing.assert_allclose(g.data, [12.0])
    (gg,) = grad(g.sum(), [x])
    np.testing.assert_allclose(gg.data, [12.0])


def test_backward_errors():
    with pytest.raises(ShapeError):
        backward(Parameter([1.0, 2.0]) * 2.0)
    with pytest.raises(TapeError):
        backward(Tensor([1.0]).sum())


LAYER_CASES = {
    "conv1d": lambda r, p: F.conv1d(p[0], p[1], p[2], 2, 1),
    "conv_transpose1d": lambda r, p: F.conv_transpose1d(p[0], p[3], p[4], 2, 1),
    "batch_norm1d": lambda r, p: F.batch_norm1d(p[0], p[5], p[6]),
    "instance_norm1d": lambda r, p: F.instance_norm1d(p[0]),
    "leaky_relu": lambda r, p: F.activation(p[0], "leaky_relu"),
    "tanh": lambda r, p: F.activation(p[0], "tanh"),
    "linear": lambda r, p: F.linear(p[0], p[7], p[8]),
}


@pytest.mark.parametrize("op", sorted(LAYER_CASES))
def test_layer_gradients_vs_finite_differences(op):
    rng = np.random.default_rng(len(op))
    params = [
        Parameter(rng.normal(size=(2, 3, 6))),
        Parameter(rng.normal(size=(4, 3, 4))), Parameter(rng.normal(size=4)),
        Parameter(rng.normal(size=(3, 2, 4))), Parameter(rng.normal(size=2)),
        Parameter(rng.normal(size=3)), Parameter(rng.normal(size=3)),
        Parameter(rng.normal(size=(5, 6))), Parameter(rng.normal(size=5)),
    ]
    probe = Tensor(rng.normal(size=LAYER_CASES[op](rng, params).shape))
    err = check_gradients(lambda: (LAYER_CASES[op](rng, params) * probe).sum(), params)
    assert err < 1e-4


def test_double_backprop_parameter_gradient():
    rng = np.random.default_rng(9)
    w1, w2 = Parameter(rng.normal(size=(4, 3))), Parameter(rng.normal(size=(1, 4)))
    x = Tensor(rng.normal(size=(5, 3)))

    def penalty():
        xi = Parameter(x.data)
        out = F.linear(F.activation(F.linear(xi, w1), "tanh"), w2).sum()
        (g,) = grad(out, [xi], higher_order=True)
        return (g * g).sum()

    assert check_gradients(penalty, [w1, w2]) < 1e-3


# -- Adam and init -------------------------------------------------------------

def test_adam_first_step():
    p = Parameter([0.5])
    adam_step({"p": p}, {"p": np.array([1.0])}, AdamState(lr=1e-4))
    assert abs((0.5 - p.data[0]) - 1e-4) < 1e-9


def test_adam_zero_grad_is_noop():
    p = Parameter([0.5, -2.0])
    state = AdamState(lr=0.1)
    for _ in range(3):
        adam_step({"p": p}, {"p": np.zeros(2)}, state)
    np.testing.assert_array_equal(p.data, [0.5, -2.0])
    assert state.step == 3


def test_adam_converges_on_quadratic():
    p = Parameter([0.0])
    state = AdamState(lr=0.1)
    for _ in range(200):
        adam_step({"p": p}, {"p": 2 * (p.data - 3.0)}, state)
    assert abs(p.data[0] - 3.0) < 0.1


def test_adam_nan_names_parameter():
    with pytest.raises(FloatingPointError, match="conv.weight"):
        adam_step({"conv.weight": Parameter([1.0])}, {"conv.weight": np.array([np.nan])}, AdamState())


def test_init_normal_determinism_and_statistics():
    a, b = Parameter(np.zeros(100_000)), Parameter(np.zeros(100_000))
    init_normal(a, "w", seed=7)
    init_normal(b, "w", seed=7)
    np.testing.assert_array_equal(a.data, b.data)
    assert abs(a.data.mean()) < 0.0005
    assert abs(a.data.std() - 0.02) < 0.001
    init_normal(b, "w2", seed=7)
    assert not np.array_equal(a.data, b.data)
    np.testing.assert_array_equal(init_normal(Parameter(np.ones(5)), "z", 1, std=0.0).data, 0.0)


def test_checkpoint_roundtrip(tmp_path):
    arrays = {"a": np.arange(6.0).reshape(2, 3), "scalar": np.array(2.5), "ü": np.zeros((0, 2))}
    save_checkpoint(tmp_path / "m.ckpt", arrays)
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert list(back) == list(arrays)
    for k in arrays:
        np.testing.assert_array_equal(back[k], arrays[k])
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw[:8] == b"ECGAUGCK"


def test_numeric_grad_helper():
    arr = np.array([1.0, -2.0])
    g = numeric_grad(lambda: float(np.sum(arr ** 3)), arr)
    assert rel_error(g, 3 * np.array([1.0, 4.0])) < 1e-8
