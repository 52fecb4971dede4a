import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from glvc.engine import (
    Adam,
    GraphError,
    NonFiniteError,
    Parameter,
    Tensor,
    adam_step,
    backward,
    conv2d,
    conv2d_transpose,
    no_grad,
    quantize_ste,
)
from glvc.engine import checkpoint
from glvc.engine import functional as F
from glvc.engine.nn import Conv2d, Module

from gradcheck import OPS, assert_gradients_match, make_inputs


def rng(seed=0):
    return np.random.default_rng(seed)


# ------------------------------------------------------------------ conv2d
def test_conv2d_identity_kernel():
    x = rng().normal(size=(3, 5, 6))
    k = np.zeros((3, 3, 1, 1))
    for c in range(3):
        k[c, c, 0, 0] = 1.0
    y = conv2d(Tensor(x), Tensor(k), stride=1, padding=0)
    np.testing.assert_array_equal(y.data, x)


def test_conv2d_constant_input_all_ones_kernel():
    c = 0.37
    x = np.full((1, 6, 6), c)
    y = conv2d(Tensor(x), Tensor(np.ones((1, 1, 3, 3))), stride=1, padding=1).data[0]
    # direct summation oracle: every interior pixel sees nine copies of c
    expected = sum(c for _ in range(9))
    np.testing.assert_allclose(y[1:-1, 1:-1], expected, rtol=0, atol=1e-15)
    assert y[0, 0] == pytest.approx(4 * c)


def test_conv2d_stride2_shape():
    y = conv2d(Tensor(np.zeros((3, 16, 16))), Tensor(np.zeros((8, 3, 3, 3))), stride=2, padding=1)
    assert y.shape == (8, 8, 8)


def test_conv2d_matches_loop_oracle():
    r = rng(1)
    x = r.normal(size=(2, 3, 7, 6))
    k = r.normal(size=(4, 3, 3, 3))
    y = conv2d(Tensor(x), Tensor(k), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(y)
    for n in range(2):
        for o in range(4):
            for i in range(y.shape[2]):
                for j in range(y.shape[3]):
                    ref[n, o, i, j] = np.sum(xp[n, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3] * k[o])
    np.testing.assert_allclose(y, ref, rtol=1e-12, atol=1e-12)


def test_conv2d_errors():
    with pytest.raises(ValueError):
        conv2d(Tensor(np.zeros((3, 8, 8))), Tensor(np.zeros((4, 2, 3, 3))))
    with pytest.raises(ValueError):
        conv2d(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))
    with pytest.raises(ValueError):
        conv2d(Tensor(np.zeros((1, 8, 8))), Tensor(np.zeros((1, 1, 3, 3))), stride=3)


# -------------------------------------------------------- conv2d_transpose
def test_conv2d_transpose_shape():
    y = conv2d_transpose(Tensor(np.zeros((5, 8, 8))), Tensor(np.zeros((5, 2, 4, 4))), stride=2, padding=1)
    assert y.shape == (2, 16, 16)


def test_conv2d_transpose_zero_input():
    k = rng().normal(size=(3, 2, 4, 4))
    y = conv2d_transpose(Tensor(np.zeros((3, 4, 4))), Tensor(k), stride=2, padding=1)
    assert not np.any(y.data)


@pytest.mark.parametrize("k,stride,padding,size", [(3, 1, 1, 4), (3, 2, 1, 7), (4, 2, 1, 8), (5, 2, 2, 9), (1, 1, 0, 4)])
def test_adjoint_identity(k, stride, padding, size):
    r = rng(k * 10 + stride)
    kernel = r.normal(size=(4, 3, k, k))
    a = r.normal(size=(3, size, size))
    fwd = conv2d(Tensor(a), Tensor(kernel), stride, padding).data
    b = r.normal(size=fwd.shape)
    back = conv2d_transpose(Tensor(b), Tensor(kernel), stride, padding).data
    # the transposed conv may extend past a when the forward crop dropped rows
    lhs = np.sum(fwd * b)
    rhs = np.sum(a * back[:, :size, :size])
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))


# ---------------------------------------------------------------- backward
def test_backward_sum_of_squares():
    x = rng().normal(size=(4, 3))
    t = Tensor(x, requires_grad=True)
    backward((t * t).sum())
    np.testing.assert_allclose(t.grad, 2 * x)


def test_leaky_relu_negative_slope():
    t = Tensor(np.array([-2.0, -0.5, 1.5]), requires_grad=True)
    up = np.array([3.0, 5.0, 7.0])
    backward((F.leaky_relu(t) * Tensor(up)).sum())
    np.testing.assert_allclose(t.grad, [0.01 * 3.0, 0.01 * 5.0, 7.0])


def test_conv_leaky_sum_finite_differences():
    r = rng(3)
    x = r.normal(size=(2, 5, 5))
    k = r.normal(size=(3, 2, 3, 3))
    assert_gradients_match(lambda a, b: F.leaky_relu(conv2d(a, b, 1, 1)).sum(), [x, k])


def test_backward_errors():
    with pytest.raises(GraphError):
        backward(Tensor(np.ones(3), requires_grad=True) * 2.0)
    with pytest.raises(GraphError):
        backward(Tensor(1.0))


def test_frozen_parameters_receive_no_gradient():
    p = Parameter(np.ones(3), frozen=True)
    q = Parameter(np.ones(3))
    backward((p * q).sum())
    assert p.grad is None
    np.testing.assert_array_equal(q.grad, np.ones(3))


def test_gradient_accumulates_over_fanout():
    t = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    backward((t * 3.0 + t * t).sum())
    np.testing.assert_allclose(t.grad, 3.0 + 2 * t.data)


def test_no_grad_records_nothing():
    t = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = (t * 2).sum()
    assert not y.requires_grad


# ------------------------------------------------- finite-difference sweep
@pytest.mark.parametrize("name", sorted(OPS))
def test_finite_differences(name):
    fn, specs = OPS[name]
    assert_gradients_match(fn, make_inputs(specs), rtol=1e-4, atol=1e-7)


def test_adam_first_step_closed_form():
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    x0 = rng().normal(size=5)
    g = rng(1).normal(size=5)
    p = Parameter(x0.copy())
    p.grad = g.copy()
    adam_step([p], lr, b1, b2, eps)
    m_hat = (1 - b1) * g / (1 - b1)
    v_hat = (1 - b2) * g * g / (1 - b2)
    expected = x0 - lr * m_hat / (np.sqrt(v_hat) + eps)
    np.testing.assert_allclose(p.data, expected, rtol=0, atol=1e-9)
    np.testing.assert_allclose(np.abs(p.data - x0), lr, rtol=1e-4)
    assert p.step_count == 1


def test_adam_zero_gradient_is_fixed_point():
    p = Parameter(np.array([1.0, -2.0]))
    for _ in range(5):
        p.grad = np.zeros(2)
        adam_step([p], 0.1)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_frozen_untouched():
    p = Parameter(np.array([1.0, 2.0]), frozen=True)
    p.grad = np.ones(2)
    adam_step([p], 0.1)
    np.testing.assert_array_equal(p.data, [1.0, 2.0])
    assert p.step_count == 0


def test_adam_non_finite_gradient():
    p = Parameter(np.array([1.0, 2.0]))
    p.grad = np.array([np.nan, 1.0])
    with pytest.raises(NonFiniteError):
        adam_step([p], 0.1)
    np.testing.assert_array_equal(p.data, [1.0, 2.0])


# ------------------------------------------------------------ quantize_ste
def test_quantize_rounding_convention():
    y = quantize_ste(Tensor(np.array([2.4, -2.5, 2.5, -0.4, 3.0, -7.0]))).data
    np.testing.assert_array_equal(y, [2.0, -3.0, 3.0, -0.0, 3.0, -7.0])


def test_quantize_straight_through_gradient():
    t = Tensor(rng().normal(size=(3, 4)) * 3, requires_grad=True)
    backward(quantize_ste(t).sum())
    np.testing.assert_array_equal(t.grad, np.ones((3, 4)))


@given(st.lists(st.integers(-1000, 1000), min_size=1, max_size=20))
def test_quantize_idempotent_on_integers(values):
    a = np.array(values, dtype=float)
    np.testing.assert_array_equal(quantize_ste(Tensor(a)).data, a)


# ------------------------------------------------------------- invariants
def test_ops_do_not_mutate_inputs():
    r = rng(5)
    x = r.normal(size=(2, 3, 6, 6))
    k = r.normal(size=(4, 3, 3, 3))
    xs, ks = x.copy(), k.copy()
    tx, tk = Tensor(x, requires_grad=True), Tensor(k, requires_grad=True)
    y = F.leaky_relu(conv2d(tx, tk, 2, 1))
    z = conv2d_transpose(y, Tensor(r.normal(size=(4, 3, 4, 4))), 2, 1)
    backward((z * z).sum())
    np.testing.assert_array_equal(tx.data, xs)
    np.testing.assert_array_equal(tk.data, ks)


class _Tiny(Module):
    def __init__(self, seed):
        r = np.random.default_rng(seed)
        self.a = Conv2d(r, 2, 4)
        self.b = Conv2d(r, 4, 1)

    def forward(self, x):
        return self.b(F.leaky_relu(self.a(x)))


def _trajectory(seed):
    m = _Tiny(seed)
    opt = Adam(m.parameters(), lr=1e-2)
    r = np.random.default_rng(seed + 1)
    for _ in range(5):
        x = Tensor(r.normal(size=(3, 2, 5, 5)))
        opt.zero_grad()
        backward(F.mse(m(x), Tensor(np.zeros((3, 1, 5, 5)))))
        opt.step()
    return checkpoint.dumps(m.state_dict())


def test_identical_seeds_bit_identical_trajectories():
    assert _trajectory(11) == _trajectory(11)
    assert _trajectory(11) != _trajectory(12)


# -------------------------------------------------------------- checkpoint
def test_checkpoint_round_trip_bit_exact(tmp_path):
    r = rng(2)
    state = {"enc.weight": r.normal(size=(3, 2, 3, 3)), "scalar": np.array(np.pi), "é.unicode": r.normal(size=(5,))}
    path = tmp_path / "m.glvp"
    checkpoint.save(path, state)
    raw = path.read_bytes()
    assert raw[:4] == b"GLVP" and raw[4] == 1
    back = checkpoint.load(path)
    assert list(back) == list(state)
    for key in state:
        assert back[key].tobytes() == np.asarray(state[key], dtype=np.float64).tobytes()
    assert checkpoint.dumps(back) == raw


def test_checkpoint_rejects_garbage():
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(b"NOPE\x01")
    good = checkpoint.dumps({"w": np.ones(4)})
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(good[:-3])
