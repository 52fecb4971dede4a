"""Central finite-difference oracle, independent of the reverse pass."""

import numpy as np

from glvc.engine import Tensor, backward


def numeric_grad(fn, arrays, idx, h=1e-5):
    base = [a.copy() for a in arrays]
    grad = np.zeros_like(base[idx])
    it = np.nditer(base[idx], flags=["multi_index"])
    for _ in it:
        mi = it.multi_index
        plus = [a.copy() for a in base]
        minus = [a.copy() for a in base]
        plus[idx][mi] += h
        minus[idx][mi] -= h
        fp = fn(*[Tensor(a) for a in plus]).item()
        fm = fn(*[Tensor(a) for a in minus]).item()
        grad[mi] = (fp - fm) / (2 * h)
    return grad


def analytic_grads(fn, arrays):
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*ts)
    backward(out)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]


def assert_gradients_match(fn, arrays, rtol=1e-4, atol=1e-7, h=1e-5):
    """fn maps Tensors to a scalar Tensor; every input is checked."""
    analytic = analytic_grads(fn, arrays)
    for i, ga in enumerate(analytic):
        gn = numeric_grad(fn, arrays, i, h)
        np.testing.assert_allclose(ga, gn, rtol=rtol, atol=atol, err_msg=f"input {i}")


# ------------------------------------------------------------------ op registry
# Each entry: (scalar function of Tensors, input specs). A spec is a shape
# (standard normal draws) or ("pos", shape) for values in [0.5, 2].
def _ops():
    from glvc.engine import concat, conv2d, conv2d_transpose, stack
    from glvc.engine import functional as F
    from glvc.entropy.gaussian import symbol_bits

    w = Tensor(np.arange(24.0).reshape(3, 2, 4))
    return {
        "add": (lambda a, b: ((a + b) * (a + b)).sum(), [(3, 4), (4,)]),
        "sub": (lambda a, b: ((a - b) ** 2).sum(), [(3, 4), (3, 1)]),
        "rsub": (lambda a: ((2.0 - a) ** 3).sum(), [(5,)]),
        "neg": (lambda a: ((-a) * a * a).sum(), [(5,)]),
        "mul": (lambda a, b: (a * b).sum(), [(2, 3), (2, 3)]),
        "div": (lambda a, b: (a / b).sum(), [(2, 3), ("pos", (2, 3))]),
        "rdiv": (lambda a: (1.0 / a).sum(), [("pos", (5,))]),
        "pow": (lambda a: (a**3).sum(), [(5,)]),
        "matmul": (lambda a, b: ((a @ b) ** 2).sum(), [(2, 3, 4), (4, 2)]),
        "exp": (lambda a: F.exp(a).sum(), [(6,)]),
        "log": (lambda a: F.log(a).sum(), [("pos", (6,))]),
        "sqrt": (lambda a: F.sqrt(a).sum(), [("pos", (6,))]),
        "abs": (lambda a: (F.abs(a) * a).sum(), [(7,)]),
        "sigmoid": (lambda a: (F.sigmoid(a) ** 2).sum(), [(7,)]),
        "tanh": (lambda a: (F.tanh(a) ** 2).sum(), [(7,)]),
        "softplus": (lambda a: (F.softplus(a) ** 2).sum(), [(7,)]),
        "leaky_relu": (lambda a: (F.leaky_relu(a) ** 2).sum(), [(9,)]),
        "clamp": (lambda a: (F.clamp(a, -0.5, 0.5) ** 2).sum(), [(9,)]),
        "sum_axis": (lambda a: (a.sum(axis=1) ** 2).sum(), [(3, 4)]),
        "mean": (lambda a: (a.mean(axis=0) ** 2).sum(), [(3, 4)]),
        "reshape": (lambda a: (a.reshape(4, 3) * Tensor(np.arange(12.0).reshape(4, 3))).sum(), [(3, 4)]),
        "transpose": (lambda a: (a.transpose(1, 0, 2) ** 2 * w).sum(), [(2, 3, 4)]),
        "squeeze": (lambda a: (a.unsqueeze(0).squeeze(0) ** 3).sum(), [(2, 3)]),
        "getitem": (lambda a: (a[1:, ::2] ** 2).sum(), [(3, 4)]),
        "concat": (lambda a, b: (concat([a, b], axis=1) ** 3).sum(), [(2, 3), (2, 2)]),
        "stack": (lambda a, b: (stack([a, b], axis=1) ** 3 * Tensor(np.arange(12.0).reshape(2, 2, 3))).sum(), [(2, 3), (2, 3)]),
        "mse": (lambda a, b: F.mse(a, b), [(3, 3), (3, 3)]),
        "l1": (lambda a, b: F.l1(a, b), [(3, 3), (3, 3)]),
        "conv2d_s2": (lambda x, k: (conv2d(x, k, 2, 1) ** 2).sum(), [(2, 2, 6, 6), (3, 2, 3, 3)]),
        "conv2d_bias": (lambda x, k, b: (conv2d(x, k, 1, 1, b) ** 2).sum(), [(1, 2, 5, 4), (3, 2, 3, 3), (3,)]),
        "conv2d_transpose": (lambda x, k: (conv2d_transpose(x, k, 2, 1) ** 2).sum(), [(3, 3, 3), (3, 2, 4, 4)]),
        "conv2d_transpose_bias": (
            lambda x, k, b: (conv2d_transpose(x, k, 2, 1, b) ** 2).sum(),
            [(1, 2, 3, 3), (2, 3, 4, 4), (3,)],
        ),
        "symbol_bits": (lambda q, m, s: symbol_bits(q, m, s).sum(), [(8,), (8,), ("pos", (8,))]),
    }


OPS = _ops()


def make_inputs(specs, seed=7):
    rng = np.random.default_rng(seed)
    out = []
    for s in specs:
        if isinstance(s, tuple) and s and s[0] == "pos":
            out.append(rng.uniform(0.5, 2.0, size=s[1]))
        else:
            out.append(rng.normal(size=s))
    return out
