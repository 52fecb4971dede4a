"""Differentiable ops on :class:`Tensor`.

Convolutions take ``(C, H, W)`` or batched ``(N, C, H, W)`` inputs. Kernels
use the ``(out, in, k, k)`` layout for :func:`conv2d`; :func:`conv2d_transpose`
takes the kernel of the conv2d it is the adjoint of, i.e. ``(in, out, k, k)``
from its own point of view.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from .tensor import Tensor, as_tensor

LEAKY_SLOPE = 0.01


# ---------------------------------------------------------------- elementwise
def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return Tensor.from_op(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    a = x.data
    return Tensor.from_op(np.log(a), (x,), lambda g: (g / a,))


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    return Tensor.from_op(y, (x,), lambda g: (g * 0.5 / y,))


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = x.data
    return Tensor.from_op(np.abs(a), (x,), lambda g: (g * np.sign(a),))


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    a = x.data
    scale = np.where(a > 0, 1.0, slope)
    return Tensor.from_op(a * scale, (x,), lambda g: (g * scale,))


def sigmoid(x: Tensor) -> Tensor:
    y = special.expit(x.data)
    return Tensor.from_op(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return Tensor.from_op(y, (x,), lambda g: (g * (1.0 - y * y),))


def softplus(x: Tensor) -> Tensor:
    a = x.data
    return Tensor.from_op(np.logaddexp(0.0, a), (x,), lambda g: (g * special.expit(a),))


def clamp(x: Tensor, low: float | None = None, high: float | None = None) -> Tensor:
    """Clip values; the gradient is zero wherever clipping was active."""
    a = x.data
    y = np.clip(a, low, high)
    mask = (y == a).astype(np.float64)
    return Tensor.from_op(y, (x,), lambda g: (g * mask,))


def round_half_away(a: np.ndarray) -> np.ndarray:
    return np.sign(a) * np.floor(np.abs(a) + 0.5)


def quantize_ste(x: Tensor) -> Tensor:
    """Round half away from zero; identity Jacobian on the way back."""
    return Tensor.from_op(round_half_away(x.data), (x,), lambda g: (g,))


def mse(a: Tensor, b) -> Tensor:
    d = a - b
    return (d * d).mean()


def l1(a: Tensor, b) -> Tensor:
    return abs(a - b).mean()


# --------------------------------------------------------------- convolution
def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return x.unsqueeze(0), True
    if x.ndim != 4:
        raise ValueError(f"expected (C,H,W) or (N,C,H,W), got shape {x.shape}")
    return x, False


def _windows(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # (N, C, Ho, Wo, k, k) view into the padded input
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def _scatter(cols: np.ndarray, shape: tuple, k: int, stride: int) -> np.ndarray:
    # adjoint of _windows: cols is (N, C, Ho, Wo, k, k); accumulate into shape
    out = np.zeros(shape)
    ho, wo = cols.shape[2], cols.shape[3]
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += cols[
                :, :, :, :, i, j
            ]
    return out


def _check_stride(stride: int) -> None:
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0, bias: Tensor | None = None) -> Tensor:
    """Cross-correlation with zero padding."""
    _check_stride(stride)
    xb, squeeze = _batched(as_tensor(x))
    kernel = as_tensor(kernel)
    n, c, h, w = xb.shape
    o, ci, k, k2 = kernel.shape
    if ci != c or k != k2:
        raise ValueError(f"kernel {kernel.shape} does not match input channels {c}")
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"non-positive output extent ({ho}, {wo})")

    xp = np.pad(xb.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xb.data
    # im2col once; rows are output pixels, columns (C, k, k) taps
    cols = _windows(xp, k, stride, ho, wo).transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    kmat = kernel.data.reshape(o, c * k * k)
    out = (cols @ kmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def _bw(g):
        gflat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gk = (gflat.T @ cols).reshape(o, c, k, k)
        gcols = (gflat @ kmat).reshape(n, ho, wo, c, k, k).transpose(0, 3, 1, 2, 4, 5)
        gxp = _scatter(gcols, xp.shape, k, stride)
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return np.ascontiguousarray(gx), gk

    y = Tensor.from_op(np.ascontiguousarray(out), (xb, kernel), _bw)
    if bias is not None:
        y = y + bias.reshape(1, -1, 1, 1)
    return y.squeeze(0) if squeeze else y


def conv2d_transpose(
    x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0, bias: Tensor | None = None
) -> Tensor:
    """Adjoint of :func:`conv2d`; output extent is ``(H-1)*stride + k - 2*padding``."""
    _check_stride(stride)
    xb, squeeze = _batched(as_tensor(x))
    kernel = as_tensor(kernel)
    n, c, h, w = xb.shape
    ci, co, k, k2 = kernel.shape
    if ci != c or k != k2:
        raise ValueError(f"kernel {kernel.shape} does not match input channels {c}")
    hp, wp = (h - 1) * stride + k, (w - 1) * stride + k
    ho, wo = hp - 2 * padding, wp - 2 * padding
    if ho < 1 or wo < 1:
        raise ValueError(f"non-positive output extent ({ho}, {wo})")

    kd = kernel.data
    cols = np.tensordot(xb.data, kd, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
    full = _scatter(cols, (n, co, hp, wp), k, stride)
    out = full[:, :, padding : padding + ho, padding : padding + wo]

    def _bw(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        win = _windows(gp, k, stride, h, w)
        gx = np.tensordot(win, kd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        gk = np.tensordot(xb.data, win, axes=([0, 2, 3], [0, 2, 3]))
        return np.ascontiguousarray(gx), gk

    y = Tensor.from_op(np.ascontiguousarray(out), (xb, kernel), _bw)
    if bias is not None:
        y = y + bias.reshape(1, -1, 1, 1)
    return y.squeeze(0) if squeeze else y
