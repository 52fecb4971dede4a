"""Discretized Gaussian likelihood and its bit cost."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from ..engine import Tensor, as_tensor

SIGMA_FLOOR = 0.11
PROB_FLOOR = 2.0**-24
_LN2 = np.log(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass
class GaussianParams:
    """Per-symbol mean and scale, in symbol (integer) units."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.mu.shape != self.sigma.shape:
            raise ValueError(f"mu shape {self.mu.shape} != sigma shape {self.sigma.shape}")
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.sigma))):
            raise ValueError("non-finite Gaussian parameters")
        if np.any(self.sigma < SIGMA_FLOOR):
            raise ValueError(f"sigma below floor {SIGMA_FLOOR}")

    @property
    def shape(self) -> tuple:
        return self.mu.shape


def _pdf(x):
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _interval(q, mu, sigma):
    # mass of [q-0.5, q+0.5] evaluated on the left tail side for accuracy
    d = np.abs(q - mu)
    upper = (0.5 - d) / sigma
    lower = (-0.5 - d) / sigma
    return d, upper, lower, ndtr(upper) - ndtr(lower)


def symbol_bits(q: Tensor, mu: Tensor, sigma: Tensor) -> Tensor:
    """Elementwise ``-log2 P(q)`` under N(mu, sigma) integrated over unit bins.

    Differentiable in all three inputs; the probability is clamped below at
    2^-24, where the gradient is zero.
    """
    q, mu, sigma = as_tensor(q), as_tensor(mu), as_tensor(sigma)
    qd, md, sd = np.broadcast_arrays(q.data, mu.data, sigma.data)
    d, upper, lower, p = _interval(qd, md, sd)
    live = p > PROB_FLOOR
    bits = -np.log2(np.where(live, p, PROB_FLOOR))

    def _bw(g):
        pu, pl = _pdf(upper), _pdf(lower)
        coef = np.where(live, -g / (np.where(live, p, 1.0) * _LN2), 0.0)
        dp_dd = (pl - pu) / sd
        sign = np.sign(qd - md)
        dp_dsigma = (lower * pl - upper * pu) / sd
        gq = coef * dp_dd * sign
        gmu = -gq
        gs = coef * dp_dsigma
        return _reduce(gq, q.shape), _reduce(gmu, mu.shape), _reduce(gs, sigma.shape)

    return Tensor.from_op(bits, (q, mu, sigma), _bw)


def _reduce(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def gaussian_bits(symbols, params: GaussianParams) -> float:
    """Total estimated bits for integer ``symbols`` under ``params``."""
    s = np.asarray(symbols, dtype=np.float64)
    if s.shape != params.shape:
        raise ValueError(f"symbols shape {s.shape} != params shape {params.shape}")
    if s.size == 0:
        return 0.0
    _, _, _, p = _interval(s, params.mu, params.sigma)
    return float(np.sum(-np.log2(np.maximum(p, PROB_FLOOR))))
