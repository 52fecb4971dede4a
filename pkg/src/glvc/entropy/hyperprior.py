"""Hyperprior networks and the two density models for the side information z.

``ParametricZ`` codes z under one learned Gaussian per channel. ``FactorizedZ``
is the usual non-parametric per-channel cumulative density (a small monotone
MLP squashed by a sigmoid); it is kept as the ablation baseline.
"""

from __future__ import annotations

import numpy as np

from ..engine import Module, Parameter, Tensor, concat, matmul
from ..engine import functional as F
from ..engine.nn import Conv2d, ConvTranspose2d
from .gaussian import PROB_FLOOR, SIGMA_FLOOR, GaussianParams, symbol_bits
from .rangecoder import (
    CdfTable,
    pmf_to_cdf,
    range_decode,
    range_decode_table,
    range_encode,
    range_encode_table,
    symbol_windows,
)

_LN2 = float(np.log(2.0))


def _bits_from_prob(p: Tensor) -> Tensor:
    return F.log(F.clamp(p, PROB_FLOOR, None)) * (-1.0 / _LN2)


class ParametricZ(Module):
    kind = "parametric"

    def __init__(self, channels: int):
        self.mu = Parameter(np.zeros(channels))
        self.raw_sigma = Parameter(np.full(channels, 1.0))

    def sigma(self) -> Tensor:
        return F.softplus(self.raw_sigma) + SIGMA_FLOOR

    def bits(self, z: Tensor) -> Tensor:
        c = self.mu.shape[0]
        return symbol_bits(z, self.mu.reshape(1, c, 1, 1), self.sigma().reshape(1, c, 1, 1))

    def params(self, shape: tuple) -> GaussianParams:
        """Gaussian parameters broadcast over a (..., C, h, w) z tensor."""
        c = shape[-3]
        mu = np.broadcast_to(self.mu.data.reshape(c, 1, 1), shape)
        sigma = np.broadcast_to(self.sigma().data.reshape(c, 1, 1), shape)
        return GaussianParams(mu.copy(), sigma.copy())

    def clamp(self, z: np.ndarray) -> np.ndarray:
        lo, hi = symbol_windows(self.params(z.shape))
        return np.clip(z, lo, hi)

    def encode(self, z: np.ndarray) -> bytes:
        return range_encode(z, self.params(z.shape))

    def decode(self, data: bytes, shape: tuple) -> np.ndarray:
        return range_decode(data, self.params(shape), shape)


class FactorizedZ(Module):
    kind = "factorized"
    filters = (1, 3, 3, 3, 1)
    init_scale = 10.0
    half_range = 64

    def __init__(self, channels: int, rng: np.random.Generator):
        self.channels = channels
        scale = self.init_scale ** (1.0 / (len(self.filters) - 1))
        mats, biases, factors = [], [], []
        for k in range(len(self.filters) - 1):
            d_in, d_out = self.filters[k], self.filters[k + 1]
            init = np.log(np.expm1(1.0 / scale / d_out))
            mats.append(Parameter(np.full((channels, d_out, d_in), init)))
            biases.append(Parameter(rng.uniform(-0.5, 0.5, size=(channels, d_out, 1))))
            if k < len(self.filters) - 2:
                factors.append(Parameter(np.zeros((channels, d_out, 1))))
        self.matrices = mats
        self.biases = biases
        self.factors = factors

    def _logits(self, x: Tensor) -> Tensor:
        # x: (C, 1, M) -> cumulative logits of the same shape
        out = x
        for k, (m, b) in enumerate(zip(self.matrices, self.biases)):
            out = matmul(F.softplus(m), out) + b
            if k < len(self.factors):
                out = out + F.tanh(self.factors[k]) * F.tanh(out)
        return out

    def likelihood(self, z: Tensor) -> Tensor:
        n, c, h, w = z.shape
        flat = z.transpose(1, 0, 2, 3).reshape(c, 1, n * h * w)
        upper = self._logits(flat + 0.5)
        lower = self._logits(flat - 0.5)
        sign = Tensor(-np.sign(upper.data + lower.data))
        p = F.abs(F.sigmoid(sign * upper) - F.sigmoid(sign * lower))
        return p.reshape(c, n, h, w).transpose(1, 0, 2, 3)

    def bits(self, z: Tensor) -> Tensor:
        return _bits_from_prob(self.likelihood(z))

    def table(self) -> CdfTable:
        grid = np.arange(-self.half_range, self.half_range + 1, dtype=np.float64)
        x = np.broadcast_to(grid.reshape(1, 1, -1, 1), (1, self.channels, grid.size, 1)).copy()
        p = self.likelihood(Tensor(x)).data.reshape(self.channels, grid.size)
        return CdfTable([pmf_to_cdf(row) for row in p], [-self.half_range] * self.channels)

    def clamp(self, z: np.ndarray) -> np.ndarray:
        return np.clip(z, -self.half_range, self.half_range)

    @staticmethod
    def _rows(shape: tuple) -> np.ndarray:
        return np.broadcast_to(np.arange(shape[-3]).reshape(-1, 1, 1), shape)

    def encode(self, z: np.ndarray) -> bytes:
        return range_encode_table(z, self._rows(z.shape), self.table())

    def decode(self, data: bytes, shape: tuple) -> np.ndarray:
        return range_decode_table(data, self._rows(shape), self.table(), shape)


class HyperPrior(Module):
    """z analysis/synthesis plus the switchable prior heads for y.

    The intra head sees only the hyper-synthesis output; the inter head also
    sees the temporal context supplied by the codec.
    """

    def __init__(
        self, rng, c_y: int, c_z: int, c_ctx: int, width: int = 64, factorized: bool = False, gain: float = 1.0
    ):
        self.c_y = c_y
        self.analysis = [Conv2d(rng, c_y, width, gain=gain), Conv2d(rng, width, c_z, stride=2, gain=gain)]
        self.synthesis = [ConvTranspose2d(rng, c_z, width, gain=gain), Conv2d(rng, width, width, gain=gain)]
        self.intra_prior = Conv2d(rng, width, 2 * c_y, gain=gain)
        self.inter_prior = Conv2d(rng, width + c_ctx, 2 * c_y, gain=gain)
        self.z_model = FactorizedZ(c_z, rng) if factorized else ParametricZ(c_z)

    def analyse(self, y_cont: Tensor) -> Tensor:
        """Continuous hyper-latent; the caller quantizes it."""
        return self.analysis[1](F.leaky_relu(self.analysis[0](y_cont)))

    def prior(self, z_hat: Tensor, ctx: Tensor | None, step: Tensor, size: tuple[int, int]) -> tuple[Tensor, Tensor]:
        """Mean and scale of y in symbol units, i.e. already divided by the step.

        ``size`` is y's spatial extent; the 2x synthesis overshoots odd sizes by one.
        """
        h = self.synthesis[1](F.leaky_relu(self.synthesis[0](z_hat)))
        if h.shape[-2:] != tuple(size):
            h = h[:, :, : size[0], : size[1]]
        h = F.leaky_relu(h)
        out = self.intra_prior(h) if ctx is None else self.inter_prior(concat([h, ctx], axis=1))
        c = self.c_y
        mu_cont = out[:, :c]
        scale_cont = F.softplus(out[:, c:])
        return mu_cont / step, scale_cont / step + SIGMA_FLOOR

    def hyper_encode(self, y_features: Tensor, ctx: Tensor | None, step: Tensor, train: bool = False):
        """Quantize the hyper-latent and derive the entropy parameters of y.

        Returns ``(z, z_params, y_params)``. In training mode z is rounded
        straight-through and ``y_params`` is a ``(mu, sigma)`` tensor pair; in
        inference z is clamped to the coder window and both parameter sets are
        :class:`GaussianParams` (``z_params`` is ``None`` for the factorized
        model, which has no Gaussian form).
        """
        z_cont = self.analyse(y_features)
        if train:
            z = F.quantize_ste(z_cont)
            return z, None, self.prior(z, ctx, step, y_features.shape[-2:])
        z = Tensor(self.z_model.clamp(F.round_half_away(z_cont.data)))
        mu, sigma = self.prior(z, ctx, step, y_features.shape[-2:])
        z_params = self.z_model.params(z.shape) if isinstance(self.z_model, ParametricZ) else None
        return z, z_params, GaussianParams(mu.data, sigma.data)
