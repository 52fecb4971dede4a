"""Unified intra/inter latent codec with a recurrent memory.

One network codes every latent slot. The first slot goes through the
intra-specific input layers and prior head; later slots switch to the inter
layers, which see the current input concatenated with a temporal context built
from the previous slot's decoded feature and the memory buffer. Everything
else (analysis/synthesis trunks, hyperprior, reconstruction head,
quantization matrix) is shared.

State convention: ``CodecState.latent_index`` is the index of the next slot to
code, which equals the number of slots decoded so far. The memory is built
from the first decoded slot's feature, so it is available from slot 1 onward.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .engine import Module, Parameter, Tensor, concat, no_grad
from .engine import functional as F
from .engine.nn import Conv2d, assign_names
from .entropy.gaussian import GaussianParams, gaussian_bits, symbol_bits
from .entropy.hyperprior import HyperPrior
from .entropy.rangecoder import range_decode, range_encode, symbol_windows

LATENT_CHANNELS = 16
QP_MAX = 31
# conv weights start at +-sqrt(6 / fan_in); the narrower default init starves this depth
INIT_GAIN = float(np.sqrt(6.0))


class StateError(ValueError):
    pass


@dataclass
class MemoryState:
    buffer: Tensor


@dataclass
class CodecState:
    memory: Optional[MemoryState] = None
    prev_feature: Optional[Tensor] = None
    latent_index: int = 0

    def validate(self) -> None:
        if self.latent_index < 0:
            raise StateError("negative latent_index")
        if (self.prev_feature is None) != (self.latent_index == 0):
            raise StateError(f"prev_feature presence inconsistent with latent_index {self.latent_index}")
        if (self.memory is None) != (self.latent_index == 0):
            raise StateError(f"memory presence inconsistent with latent_index {self.latent_index}")


@dataclass
class QuantizedLatent:
    y: np.ndarray  # (C_y, h, w) int64
    z: np.ndarray  # (C_z, ceil(h/2), ceil(w/2)) int64


class QuantMatrix(Module):
    """Per-channel quantization steps indexed by qp in [0, 31].

    ``step(qp, c) = channel_scale[c] * gmin * (gmax / gmin) ** (qp / 31)``,
    evaluated in the log domain. ``gmax = gmin * exp(softplus(gap))`` keeps the
    interpolation non-decreasing in qp.
    """

    def __init__(self, channels: int, global_min: float = 0.1, global_max: float = 3.2, channel_scale=None):
        if not 0 < global_min <= global_max:
            raise ValueError("need 0 < global_min <= global_max")
        gap = np.log(global_max / global_min)
        self.log_min = Parameter(np.array(np.log(global_min)))
        self.raw_gap = Parameter(np.array(np.log(np.expm1(gap)) if gap > 1e-12 else -40.0))
        cs = np.ones(channels) if channel_scale is None else np.asarray(channel_scale, dtype=np.float64)
        if cs.shape != (channels,) or np.any(cs <= 0):
            raise ValueError("channel_scale must be positive with one entry per channel")
        self.log_scale = Parameter(np.log(cs))

    def endpoints(self) -> tuple[Tensor, Tensor]:
        """Log of (global_min, global_max) as graph nodes."""
        return self.log_min * 1.0, self.log_min + F.softplus(self.raw_gap)

    @property
    def global_min(self) -> float:
        return float(np.exp(self.log_min.data))

    @property
    def global_max(self) -> float:
        return float(np.exp(self.log_min.data + np.logaddexp(0.0, self.raw_gap.data)))

    @property
    def channel_scale(self) -> np.ndarray:
        return np.exp(self.log_scale.data)

    def step(self, qp: int, log_endpoints: tuple[Tensor, Tensor] | None = None) -> Tensor:
        if not (isinstance(qp, (int, np.integer)) and 0 <= qp <= QP_MAX):
            raise ValueError(f"qp must be an integer in [0, {QP_MAX}], got {qp!r}")
        lo, hi = self.endpoints() if log_endpoints is None else log_endpoints
        a = qp / QP_MAX
        return F.exp(lo * (1.0 - a) + hi * a + self.log_scale)


def apply_quant(y_cont: Tensor, step: Tensor, mode: str = "infer") -> Tensor:
    """Symbols ``round(y / step)`` per channel (channel axis -3).

    ``train`` keeps a straight-through gradient; ``infer`` returns a constant.
    Dequantization is ``symbols * step`` for the decoder and the entropy model alike.
    """
    if np.any(step.data <= 0):
        raise ValueError("quantization step must be positive")
    s = step.reshape(-1, 1, 1) if step.ndim == 1 else step
    scaled = y_cont / s
    if mode == "train":
        return F.quantize_ste(scaled)
    if mode != "infer":
        raise ValueError(f"unknown mode {mode!r}")
    return Tensor(F.round_half_away(scaled.data))


class MemoryAdaptor(Module):
    """Switchable input projection feeding a shared adaptor trunk."""

    def __init__(self, rng, c_f: int, c_m: int, gain: float = 1.0):
        self.first_proj = Conv2d(rng, c_f, c_m, gain=gain)
        self.concat_proj = Conv2d(rng, c_m + c_f, c_m, gain=gain)
        self.trunk = Conv2d(rng, c_m, c_m, gain=gain)

    def forward(self, feature: Tensor, memory: Tensor | None) -> Tensor:
        if memory is None:
            x = self.first_proj(feature)
        else:
            x = self.concat_proj(concat([memory, feature], axis=1))
        return self.trunk(F.leaky_relu(x))


# Parameters that only one of the two coding modes touches.
INTRA_ONLY = ("intra_enc_in.", "intra_dec_in.", "hyper.intra_prior.")
INTER_ONLY = ("inter_enc_in.", "inter_dec_in.", "hyper.inter_prior.", "context.", "memory_adaptor.")
RECON_HEAD = "recon_head."


class LatentCodec(Module):
    def __init__(
        self,
        seed: int = 0,
        width: int = 64,
        c_y: int = 32,
        c_z: int = 16,
        c_f: int = 64,
        c_m: int = 64,
        factorized: bool = False,
    ):
        rng = np.random.default_rng(seed)
        self.c_y, self.c_z, self.c_f, self.c_m = c_y, c_z, c_f, c_m
        L = LATENT_CHANNELS

        def conv(c_in, c_out):
            return Conv2d(rng, c_in, c_out, gain=INIT_GAIN)

        self.context = [conv(c_f + c_m, width), conv(width, width)]
        self.intra_enc_in = conv(L, width)
        self.inter_enc_in = conv(L + width, width)
        self.enc_trunk = [conv(width, width), conv(width, c_y)]
        self.hyper = HyperPrior(rng, c_y, c_z, width, width, factorized=factorized, gain=INIT_GAIN)
        self.intra_dec_in = conv(c_y, width)
        self.inter_dec_in = conv(c_y + width, width)
        self.dec_trunk = [conv(width, width), conv(width, c_f)]
        self.recon_head = [conv(c_f, width), conv(width, L)]
        self.memory_adaptor = MemoryAdaptor(rng, c_f, c_m, gain=INIT_GAIN)
        self.qm = QuantMatrix(c_y)
        assign_names(self)
        # inference-time ablation switches; they never change the parameters
        self.use_memory = True
        self.force_intra = False

    @property
    def factorized(self) -> bool:
        return self.hyper.z_model.kind == "factorized"

    # ------------------------------------------------------------ pieces
    def temporal_context(self, state: CodecState) -> Tensor | None:
        if state.latent_index == 0 or self.force_intra:
            return None
        mem = state.memory.buffer
        if not self.use_memory:
            mem = Tensor(np.zeros(mem.shape))
        x = concat([state.prev_feature, mem], axis=1)
        return F.leaky_relu(self.context[1](F.leaky_relu(self.context[0](x))))

    def analysis(self, latent: Tensor, ctx: Tensor | None) -> Tensor:
        x = self.intra_enc_in(latent) if ctx is None else self.inter_enc_in(concat([latent, ctx], axis=1))
        x = x + self.enc_trunk[0](F.leaky_relu(x))
        return self.enc_trunk[1](F.leaky_relu(x))

    def synthesis(self, y_hat: Tensor, ctx: Tensor | None) -> Tensor:
        x = self.intra_dec_in(y_hat) if ctx is None else self.inter_dec_in(concat([y_hat, ctx], axis=1))
        x = x + self.dec_trunk[0](F.leaky_relu(x))
        return self.dec_trunk[1](F.leaky_relu(x))

    def reconstruct(self, feature: Tensor) -> Tensor:
        return self.recon_head[1](F.leaky_relu(self.recon_head[0](F.leaky_relu(feature))))

    def memory_update(self, state: CodecState, feature: Tensor) -> MemoryState:
        """Memory after decoding slot ``state.latent_index - 1``.

        ``state`` is the already-advanced state: index 1 means only the first
        slot is decoded, so the adaptor sees the feature alone; from index 2 on
        it sees ``concat(previous memory, feature)``.
        """
        if state.latent_index <= 0:
            raise StateError("memory_update needs at least one decoded latent")
        if state.latent_index == 1:
            return MemoryState(self.memory_adaptor(feature, None))
        if state.memory is None:
            raise StateError("missing previous memory")
        return MemoryState(self.memory_adaptor(feature, state.memory.buffer))

    def advance(self, state: CodecState, feature: Tensor) -> CodecState:
        nxt = CodecState(memory=state.memory, prev_feature=feature, latent_index=state.latent_index + 1)
        nxt.memory = self.memory_update(nxt, feature)
        return nxt

    # ----------------------------------------------------------- training
    def forward_slot(self, latent: Tensor, state: CodecState, qp: int, train: bool = True):
        """Batched differentiable pass for one slot.

        Returns ``(recon, feature, bits_y, bits_z, next_state)`` with bits
        summed per batch element (shape ``(N,)``).
        """
        ctx = self.temporal_context(state)
        y_cont = self.analysis(latent, ctx)
        step = self.qm.step(qp).reshape(1, -1, 1, 1)
        z, _, (mu, sigma) = self.hyper.hyper_encode(y_cont, ctx, step, train=True)
        y = apply_quant(y_cont, step, "train" if train else "infer")
        bits_y = symbol_bits(y, mu, sigma).sum(axis=(1, 2, 3))
        bits_z = self.hyper.z_model.bits(z).sum(axis=(1, 2, 3))
        feature = self.synthesis(y * step, ctx)
        recon = self.reconstruct(feature)
        return recon, feature, bits_y, bits_z, self.advance(state, feature)

    # ---------------------------------------------------------- inference
    def _check(self, state: CodecState, latent_shape=None) -> None:
        state.validate()
        if latent_shape is not None and (len(latent_shape) != 3 or latent_shape[0] != LATENT_CHANNELS):
            raise ValueError(f"latent slot must be ({LATENT_CHANNELS}, h, w), got {latent_shape}")
        if latent_shape is not None and state.prev_feature is not None:
            if tuple(state.prev_feature.shape[-2:]) != tuple(latent_shape[-2:]):
                raise ValueError("latent spatial size differs from the state's")

    def encode_latent(self, latent_slot, state: CodecState, qp: int):
        """Quantize one slot; returns ``(q, next_state, reconstruction, feature)``.

        The reconstruction comes from :meth:`decode_latent` on the produced
        symbols, so it matches the decoder bit for bit.
        """
        latent = np.asarray(getattr(latent_slot, "data", latent_slot), dtype=np.float64)
        self._check(state, latent.shape)
        with no_grad():
            ctx = self.temporal_context(state)
            y_cont = self.analysis(Tensor(latent[None]), ctx)
            step = self.qm.step(qp).reshape(1, -1, 1, 1)
            z, _, y_params = self.hyper.hyper_encode(y_cont, ctx, step)
            y = apply_quant(y_cont, step, "infer").data
            lo, hi = symbol_windows(y_params)
            y = np.clip(y, lo, hi)
        q = QuantizedLatent(y[0].astype(np.int64), z.data[0].astype(np.int64))
        recon, feature, nxt = self.decode_latent(q, state, qp)
        return q, nxt, recon, feature

    def decode_latent(self, q: QuantizedLatent, state: CodecState, qp: int):
        """Returns ``(reconstruction (16,h,w), feature (C_f,h,w), next_state)``."""
        self._check(state)
        if not (np.all(np.asarray(q.y) == np.round(q.y)) and np.all(np.asarray(q.z) == np.round(q.z))):
            raise ValueError("quantized latent must be integer-valued")
        with no_grad():
            ctx = self.temporal_context(state)
            step = self.qm.step(qp).reshape(1, -1, 1, 1)
            y_hat = Tensor(np.asarray(q.y, dtype=np.float64)[None]) * step
            feature = self.synthesis(y_hat, ctx)
            recon = self.reconstruct(feature)
            nxt = self.advance(state, feature)
        return recon.data[0], feature.data[0], nxt

    def entropy_params(self, z: np.ndarray, state: CodecState, qp: int, size: tuple[int, int]) -> GaussianParams:
        """y's coding distribution given decoded z and context (decoder side)."""
        with no_grad():
            ctx = self.temporal_context(state)
            step = self.qm.step(qp).reshape(1, -1, 1, 1)
            mu, sigma = self.hyper.prior(Tensor(np.asarray(z, dtype=np.float64)[None]), ctx, step, size)
        return GaussianParams(mu.data[0], sigma.data[0])

    def compress(self, q: QuantizedLatent, state: CodecState, qp: int) -> tuple[bytes, bytes]:
        z_bytes = self.hyper.z_model.encode(q.z[None])
        y_bytes = range_encode(q.y, self.entropy_params(q.z, state, qp, q.y.shape[-2:]))
        return z_bytes, y_bytes

    def decompress(self, z_bytes: bytes, y_bytes: bytes, state: CodecState, qp: int, h: int, w: int):
        z_shape = (1, self.c_z, (h + 1) // 2, (w + 1) // 2)
        z = self.hyper.z_model.decode(z_bytes, z_shape)[0]
        params = self.entropy_params(z, state, qp, (h, w))
        y = range_decode(y_bytes, params, (self.c_y, h, w))
        return QuantizedLatent(y, z)

    def estimate_bits(self, q: QuantizedLatent, state: CodecState, qp: int) -> tuple[float, float]:
        """Model estimate of (bits_y, bits_z) for already-quantized symbols."""
        with no_grad():
            bz = float(self.hyper.z_model.bits(Tensor(q.z[None].astype(np.float64))).data.sum())
        return gaussian_bits(q.y, self.entropy_params(q.z, state, qp, q.y.shape[-2:])), bz

    # ------------------------------------------------------------ grouping
    def parameter_groups(self) -> dict[str, set[str]]:
        names = [n for n, _ in self.named_parameters()]
        intra = {n for n in names if n.startswith(INTRA_ONLY)}
        inter = {n for n in names if n.startswith(INTER_ONLY)}
        return {"intra": intra, "inter": inter, "shared": set(names) - intra - inter}

    def recon_head_parameters(self) -> list[Parameter]:
        return [p for n, p in self.named_parameters() if n.startswith(RECON_HEAD)]

    def with_flags(self, use_memory: bool = True, force_intra: bool = False) -> "LatentCodec":
        """Shallow view sharing parameters but with different ablation switches."""
        view = object.__new__(LatentCodec)
        view.__dict__.update(self.__dict__)
        view.use_memory = use_memory
        view.force_intra = force_intra
        return view

