"""End-to-end clip coding: tokenizer + latent codec + bitstream."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import CodecState, LatentCodec
from .engine import checkpoint as ckpt
from .entropy.bitstream import Bitstream, deserialize, serialize
from .tokenizer import LatentStack, Tokenizer, VideoClip, detokenize, load_tokenizer, tokenize


@dataclass
class Models:
    tokenizer: Tokenizer
    codec: LatentCodec


@dataclass
class EncodeResult:
    data: bytes
    bitstream: Bitstream
    latents: LatentStack  # tokenizer output
    reconstruction: LatentStack  # decoder-side latents
    per_latent_bits: list[int]  # coded payload bits (z + y) per slot

    @property
    def bpp(self) -> float:
        _, t, h, w = (3, *self.latents.source_dims)
        return 8.0 * len(self.data) / (w * h * t)


@dataclass
class DecodeResult:
    clip: VideoClip
    latents: LatentStack
    bitstream: Bitstream


def save_codec(codec: LatentCodec, path) -> None:
    ckpt.save(path, codec.state_dict())


def load_codec(path) -> LatentCodec:
    state = ckpt.load(path)
    factorized = any(k.startswith("hyper.z_model.matrices") for k in state)
    codec = LatentCodec(factorized=factorized)
    codec.load_state_dict(state)
    return codec


def load_models(tokenizer_path, codec_path) -> Models:
    return Models(load_tokenizer(tokenizer_path), load_codec(codec_path))


def encode_latents(codec: LatentCodec, stack: LatentStack, qp: int) -> tuple[list[tuple[bytes, bytes]], np.ndarray]:
    """Code every slot; returns the (z, y) chunks and the decoder-side latents."""
    state = CodecState()
    chunks, recons = [], []
    for k in range(stack.num_slots):
        q, nxt, recon, _ = codec.encode_latent(stack.slot(k), state, qp)
        chunks.append(codec.compress(q, state, qp))
        recons.append(recon)
        state = nxt
    return chunks, np.stack(recons, axis=1)


def encode_clip(models: Models, clip: VideoClip, qp: int) -> EncodeResult:
    stack = tokenize(models.tokenizer, clip)
    chunks, recon = encode_latents(models.codec, stack, qp)
    _, t, h, w = clip.shape
    bs = Bitstream(width=w, height=h, frame_count=t, qp=qp, chunks=chunks)
    data = serialize(bs)
    bits = [8 * (len(z) + len(y)) for z, y in chunks]
    return EncodeResult(data, bs, stack, LatentStack(recon, stack.source_dims), bits)


def decode_latents(codec: LatentCodec, bs: Bitstream) -> np.ndarray:
    h, w = bs.height // 8, bs.width // 8
    state = CodecState()
    recons = []
    for z_bytes, y_bytes in bs.chunks:
        q = codec.decompress(z_bytes, y_bytes, state, bs.qp, h, w)
        recon, _, state = codec.decode_latent(q, state, bs.qp)
        recons.append(recon)
    return np.stack(recons, axis=1)


def decode_bytes(models: Models, data: bytes) -> DecodeResult:
    bs = deserialize(data)
    lat = LatentStack(decode_latents(models.codec, bs), (bs.frame_count, bs.height, bs.width))
    return DecodeResult(detokenize(models.tokenizer, lat), lat, bs)
