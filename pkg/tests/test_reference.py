"""Behavioural checks on the trained reference models."""

import numpy as np
import pytest

from glvc import evaluation as ev
from glvc.pipeline import decode_bytes, encode_clip, encode_latents
from glvc.tokenizer import LatentStack


@pytest.fixture(scope="module")
def test_latents(reference):
    return reference.latents()["test"]


def _rate_and_mse(codec, latents, qp):
    bits, mse = 0, []
    for lat in latents:
        chunks, recon = encode_latents(codec, LatentStack(lat), qp)
        bits += sum(8 * (len(z) + len(y)) for z, y in chunks)
        mse.append(np.mean((recon - lat) ** 2))
    return bits, float(np.mean(mse))


def test_tokenizer_learned(reference):
    h = reference.history("tokenizer")
    assert h["heldout_mse_end"] < 0.5 * h["heldout_mse_start"]


def test_higher_qp_gives_smaller_files(reference):
    models = reference.models("full")
    for clip in reference.corpus.test[:5]:
        assert len(encode_clip(models, clip, 25).data) < len(encode_clip(models, clip, 5).data)


def test_coarser_qp_has_fewer_nonzeros(reference, test_latents):
    from glvc.codec import CodecState

    codec = reference.codec("full")
    lat = test_latents[0]
    counts = {}
    for qp in (0, 31):
        state, nz = CodecState(), []
        for k in range(lat.shape[1]):
            q, state, _, _ = codec.encode_latent(lat[:, k], state, qp)
            nz.append(int(np.count_nonzero(q)))
        counts[qp] = nz
    slots = list(zip(counts[0], counts[31]))[:10]
    assert sum(hi <= lo for lo, hi in slots) >= 0.9 * len(slots)


def test_rate_falls_and_distortion_rises_with_qp(reference, test_latents):
    codec = reference.codec("full")
    pts = [_rate_and_mse(codec, test_latents[:6], qp) for qp in (0, 6, 12, 18, 24, 31)]
    bits = [b for b, _ in pts]
    mse = [m for _, m in pts]
    assert all(a > b for a, b in zip(bits, bits[1:]))
    assert mse[-1] > mse[0]


def test_finetune_lowered_pixel_l1(reference):
    h = reference.history("full_ft")
    assert h["val_l1_end"] < h["val_l1_start"]


def test_memory_matters_at_inference(reference, test_latents):
    codec = reference.codec("full")
    with_mem, _ = _rate_and_mse(codec, test_latents[:6], 8)
    without, _ = _rate_and_mse(codec.with_flags(use_memory=False), test_latents[:6], 8)
    assert without > with_mem


def test_decoded_clip_quality(reference):
    models = reference.models("full_ft")
    clip = reference.corpus.test[0]
    enc = encode_clip(models, clip, 0)
    dec = decode_bytes(models, enc.data)
    assert np.array_equal(dec.latents.latents, enc.reconstruction.latents)
    assert ev.psnr(clip.frames, dec.clip.frames) > 18.0
