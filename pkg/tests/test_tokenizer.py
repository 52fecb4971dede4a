import numpy as np
import pytest

from glvc.engine import Tensor, no_grad
from glvc.tokenizer import (
    ContractError,
    LatentStack,
    Tokenizer,
    TokenizerConfig,
    VideoClip,
    detokenize,
    latent_statistics,
    load_tokenizer,
    pretrain_tokenizer,
    save_tokenizer,
    tokenize,
)


@pytest.fixture(scope="module")
def tok():
    return Tokenizer(seed=3)


def clip(t, h, w, seed=0):
    return VideoClip(np.random.default_rng(seed).uniform(size=(3, t, h, w)))


@pytest.mark.parametrize("k,h,w", [(0, 16, 16), (1, 32, 24), (4, 16, 32), (24, 64, 64)])
def test_shape_contract(tok, k, h, w):
    stack = tokenize(tok, clip(4 * k + 1, h, w))
    assert stack.latents.shape == (16, k + 1, h // 8, w // 8)
    out = detokenize(tok, stack)
    assert out.shape == (3, 4 * k + 1, h, w)


def test_documented_examples(tok):
    assert tokenize(tok, clip(97, 64, 64)).latents.shape == (16, 25, 8, 8)
    assert tokenize(tok, clip(1, 16, 16)).latents.shape == (16, 1, 2, 2)
    assert detokenize(tok, LatentStack(np.zeros((16, 25, 8, 8)))).shape == (3, 97, 64, 64)


@pytest.mark.parametrize("shape", [(3, 4, 16, 16), (3, 5, 12, 16), (3, 5, 16, 20), (1, 5, 16, 16)])
def test_contract_violations(shape):
    with pytest.raises(ContractError):
        VideoClip(np.zeros(shape))


def test_values_outside_unit_range_are_rejected():
    with pytest.raises(ContractError):
        VideoClip(np.full((3, 1, 8, 8), 1.5))


def test_latents_need_sixteen_channels(tok):
    with pytest.raises(ContractError):
        LatentStack(np.zeros((8, 2, 2, 2)))


def test_tokenize_is_causal(tok):
    base = clip(13, 16, 16, seed=1)
    ref = tokenize(tok, base).latents
    # frame 0 -> slot 0; frames 4(k-1)+1..4k -> slot k
    for frame, slot in [(0, 0), (1, 1), (4, 1), (5, 2), (8, 2), (12, 3)]:
        f = base.frames.copy()
        f[:, frame] = 1.0 - f[:, frame]
        lat = tokenize(tok, VideoClip(f)).latents
        changed = [k for k in range(4) if not np.array_equal(lat[:, k], ref[:, k])]
        assert changed == [slot], (frame, changed)


def test_detokenize_is_causal(tok):
    z = np.random.default_rng(2).normal(size=(16, 4, 2, 2))
    # raw decoder output avoids the clamp hiding a change
    with no_grad():
        ref = tok.decode(Tensor(z[None])).data[0]
        z2 = z.copy()
        z2[:, 2] += 1.0
        out = tok.decode(Tensor(z2[None])).data[0]
    diff = np.abs(out - ref).reshape(3, 13, -1).max(axis=(0, 2))
    assert list(np.nonzero(diff)[0]) == [5, 6, 7, 8]


def test_zero_latents_decode_to_valid_clip(tok):
    out = detokenize(tok, LatentStack(np.zeros((16, 2, 2, 2))))
    assert np.all(np.isfinite(out.frames))
    assert out.frames.min() >= 0 and out.frames.max() <= 1


def test_latent_statistics_examples():
    mean, var = latent_statistics(LatentStack(np.zeros((16, 3, 2, 2))))
    assert np.all(mean == 0) and np.all(var == 0)
    z = np.random.default_rng(0).normal(size=(16, 3, 2, 2))
    z[0] = 2.0
    mean, var = latent_statistics(LatentStack(z))
    assert mean[0] == 2.0 and var[0] == 0.0


def test_latent_statistics_matches_two_pass_oracle():
    z = np.random.default_rng(5).normal(3.0, 2.0, size=(16, 4, 3, 5))
    mean, var = latent_statistics(LatentStack(z))
    for c in range(16):
        vals = [float(v) for v in z[c].ravel()]
        m = sum(vals) / len(vals)
        v = sum((x - m) ** 2 for x in vals) / len(vals)
        assert abs(mean[c] - m) < 1e-12
        assert abs(var[c] - v) < 1e-12


def test_pretrain_rejects_empty_dataset():
    with pytest.raises(ValueError):
        pretrain_tokenizer([])


def test_pretrain_rejects_bad_clip():
    with pytest.raises(ContractError):
        pretrain_tokenizer([np.zeros((3, 4, 16, 16))], TokenizerConfig(steps=1))


def test_constant_clip_is_learned():
    color = np.array([0.3, 0.6, 0.9])[:, None, None, None]
    c = VideoClip(np.ones((3, 5, 16, 16)) * color)
    _, hist = pretrain_tokenizer([c], TokenizerConfig(steps=200, batch=1, lr=1e-3))
    assert hist["heldout_mse_end"] < 1e-3
    assert hist["heldout_mse_end"] < hist["heldout_mse_start"]


def test_checkpoint_round_trip(tmp_path, tok):
    path = tmp_path / "tok.glvp"
    save_tokenizer(tok, path)
    other = load_tokenizer(path)
    c = clip(5, 16, 16, seed=9)
    assert np.array_equal(tokenize(tok, c).latents, tokenize(other, c).latents)
