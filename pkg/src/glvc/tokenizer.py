"""Toy causal video tokenizer.

Frames ``3 x T x H x W`` with ``T = 4K + 1`` map to latents
``16 x (K + 1) x H/8 x W/8``. Slot 0 encodes frame 0 alone; slot ``k >= 1``
encodes the group of frames ``4(k-1)+1 .. 4k``. Each frame first goes through
a shared two-stage analysis (3 -> 32 -> 64, stride 2 each); the last stride-2
stage is split into a first-frame layer and a 4-frame group layer, so the
temporal grouping never mixes groups. The decoder mirrors this.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import Adam, Module, Tensor, backward, concat, no_grad
from .engine import checkpoint as ckpt
from .engine import functional as F
from .engine.nn import Conv2d, ConvTranspose2d, assign_names

LATENT_CHANNELS = 16
GROUP = 4


class ContractError(ValueError):
    pass


def check_frames(t: int) -> int:
    """Return K for ``t = 4K + 1`` or raise."""
    if t < 1 or (t - 1) % GROUP:
        raise ContractError(f"frame count {t} is not of the form 4K+1")
    return (t - 1) // GROUP


@dataclass
class VideoClip:
    frames: np.ndarray  # (3, T, H, W) in [0, 1]
    frame_rate: float = 30.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        validate_clip(self.frames)

    @property
    def shape(self) -> tuple:
        return self.frames.shape

    @property
    def num_frames(self) -> int:
        return self.frames.shape[1]


def validate_clip(frames: np.ndarray) -> None:
    if frames.ndim != 4 or frames.shape[0] != 3:
        raise ContractError(f"clip must be (3, T, H, W), got {frames.shape}")
    _, t, h, w = frames.shape
    check_frames(t)
    if h % 8 or w % 8 or h == 0 or w == 0:
        raise ContractError(f"spatial size {h}x{w} not divisible by 8")
    if not np.all(np.isfinite(frames)) or frames.min() < 0.0 or frames.max() > 1.0:
        raise ContractError("clip values must be finite and within [0, 1]")


@dataclass
class LatentStack:
    latents: np.ndarray  # (16, K+1, h, w)
    source_dims: tuple = field(default=(0, 0, 0))

    def __post_init__(self):
        self.latents = np.asarray(self.latents, dtype=np.float64)
        if self.latents.ndim != 4 or self.latents.shape[0] != LATENT_CHANNELS:
            raise ContractError(f"latents must be ({LATENT_CHANNELS}, K+1, h, w), got {self.latents.shape}")
        if not np.all(np.isfinite(self.latents)):
            raise ContractError("non-finite latents")
        if self.source_dims == (0, 0, 0):
            _, s, h, w = self.latents.shape
            self.source_dims = (GROUP * (s - 1) + 1, 8 * h, 8 * w)

    @property
    def num_slots(self) -> int:
        return self.latents.shape[1]

    def slot(self, k: int) -> np.ndarray:
        return self.latents[:, k]


class Tokenizer(Module):
    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.enc = [Conv2d(rng, 3, 32, stride=2), Conv2d(rng, 32, 64, stride=2)]
        self.enc_first = Conv2d(rng, 64, LATENT_CHANNELS, stride=2)
        self.enc_group = Conv2d(rng, GROUP * 64, LATENT_CHANNELS, stride=2)
        self.dec_first = ConvTranspose2d(rng, LATENT_CHANNELS, 64)
        self.dec_group = ConvTranspose2d(rng, LATENT_CHANNELS, GROUP * 64)
        self.dec = [ConvTranspose2d(rng, 64, 32), ConvTranspose2d(rng, 32, 3)]
        assign_names(self)

    # frames: (N, 3, T, H, W) -> latents (N, 16, K+1, h, w)
    def frame_features(self, x: Tensor) -> Tensor:
        """Per-frame output of the shared analysis stages, (N*T, 64, H/4, W/4)."""
        n, _, t, h, w = x.shape
        f = x.transpose(0, 2, 1, 3, 4).reshape(n * t, 3, h, w)
        f = F.leaky_relu(self.enc[0](f))
        return F.leaky_relu(self.enc[1](f))

    def encode(self, x: Tensor) -> Tensor:
        n, _, t, h, w = x.shape
        k = check_frames(t)
        f = self.frame_features(x)
        fh, fw = f.shape[-2:]
        f = f.reshape(n, t, 64, fh, fw)
        first = self.enc_first(f[:, 0])  # (N, 16, h, w)
        slots = [first.unsqueeze(2)]
        if k:
            g = f[:, 1:].reshape(n * k, GROUP * 64, fh, fw)
            grp = self.enc_group(g)
            lh, lw = grp.shape[-2:]
            slots.append(grp.reshape(n, k, LATENT_CHANNELS, lh, lw).transpose(0, 2, 1, 3, 4))
        return concat(slots, axis=2)

    def decode(self, z: Tensor) -> Tensor:
        """Unclamped frames (N, 3, T, H, W)."""
        n, c, s, lh, lw = z.shape
        if c != LATENT_CHANNELS:
            raise ContractError(f"latents need {LATENT_CHANNELS} channels, got {c}")
        k = s - 1
        first = F.leaky_relu(self.dec_first(z[:, :, 0]))  # (N, 64, h4, w4)
        fh, fw = first.shape[-2:]
        feats = [first.unsqueeze(1)]
        if k:
            g = z[:, :, 1:].transpose(0, 2, 1, 3, 4).reshape(n * k, c, lh, lw)
            grp = F.leaky_relu(self.dec_group(g)).reshape(n, k * GROUP, 64, fh, fw)
            feats.append(grp)
        f = concat(feats, axis=1)
        t = 1 + GROUP * k
        f = f.reshape(n * t, 64, fh, fw)
        f = F.leaky_relu(self.dec[0](f))
        px = self.dec[1](f) + 0.5
        h, w = px.shape[-2:]
        return px.reshape(n, t, 3, h, w).transpose(0, 2, 1, 3, 4)


def tokenize(tok: Tokenizer, clip: VideoClip) -> LatentStack:
    validate_clip(clip.frames)
    with no_grad():
        z = tok.encode(Tensor(clip.frames[None])).data[0]
    _, t, h, w = clip.shape
    return LatentStack(z, (t, h, w))


def detokenize(tok: Tokenizer, stack: LatentStack, frame_rate: float = 30.0) -> VideoClip:
    with no_grad():
        x = tok.decode(Tensor(stack.latents[None])).data[0]
    return VideoClip(np.clip(x, 0.0, 1.0), frame_rate)


def latent_statistics(stack: LatentStack) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel sample mean and (population) variance."""
    flat = stack.latents.reshape(LATENT_CHANNELS, -1)
    mean = flat.mean(axis=1)
    var = ((flat - mean[:, None]) ** 2).mean(axis=1)
    return mean, var


@dataclass
class TokenizerConfig:
    steps: int = 2000
    batch: int = 2
    lr: float = 3e-4
    variance_weight: float = 0.002
    holdout: float = 0.1
    seed: int = 0
    log_every: int = 100


def _variance_penalty(z: Tensor) -> Tensor:
    # pull each channel's variance toward 1 so the codec sees well-scaled latents
    c = z.shape[1]
    flat = z.transpose(1, 0, 2, 3, 4).reshape(c, -1)
    mean = flat.mean(axis=1, keepdims=True)
    var = ((flat - mean) ** 2).mean(axis=1)
    return ((var - 1.0) ** 2).mean()


def reconstruction_mse(tok: Tokenizer, clips: list[np.ndarray]) -> float:
    if not clips:
        return float("nan")
    with no_grad():
        errs = [float(np.mean((tok.decode(tok.encode(Tensor(c[None]))).data[0] - c) ** 2)) for c in clips]
    return float(np.mean(errs))


def pretrain_tokenizer(dataset, cfg: TokenizerConfig | None = None, tok: Tokenizer | None = None, log=None):
    """Fit the tokenizer with pixel MSE plus the latent variance penalty.

    Returns ``(tokenizer, history)`` where history holds the held-out MSE at
    step 0 and at the end, and the loss trace.
    """
    cfg = cfg or TokenizerConfig()
    clips = [c.frames if isinstance(c, VideoClip) else np.asarray(c, dtype=np.float64) for c in dataset]
    if not clips:
        raise ValueError("empty dataset")
    for c in clips:
        validate_clip(c)
    rng = np.random.default_rng(cfg.seed)
    n_hold = int(round(len(clips) * cfg.holdout)) if len(clips) > 1 else 0
    order = rng.permutation(len(clips))
    held = [clips[i] for i in order[:n_hold]]
    train = [clips[i] for i in order[n_hold:]]
    probe = held if held else train[:1]

    tok = tok or Tokenizer(cfg.seed)
    opt = Adam(tok.parameters(), lr=cfg.lr)
    history = {"heldout_mse_start": reconstruction_mse(tok, probe), "loss": []}
    by_shape: dict[tuple, list[np.ndarray]] = {}
    for c in train:
        by_shape.setdefault(c.shape, []).append(c)
    shapes = sorted(by_shape)
    for step in range(cfg.steps):
        pool = by_shape[shapes[rng.integers(len(shapes))]]
        idx = rng.integers(len(pool), size=min(cfg.batch, len(pool)))
        x = Tensor(np.stack([pool[i] for i in idx]))
        opt.zero_grad()
        z = tok.encode(x)
        loss = F.mse(tok.decode(z), x) + _variance_penalty(z) * cfg.variance_weight
        if not np.isfinite(loss.item()):
            raise FloatingPointError(f"non-finite tokenizer loss at step {step}")
        backward(loss)
        opt.step()
        history["loss"].append(loss.item())
        if log and (step % cfg.log_every == 0 or step == cfg.steps - 1):
            log(f"tokenizer step {step} loss {loss.item():.5f}")
    history["heldout_mse_end"] = reconstruction_mse(tok, probe)
    return tok, history


def save_tokenizer(tok: Tokenizer, path) -> None:
    ckpt.save(path, tok.state_dict())


def load_tokenizer(path) -> Tokenizer:
    tok = Tokenizer()
    tok.load_state_dict(ckpt.load(path))
    return tok
