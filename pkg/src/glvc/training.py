"""Two-stage training: latent rate-distortion optimization, then recon-head finetuning.

Stage 1 trains the whole codec on tokenizer latents with
``sum_i [lambda(qp) * R_i + w_i * MSE_i]``. Stage 2 unfreezes only the
reconstruction head and trains it through the frozen tokenizer decoder with
``L1 + lambda_perceptual * FeatureDist + lambda_adv * Adv`` in pixel space.

Rates ``R_i`` are bits of latent ``i`` (y and z) per source pixel of one frame,
``bits / (H * W)``. The rate weight grows geometrically with qp,
``lambda(qp) = lambda_rate * lambda_span ** (qp / 31)``, so a single model covers
the whole qp range while the learnable quantization matrix stays spread out.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .codec import QP_MAX, CodecState, LatentCodec
from .engine import Adam, Module, Tensor, backward, no_grad, stack
from .engine import functional as F
from .engine.nn import Conv2d, assign_names
from .tokenizer import LatentStack, Tokenizer, VideoClip

HIER_FIRST = 8.0
HIER_SECOND = 1.2
HIER_CYCLE = (0.8, 0.5)


class TrainingError(RuntimeError):
    pass


def hierarchical_weight(i: int) -> float:
    """Distortion weight of latent ``i`` (1-based): 8.0, 1.2, then 0.8, 0.5, 0.8, ..."""
    if i < 1:
        raise ValueError(f"latent index must be >= 1, got {i}")
    if i == 1:
        return HIER_FIRST
    if i == 2:
        return HIER_SECOND
    return HIER_CYCLE[(i - 3) % 2]


def latent_weights(n: int, scheme: str = "hierarchical") -> list[float]:
    if scheme == "hierarchical":
        return [hierarchical_weight(i) for i in range(1, n + 1)]
    if scheme == "uniform":
        return [1.0] * n
    raise ValueError(f"unknown weight scheme {scheme!r}")


def parse_stages(text: str) -> list[tuple[int, int, int]]:
    """``"0-1000:1,1000-3000:5"`` -> ``[(0, 1000, 1), (1000, 3000, 5)]``."""
    out = []
    for part in text.split(","):
        span, t = part.strip().split(":")
        a, b = span.split("-")
        out.append((int(a), int(b), int(t)))
    return out


def format_stages(stages) -> str:
    return ",".join(f"{a}-{b}:{t}" for a, b, t in stages)


@dataclass
class TrainConfig:
    lambda_rate: float = 0.01
    lambda_span: float = 64.0
    weights: str = "hierarchical"
    stages: list = field(default_factory=lambda: [(0, 1000, 1), (1000, 3000, 5), (3000, 6000, 17)])
    lr: float = 1e-4
    lr_decay: float = 0.5
    batch: int = 4
    seed: int = 0
    use_memory: bool = True
    factorized: bool = False
    all_intra: bool = False
    val_qps: tuple = (0, 8, 16, 24, 31)
    log_every: int = 50
    finetune_steps: int = 1000
    finetune_lr: float = 1e-4
    finetune_batch: int = 2
    lambda_perceptual: float = 0.0
    lambda_adv: float = 0.0
    finetune_space: str = "pixel"

    def __post_init__(self):
        if isinstance(self.stages, str):
            self.stages = parse_stages(self.stages)
        self.stages = [tuple(int(v) for v in s) for s in self.stages]
        if isinstance(self.val_qps, str):
            self.val_qps = tuple(int(q) for q in self.val_qps.split(","))
        self.validate()

    def validate(self) -> None:
        if self.lambda_rate <= 0 or self.lambda_span < 1:
            raise ValueError("lambda_rate must be > 0 and lambda_span >= 1")
        latent_weights(1, self.weights)
        prev_end = 0
        for a, b, t in self.stages:
            if a != prev_end or b <= a:
                raise ValueError(f"stage ranges must be contiguous and increasing, got {self.stages}")
            if t < 1 or (t - 1) % 4:
                raise ValueError(f"stage frame count {t} is not of the form 4K+1")
            prev_end = b
        if self.finetune_space not in ("pixel", "latent"):
            raise ValueError("finetune_space must be 'pixel' or 'latent'")

    @property
    def total_steps(self) -> int:
        return self.stages[-1][1] if self.stages else 0

    def lam(self, qp: int) -> float:
        return self.lambda_rate * self.lambda_span ** (qp / QP_MAX)

    def stage_at(self, step: int) -> tuple[int, int]:
        """(stage index, frames T) for a training step."""
        for k, (a, b, t) in enumerate(self.stages):
            if a <= step < b:
                return k, t
        raise ValueError(f"step {step} outside the schedule")

    # flat key=value text
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "stages":
                v = format_stages(v)
            elif isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        kinds = {f.name: f for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            if key not in kinds:
                continue
            default = getattr(cls(), key)
            kw[key] = coerce(raw, default)
        return cls(**kw)


def coerce(raw, default):
    if not isinstance(raw, str):
        return raw
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# ---------------------------------------------------------------- losses
def rd_loss(latents, reconstructed, rates, cfg: TrainConfig, qp: int | None = None):
    """``sum_i [lambda * R_i + w_i * MSE_i]``.

    ``latents`` and ``reconstructed`` are sequences of per-latent arrays or
    tensors (or :class:`LatentStack` objects); ``rates`` holds one rate per
    latent. Returns a Tensor when any input is a Tensor, else a float.
    """
    if isinstance(latents, LatentStack):
        latents = [latents.latents[:, k] for k in range(latents.num_slots)]
    if isinstance(reconstructed, LatentStack):
        reconstructed = [reconstructed.latents[:, k] for k in range(reconstructed.num_slots)]
    latents, reconstructed, rates = list(latents), list(reconstructed), list(rates)
    if not (len(latents) == len(reconstructed) == len(rates)):
        raise ValueError(
            f"length mismatch: {len(latents)} latents, {len(reconstructed)} reconstructions, {len(rates)} rates"
        )
    lam = cfg.lambda_rate if qp is None else cfg.lam(qp)
    weights = latent_weights(len(latents), cfg.weights)
    total = 0.0
    for w, l, r, rate in zip(weights, latents, reconstructed, rates):
        d = r - l
        mse = (d * d).mean() if isinstance(d, Tensor) else float(np.mean(np.square(d)))
        total = total + rate * lam + mse * w
    return total


def sample_qp(rng: np.random.Generator, size=None):
    return rng.integers(0, QP_MAX + 1, size=size)


# ------------------------------------------------------------- data prep
def precompute_latents(tok: Tokenizer, clips) -> np.ndarray:
    """Tokenize clips (all the same shape) into an (N, 16, S, h, w) array."""
    arrs = [c.frames if isinstance(c, VideoClip) else np.asarray(c) for c in clips]
    out = []
    with no_grad():
        for i in range(0, len(arrs), 8):
            out.append(tok.encode(Tensor(np.stack(arrs[i : i + 8]))).data)
    return np.concatenate(out, axis=0)


def _run_codec(codec: LatentCodec, batch: np.ndarray, qp: int, train: bool = True):
    """Forward every slot of ``batch`` (N, 16, S, h, w); per-slot lists."""
    state = CodecState()
    recons, bits = [], []
    for k in range(batch.shape[2]):
        recon, _, by, bz, state = codec.forward_slot(Tensor(batch[:, :, k]), state, qp, train)
        recons.append(recon)
        bits.append((by, bz))
    return recons, bits


def batch_rd_loss(codec: LatentCodec, batch: np.ndarray, qp: int, cfg: TrainConfig, train: bool = True):
    """Batch-mean rd_loss plus diagnostics (bits_y, bits_z per clip, latent MSE)."""
    recons, bits = _run_codec(codec, batch, qp, train)
    n, _, s, h, w = batch.shape
    pixels = 64.0 * h * w
    rates = [(by + bz).mean() / pixels for by, bz in bits]
    targets = [batch[:, :, k] for k in range(s)]
    loss = rd_loss(targets, recons, rates, cfg, qp)
    stats = {
        "bits_y": float(sum(by.data.sum() for by, _ in bits) / n),
        "bits_z": float(sum(bz.data.sum() for _, bz in bits) / n),
        "latent_mse": float(np.mean([np.mean((r.data - t) ** 2) for r, t in zip(recons, targets)])),
    }
    return loss, stats


def validation_loss(codec: LatentCodec, latents: np.ndarray, cfg: TrainConfig) -> float:
    """Mean rd_loss over the validation latents and the fixed validation qps."""
    with no_grad():
        vals = [float(batch_rd_loss(codec, latents, qp, cfg, train=False)[0].data) for qp in cfg.val_qps]
    return float(np.mean(vals))


class MetricsLog:
    COLUMNS = ("step", "stage", "frames", "qp", "loss", "bits_y", "bits_z", "latent_mse")

    def __init__(self, path=None):
        self.rows: list[dict] = []
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("w", newline="") as fh:
                csv.writer(fh).writerow(self.COLUMNS)

    def add(self, **row) -> None:
        self.rows.append(row)
        if self.path:
            with self.path.open("a", newline="") as fh:
                csv.writer(fh).writerow([_fmt(row.get(c, "")) for c in self.COLUMNS])


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else v


def train_rd_stage(
    train_latents: np.ndarray,
    cfg: TrainConfig,
    val_latents: np.ndarray | None = None,
    codec: LatentCodec | None = None,
    metrics_path=None,
    log=None,
):
    """Stage-1 optimization on precomputed latents (N, 16, S, h, w).

    Each step samples a batch and a qp uniformly from [0, 31]; the stage
    schedule selects how many leading latent slots (T frames -> (T-1)/4 + 1
    slots) are coded. The learning rate is multiplied by ``lr_decay`` at every
    stage boundary. Returns ``(codec, history)``.
    """
    rng = np.random.default_rng(cfg.seed)
    codec = codec or LatentCodec(seed=cfg.seed, factorized=cfg.factorized)
    codec.use_memory = cfg.use_memory
    codec.force_intra = cfg.all_intra
    max_slots = train_latents.shape[2]
    need = max((t - 1) // 4 + 1 for _, _, t in cfg.stages) if cfg.stages else 1
    if need > max_slots:
        raise ValueError(f"schedule needs {need} latent slots, data has {max_slots}")
    val = val_latents if val_latents is not None else train_latents[: min(8, len(train_latents))]
    opt = Adam(codec.parameters(), lr=cfg.lr)
    metrics = MetricsLog(metrics_path)
    history = {"val_start": validation_loss(codec, val, cfg), "loss": []}
    current_stage = 0
    for step in range(cfg.total_steps):
        stage, frames = cfg.stage_at(step)
        if stage != current_stage:
            current_stage = stage
            opt.lr *= cfg.lr_decay
        slots = (frames - 1) // 4 + 1
        idx = rng.integers(len(train_latents), size=cfg.batch)
        qp = int(sample_qp(rng))
        batch = train_latents[idx, :, :slots]
        opt.zero_grad()
        loss, stats = batch_rd_loss(codec, batch, qp, cfg)
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss at step {step} (stage {stage}, qp {qp}): {stats}")
        backward(loss)
        opt.step()
        history["loss"].append(value)
        if step % cfg.log_every == 0 or step == cfg.total_steps - 1:
            metrics.add(step=step, stage=stage, frames=frames, qp=qp, loss=value, **stats)
            if log:
                log(f"rd step {step} T={frames} qp={qp} loss {value:.5f} latent_mse {stats['latent_mse']:.5f}")
    history["val_end"] = validation_loss(codec, val, cfg)
    history["metrics"] = metrics.rows
    return codec, history


# ------------------------------------------------------------- finetuning
class PatchDiscriminator(Module):
    """Four conv layers producing a map of real/fake logits per frame patch."""

    def __init__(self, seed: int = 0, width: int = 32):
        rng = np.random.default_rng(seed)
        self.layers = [
            Conv2d(rng, 3, width, k=3, stride=2),
            Conv2d(rng, width, 2 * width, k=3, stride=2),
            Conv2d(rng, 2 * width, 2 * width, k=3),
            Conv2d(rng, 2 * width, 1, k=3),
        ]
        assign_names(self)

    def forward(self, frames: Tensor) -> Tensor:
        x = frames
        for layer in self.layers[:-1]:
            x = F.leaky_relu(layer(x), 0.2)
        return self.layers[-1](x)


def _frames_2d(x: Tensor) -> Tensor:
    # (N, 3, T, H, W) -> (N*T, 3, H, W)
    n, c, t, h, w = x.shape
    return x.transpose(0, 2, 1, 3, 4).reshape(n * t, c, h, w)


def feature_distance(tok: Tokenizer, x: Tensor, y: Tensor) -> Tensor:
    """MSE between the frozen tokenizer's shared per-frame analysis features."""
    return F.mse(tok.frame_features(x), tok.frame_features(y))


def decoded_features(codec: LatentCodec, latents: np.ndarray, qp: int) -> list[np.ndarray]:
    """Per-slot pre-head features (N, C_f, h, w) as the decoder would produce them."""
    state = CodecState()
    feats = []
    with no_grad():
        for k in range(latents.shape[2]):
            _, feat, _, _, state = codec.forward_slot(Tensor(latents[:, :, k]), state, qp, train=False)
            feats.append(feat.data)
    return feats


def _head_outputs(codec: LatentCodec, feats: list[np.ndarray]) -> Tensor:
    return stack([codec.reconstruct(Tensor(f)) for f in feats], axis=2)


def finetune_loss(codec, tok, disc, clips: np.ndarray, latents: np.ndarray, qp: int, cfg: TrainConfig):
    feats = decoded_features(codec, latents, qp)
    rec_lat = _head_outputs(codec, feats)
    x_hat = tok.decode(rec_lat)
    x = Tensor(clips)
    if cfg.finetune_space == "latent":
        loss = F.l1(rec_lat, latents)
    else:
        loss = F.l1(x_hat, x)
    if cfg.lambda_perceptual > 0:
        loss = loss + feature_distance(tok, x_hat, x) * cfg.lambda_perceptual
    if cfg.lambda_adv > 0 and disc is not None:
        logits = disc(_frames_2d(x_hat))
        # non-saturating generator loss, softplus(-D(x_hat))
        loss = loss + F.softplus(-logits).mean() * cfg.lambda_adv
    return loss, x_hat


def pixel_l1(codec: LatentCodec, tok: Tokenizer, clips: np.ndarray, latents: np.ndarray, qps) -> float:
    """Held-out L1 between clips and their decoded, clamped reconstructions."""
    vals = []
    with no_grad():
        for qp in qps:
            rec = _head_outputs(codec, decoded_features(codec, latents, qp))
            x_hat = np.clip(tok.decode(rec).data, 0.0, 1.0)
            vals.append(float(np.mean(np.abs(x_hat - clips))))
    return float(np.mean(vals))


def finetune_recon_head(
    clips: np.ndarray,
    latents: np.ndarray,
    codec: LatentCodec,
    tok: Tokenizer,
    cfg: TrainConfig,
    val: tuple[np.ndarray, np.ndarray] | None = None,
    log=None,
):
    """Train only the reconstruction head; everything else stays frozen.

    ``clips`` (N, 3, T, H, W) and their latents (N, 16, S, h, w) must align.
    Returns ``(codec, history)``; raises :class:`TrainingError` if a gradient
    ever lands on a frozen parameter.
    """
    rng = np.random.default_rng(cfg.seed + 1)
    codec.freeze(True)
    head = codec.recon_head_parameters()
    for p in head:
        p.frozen = False
    tok.freeze(True)
    head_ids = {id(p) for p in head}
    frozen = [(n, p) for n, p in codec.named_parameters() if id(p) not in head_ids] + list(tok.named_parameters())
    opt = Adam(head, lr=cfg.finetune_lr)
    disc = d_opt = None
    if cfg.lambda_adv > 0:
        disc = PatchDiscriminator(cfg.seed + 2)
        d_opt = Adam(disc.parameters(), lr=cfg.finetune_lr)
    vclips, vlat = val if val is not None else (clips[:4], latents[:4])
    history = {"val_l1_start": pixel_l1(codec, tok, vclips, vlat, cfg.val_qps), "loss": []}
    for step in range(cfg.finetune_steps):
        idx = rng.integers(len(clips), size=cfg.finetune_batch)
        qp = int(sample_qp(rng))
        opt.zero_grad()
        loss, x_hat = finetune_loss(codec, tok, disc, clips[idx], latents[idx], qp, cfg)
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingError(f"non-finite finetune loss at step {step} (qp {qp})")
        backward(loss)
        leaked = [n for n, p in frozen if p.grad is not None]
        if leaked:
            raise TrainingError(f"gradient reached frozen parameters: {leaked[:3]}")
        opt.step()
        if disc is not None:
            d_opt.zero_grad()
            real = disc(_frames_2d(Tensor(clips[idx])))
            fake = disc(_frames_2d(Tensor(x_hat.data)))
            d_loss = F.softplus(-real).mean() + F.softplus(fake).mean()
            backward(d_loss)
            d_opt.step()
        history["loss"].append(value)
        if log and (step % cfg.log_every == 0 or step == cfg.finetune_steps - 1):
            log(f"finetune step {step} qp={qp} loss {value:.5f}")
    history["val_l1_end"] = pixel_l1(codec, tok, vclips, vlat, cfg.val_qps)
    codec.freeze(False)
    return codec, history
