"""The seeded reference run: corpus, tokenizer and the codec variants built from it.

Everything derives from a flat key=value profile (``configs/reference.cfg``).
Artifacts are cached in a directory keyed by a digest of the profile, so a
second build with the same profile only loads files.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .pipeline import Models, load_codec, save_codec
from .synthetic import make_corpus
from .tokenizer import TokenizerConfig, load_tokenizer, pretrain_tokenizer, save_tokenizer
from .training import TrainConfig, coerce, finetune_recon_head, precompute_latents, read_config_file, train_rd_stage

# variant name -> TrainConfig overrides
VARIANTS = {
    "full": {},
    "factorized": {"factorized": True},
    "uniform": {"weights": "uniform"},
    "intra": {"all_intra": True},
    "nomem": {"use_memory": False},
}


@dataclass
class Profile:
    corpus_seed: int = 1234
    train_clips: int = 200
    val_clips: int = 20
    test_clips: int = 20
    frames: int = 17
    height: int = 32
    width: int = 32
    tokenizer_steps: int = 2000
    tokenizer_batch: int = 2
    tokenizer_lr: float = 3e-4
    variance_weight: float = 0.002
    seed: int = 0

    @classmethod
    def split(cls, values: dict) -> tuple["Profile", TrainConfig]:
        own = {f.name for f in fields(cls)}
        mine = {k: coerce(v, getattr(cls(), k)) for k, v in values.items() if k in own}
        rest = {k: v for k, v in values.items() if k not in own}
        if "seed" in mine:
            rest.setdefault("seed", str(mine["seed"]))
        return cls(**mine), TrainConfig.from_mapping(rest)


def default_profile_path() -> Path:
    return Path(str(resources.files("glvc") / "configs" / "reference.cfg"))


def load_profile(path=None, overrides: dict | None = None) -> tuple[Profile, TrainConfig, str]:
    values = read_config_file(path or default_profile_path())
    values.update(overrides or {})
    prof, cfg = Profile.split(values)
    text = "\n".join(f"{k}={values[k]}" for k in sorted(values)) + "\n"
    return prof, cfg, text


@dataclass
class Corpus:
    train: list
    val: list
    test: list


def build_corpus(prof: Profile) -> Corpus:
    n = prof.train_clips + prof.val_clips + prof.test_clips
    clips = make_corpus(prof.corpus_seed, n, prof.frames, prof.height, prof.width)
    a, b = prof.train_clips, prof.train_clips + prof.val_clips
    return Corpus(clips[:a], clips[a:b], clips[b:])


class Reference:
    """Lazily built, cached reference artifacts."""

    def __init__(self, root, profile_path=None, overrides: dict | None = None, log=None):
        self.profile, self.cfg, text = load_profile(profile_path, overrides)
        digest = hashlib.sha256(text.encode()).hexdigest()[:12]
        self.dir = Path(root) / f"reference-{digest}"
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "profile.cfg").write_text(text)
        self.log = log or (lambda msg: None)
        self.corpus = build_corpus(self.profile)
        self._latents = None

    # ------------------------------------------------------------ tokenizer
    @property
    def tokenizer_path(self) -> Path:
        return self.dir / "tokenizer.glvp"

    def tokenizer(self):
        if not self.tokenizer_path.exists():
            p = self.profile
            tcfg = TokenizerConfig(
                steps=p.tokenizer_steps, batch=p.tokenizer_batch, lr=p.tokenizer_lr,
                variance_weight=p.variance_weight, seed=p.seed,
            )
            t0 = time.time()
            tok, hist = pretrain_tokenizer(self.corpus.train, tcfg, log=self.log)
            save_tokenizer(tok, self.tokenizer_path)
            (self.dir / "tokenizer_history.txt").write_text(
                f"heldout_mse_start={hist['heldout_mse_start']}\nheldout_mse_end={hist['heldout_mse_end']}\n"
                f"seconds={time.time() - t0:.1f}\n"
            )
        return load_tokenizer(self.tokenizer_path)

    def latents(self) -> dict[str, np.ndarray]:
        if self._latents is None:
            path = self.dir / "latents.npz"
            if not path.exists():
                tok = self.tokenizer()
                np.savez(path, **{k: precompute_latents(tok, getattr(self.corpus, k)) for k in ("train", "val", "test")})
            with np.load(path) as data:
                self._latents = {k: data[k] for k in data.files}
        return self._latents

    # --------------------------------------------------------------- codecs
    def variant_config(self, name: str) -> TrainConfig:
        text = self.cfg.to_text()
        values = dict(line.split("=", 1) for line in text.splitlines())
        values.update({k: str(v) for k, v in VARIANTS[name].items()})
        return TrainConfig.from_mapping(values)

    def codec_path(self, name: str) -> Path:
        return self.dir / f"codec_{name}.glvp"

    def history_path(self, name: str) -> Path:
        return self.dir / f"history_{name}.txt"

    def codec(self, name: str = "full"):
        """Stage-1 codec for a variant (``full_ft`` is the finetuned full codec)."""
        if name == "full_ft":
            return self.finetuned()
        path = self.codec_path(name)
        if not path.exists():
            lat = self.latents()
            cfg = self.variant_config(name)
            t0 = time.time()
            codec, hist = train_rd_stage(
                lat["train"], cfg, lat["val"], metrics_path=self.dir / f"metrics_{name}.csv", log=self.log
            )
            save_codec(codec, path)
            self.history_path(name).write_text(
                f"val_start={hist['val_start']}\nval_end={hist['val_end']}\nseconds={time.time() - t0:.1f}\n"
            )
        codec = load_codec(path)
        codec.force_intra = VARIANTS[name].get("all_intra", False)
        codec.use_memory = VARIANTS[name].get("use_memory", True)
        return codec

    def finetuned(self):
        path = self.codec_path("full_ft")
        if not path.exists():
            codec = self.codec("full")
            tok = self.tokenizer()
            lat = self.latents()
            clips = np.stack([c.frames for c in self.corpus.train])
            vclips = np.stack([c.frames for c in self.corpus.val])
            t0 = time.time()
            codec, hist = finetune_recon_head(clips, lat["train"], codec, tok, self.cfg, (vclips, lat["val"]), log=self.log)
            save_codec(codec, path)
            self.history_path("full_ft").write_text(
                f"val_l1_start={hist['val_l1_start']}\nval_l1_end={hist['val_l1_end']}\nseconds={time.time() - t0:.1f}\n"
            )
        return load_codec(path)

    def models(self, name: str = "full") -> Models:
        return Models(self.tokenizer(), self.codec(name))

    def history(self, name: str) -> dict[str, float]:
        if name == "tokenizer":
            path = self.dir / "tokenizer_history.txt"
            self.tokenizer()
        else:
            path = self.history_path(name)
            self.codec(name)
        return {k: float(v) for k, v in (line.split("=") for line in path.read_text().split())}
