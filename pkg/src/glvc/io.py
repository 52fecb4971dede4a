"""Clip ingestion and frame output.

Inputs are either a directory of numbered PNG frames or a raw ``.rgb24`` file
(packed 8-bit RGB, frame after frame) with a JSON sidecar ``<file>.json``
holding ``{"width": W, "height": H}`` and optionally ``"frame_rate"``.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .tokenizer import VideoClip

POLICIES = ("pad", "truncate")


class DataError(ValueError):
    pass


def adjust_frame_count(frames: np.ndarray, policy: str = "pad") -> np.ndarray:
    """Make T = 4K+1: ``pad`` repeats the last frame, ``truncate`` drops the tail."""
    if policy not in POLICIES:
        raise ValueError(f"unknown frame policy {policy!r}")
    t = frames.shape[1]
    if t == 0:
        raise DataError("empty frame sequence")
    extra = (t - 1) % 4
    if extra == 0:
        return frames
    if policy == "truncate":
        return frames[:, : t - extra]
    pad = 4 - extra
    return np.concatenate([frames, np.repeat(frames[:, -1:], pad, axis=1)], axis=1)


def _frame_number(p: Path) -> int:
    m = re.findall(r"\d+", p.stem)
    if not m:
        raise DataError(f"frame file without a number: {p.name}")
    return int(m[-1])


def read_png_dir(path) -> np.ndarray:
    path = Path(path)
    files = sorted(path.glob("*.png"), key=_frame_number)
    if not files:
        raise DataError(f"no PNG frames in {path}")
    frames = []
    for f in files:
        try:
            with Image.open(f) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        except OSError as exc:
            raise DataError(f"cannot read {f}: {exc}") from exc
        if frames and arr.shape != frames[0].shape:
            raise DataError(f"{f.name} is {arr.shape[1]}x{arr.shape[0]}, expected {frames[0].shape[1]}x{frames[0].shape[0]}")
        frames.append(arr)
    return np.stack(frames).transpose(3, 0, 1, 2)  # (3, T, H, W)


def read_rgb24(path) -> tuple[np.ndarray, float]:
    path = Path(path)
    side = Path(str(path) + ".json")
    try:
        meta = json.loads(side.read_text())
        w, h = int(meta["width"]), int(meta["height"])
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"missing or invalid sidecar {side}: {exc}") from exc
    try:
        raw = np.frombuffer(path.read_bytes(), dtype=np.uint8)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    frame_bytes = 3 * w * h
    if raw.size == 0 or raw.size % frame_bytes:
        raise DataError(f"{path}: {raw.size} bytes is not a whole number of {w}x{h} frames")
    frames = raw.reshape(-1, h, w, 3).astype(np.float64) / 255.0
    return frames.transpose(3, 0, 1, 2), float(meta.get("frame_rate", 30.0))


def load_clip(path, policy: str = "pad") -> VideoClip:
    path = Path(path)
    if path.is_dir():
        frames, rate = read_png_dir(path), 30.0
    elif path.suffix == ".rgb24":
        frames, rate = read_rgb24(path)
    elif not path.exists():
        raise DataError(f"input {path} does not exist")
    else:
        raise DataError(f"unsupported input {path} (expected a PNG directory or .rgb24 file)")
    frames = adjust_frame_count(frames, policy)
    _, t, h, w = frames.shape
    if h % 8 or w % 8:
        raise DataError(f"frame size {w}x{h} is not divisible by 8")
    return VideoClip(frames, rate)


def to_uint8(frames: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(np.asarray(frames) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def write_png_dir(clip: VideoClip, path) -> list[Path]:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    data = to_uint8(clip.frames).transpose(1, 2, 3, 0)  # (T, H, W, 3)
    out = []
    for t, frame in enumerate(data):
        f = path / f"frame_{t:05d}.png"
        Image.fromarray(frame, "RGB").save(f, optimize=False)
        out.append(f)
    return out


def write_rgb24(clip: VideoClip, path) -> None:
    path = Path(path)
    _, _, h, w = clip.shape
    path.write_bytes(to_uint8(clip.frames).transpose(1, 2, 3, 0).tobytes())
    Path(str(path) + ".json").write_text(json.dumps({"width": w, "height": h, "frame_rate": clip.frame_rate}))
