"""``glvc`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import shutil
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .codec import StateError
from .engine.checkpoint import CheckpointError
from .entropy.bitstream import BitstreamError
from .entropy.rangecoder import DecodeError
from .io import DataError, POLICIES, load_clip, write_png_dir, write_rgb24
from .pipeline import Models, decode_bytes, encode_clip, load_codec, save_codec
from .synthetic import SyntheticSpec, generate_synthetic, make_corpus
from .tokenizer import ContractError, TokenizerConfig, load_tokenizer, pretrain_tokenizer, save_tokenizer
from .training import TrainConfig, finetune_recon_head, precompute_latents, read_config_file, train_rd_stage

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
DEFAULT_SWEEP = (0, 6, 12, 18, 24, 31)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


@dataclass
class JobConfig:
    command: str
    inputs: list[str] = field(default_factory=list)
    output: str | None = None
    qps: list[int] = field(default_factory=list)
    seed: int = 0
    resolution: tuple[int, int] | None = None
    policy: str = "pad"
    tokenizer: str | None = None
    codec: str | None = None
    overrides: dict[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        for qp in self.qps:
            if not 0 <= qp <= 31:
                raise UsageError(f"qp {qp} outside [0, 31]")
        if self.resolution and (self.resolution[0] % 8 or self.resolution[1] % 8):
            raise UsageError(f"resolution {self.resolution[0]}x{self.resolution[1]} not divisible by 8")
        if self.policy not in POLICIES:
            raise UsageError(f"unknown frame policy {self.policy}")


def _qp_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad qp list {text!r}") from exc


def _overrides(args) -> dict[str, str]:
    values: dict[str, str] = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise DataError(f"config file {path} not found")
        values.update(read_config_file(path))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    return values


def _train_config(args) -> TrainConfig:
    values = _overrides(args)
    if getattr(args, "seed", None) is not None:
        values["seed"] = str(args.seed)
    flags = {
        "factorized_hyperprior": ("factorized", "true"),
        "uniform_weights": ("weights", "uniform"),
        "no_memory": ("use_memory", "false"),
        "all_intra": ("all_intra", "true"),
    }
    for attr, (key, val) in flags.items():
        if getattr(args, attr, False):
            values[key] = val
    try:
        return TrainConfig.from_mapping(values)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad training configuration: {exc}") from exc


def _need_file(path: str | None, what: str) -> Path:
    if not path:
        raise UsageError(f"missing --{what}")
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} checkpoint not found: {p}")
    return p


def _models(args) -> Models:
    tok = load_tokenizer(_need_file(args.tokenizer, "tokenizer"))
    codec = load_codec(_need_file(args.codec, "codec"))
    codec.use_memory = not getattr(args, "no_memory", False)
    codec.force_intra = getattr(args, "all_intra", False)
    return Models(tok, codec)


def _dataset(args, log) -> list:
    """Clips from ``--data`` (clip directories / .rgb24 files) or a synthetic corpus."""
    if getattr(args, "data", None):
        root = Path(args.data)
        if not root.is_dir():
            raise DataError(f"data directory {root} not found")
        entries = sorted(p for p in root.iterdir() if p.is_dir() or p.suffix == ".rgb24")
        clips = [load_clip(p, args.policy) for p in entries]
        if not clips:
            raise DataError(f"no clips found in {root}")
    else:
        clips = make_corpus(args.seed, args.synthetic, args.frames, args.height, args.width)
    shapes = {c.shape for c in clips}
    if len(shapes) > 1:
        raise DataError(f"training clips must share one shape, found {sorted(shapes)}")
    log(f"{len(clips)} clips of shape {clips[0].shape}")
    return clips


# ----------------------------------------------------------------- verbs
def cmd_synth(args, log) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(args.seed).generate_state(args.count)
    for i, s in enumerate(seeds):
        spec = SyntheticSpec(
            seed=int(s), height=args.height, width=args.width, frames=args.frames, noise=args.noise,
            num_shapes=args.shapes,
        )
        clip = generate_synthetic(spec)
        if args.format == "png":
            write_png_dir(clip, out / f"clip_{i:04d}")
        else:
            write_rgb24(clip, out / f"clip_{i:04d}.rgb24")
    log(f"wrote {args.count} clips to {out}")
    return EXIT_OK


def cmd_pretrain(args, log) -> int:
    clips = _dataset(args, log)
    values = _overrides(args)
    cfg = TokenizerConfig(seed=args.seed)
    for k, v in values.items():
        if hasattr(cfg, k):
            setattr(cfg, k, type(getattr(cfg, k))(v))
    if args.steps is not None:
        cfg.steps = args.steps
    tok, hist = pretrain_tokenizer(clips, cfg, log=log)
    save_tokenizer(tok, args.out)
    log(f"held-out MSE {hist['heldout_mse_start']:.6f} -> {hist['heldout_mse_end']:.6f}; saved {args.out}")
    return EXIT_OK


def cmd_train(args, log) -> int:
    cfg = _train_config(args)
    tok = load_tokenizer(_need_file(args.tokenizer, "tokenizer"))
    clips = _dataset(args, log)
    n_val = max(1, len(clips) // 10)
    lat = precompute_latents(tok, clips)
    codec, hist = train_rd_stage(lat[n_val:], cfg, lat[:n_val], metrics_path=args.metrics, log=log)
    save_codec(codec, args.out)
    log(f"validation rd_loss {hist['val_start']:.5f} -> {hist['val_end']:.5f}; saved {args.out}")
    return EXIT_OK


def cmd_finetune(args, log) -> int:
    cfg = _train_config(args)
    if args.steps is not None:
        cfg.finetune_steps = args.steps
    models = _models(args)
    clips = _dataset(args, log)
    arr = np.stack([c.frames for c in clips])
    lat = precompute_latents(models.tokenizer, clips)
    n_val = max(1, len(clips) // 10)
    codec, hist = finetune_recon_head(arr[n_val:], lat[n_val:], models.codec, models.tokenizer, cfg, (arr[:n_val], lat[:n_val]), log=log)
    save_codec(codec, args.out)
    log(f"held-out pixel L1 {hist['val_l1_start']:.5f} -> {hist['val_l1_end']:.5f}; saved {args.out}")
    return EXIT_OK


def cmd_encode(args, log) -> int:
    job = JobConfig("encode", [args.input], args.out, [args.qp], policy=args.policy)
    job.validate()
    models = _models(args)
    clip = load_clip(args.input, args.policy)
    res = encode_clip(models, clip, args.qp)
    Path(args.out).write_bytes(res.data)
    print(f"bpp {res.bpp:.6f}")
    print("per-latent bits " + " ".join(str(b) for b in res.per_latent_bits))
    return EXIT_OK


def cmd_decode(args, log) -> int:
    models = _models(args)
    src = Path(args.input)
    if not src.exists():
        raise DataError(f"bitstream {src} not found")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    # same parent so the final rename is atomic
    tmp = Path(tempfile.mkdtemp(prefix=".glvc-decode-", dir=out.parent))
    try:
        res = decode_bytes(models, src.read_bytes())
        write_png_dir(res.clip, tmp)
        if out.exists():
            shutil.rmtree(out)
        tmp.rename(out)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp)
    log(f"decoded {res.clip.num_frames} frames to {out}")
    return EXIT_OK


def _sweep(models: Models, clips, qps, label: str):
    """Mean bpp / PSNR / latent MSE per qp over the clips, plus frame traces."""
    psnr_pts, mse_pts, traces = [], [], []
    for qp in qps:
        bpps, ps, ms = [], [], []
        for i, clip in enumerate(clips):
            enc = encode_clip(models, clip, qp)
            dec = decode_bytes(models, enc.data)
            bpps.append(enc.bpp)
            ps.append(ev.psnr(clip, dec.clip))
            ms.append(ev.latent_mse(enc.latents, dec.latents))
            if i == 0:
                frame_bits = ev.per_frame_rate(enc.per_latent_bits, clip.num_frames)
                traces.append((label, qp, ev.frame_quality_trace(clip, dec.clip, frame_bits, enc.latents, dec.latents)))
        b = float(np.mean(bpps))
        psnr_pts.append(ev.RdPoint(b, float(np.mean(ps)), "psnr", qp))
        mse_pts.append(ev.RdPoint(b, float(np.mean(ms)), "latent_mse", qp))
    return ev.RdCurve(psnr_pts, label), ev.RdCurve(mse_pts, label), traces


def cmd_eval(args, log) -> int:
    qps = _qp_list(args.qps)
    job = JobConfig("eval", args.input, args.out, qps, policy=args.policy)
    job.validate()
    want_bd = args.bd_rate or args.anchor_codec or args.anchor_no_memory
    if want_bd and len(qps) < 4:
        raise UsageError(f"BD-rate needs at least 4 QPs, got {len(qps)}")
    if len(set(qps)) != len(qps):
        raise UsageError("duplicate QPs in sweep")
    models = _models(args)
    clips = [load_clip(p, args.policy) for p in args.input]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    p_curve, m_curve, traces = _sweep(models, clips, qps, "test")
    curves, mcurves = [p_curve], [m_curve]
    bd_rows = []
    if want_bd:
        if args.anchor_codec:
            anchor = Models(models.tokenizer, load_codec(_need_file(args.anchor_codec, "anchor-codec")))
        else:
            anchor = Models(models.tokenizer, models.codec.with_flags(use_memory=not args.anchor_no_memory))
        ap, am, atr = _sweep(anchor, clips, qps, "anchor")
        curves.insert(0, ap)
        mcurves.insert(0, am)
        traces = atr + traces
        for a, t in ((ap, p_curve), (am, m_curve)):
            bd_rows.append(("anchor", "test", a.metric_name, ev.bd_rate(a, t, args.method)))
    ev.write_rd_points(out / "rd_points.csv", curves + mcurves)
    ev.write_frame_trace(out / "frame_trace.csv", traces)
    if bd_rows:
        ev.write_bd_rate(out / "bd_rate.csv", bd_rows)
        for _, _, metric, r in bd_rows:
            print(f"BD-rate ({metric}) {r.percent:+.3f}%")
    ev.plot_rd_curves(out / "rd_psnr.svg", curves)
    ev.plot_rd_curves(out / "rd_latent_mse.svg", mcurves)
    ev.plot_frame_trace(out / "frame_trace.svg", traces)
    for p in p_curve.points:
        print(f"qp {p.qp:2d} bpp {p.bpp:.5f} psnr {p.quality:.3f}")
    return EXIT_OK


def _read_curve(path, metric: str, label: str | None) -> ev.RdCurve:
    p = Path(path)
    if not p.exists():
        raise DataError(f"curve file {p} not found")
    with p.open() as fh:
        rows = [r for r in csv.DictReader(fh) if r["metric"] == metric and (label is None or r["label"] == label)]
    if not rows:
        raise DataError(f"no {metric} points in {p}")
    return ev.RdCurve([ev.RdPoint(float(r["bpp"]), float(r["quality"]), metric, int(r["qp"])) for r in rows], str(p))


def cmd_bdrate(args, log) -> int:
    a = _read_curve(args.anchor, args.metric, args.anchor_label)
    t = _read_curve(args.test, args.metric, args.test_label)
    res = ev.bd_rate(a, t, args.method)
    if args.out:
        ev.write_bd_rate(args.out, [(args.anchor, args.test, args.metric, res)])
    print(f"BD-rate ({args.metric}) {res.percent:+.4f}% over [{res.overlap_range[0]:.6g}, {res.overlap_range[1]:.6g}]")
    return EXIT_OK


# ---------------------------------------------------------------- parser
def _add_models(p, ablations: bool = True) -> None:
    p.add_argument("--tokenizer", required=True, help="tokenizer checkpoint (.glvp)")
    p.add_argument("--codec", required=True, help="codec checkpoint (.glvp)")
    if ablations:
        p.add_argument("--no-memory", action="store_true", help="zero the memory path at inference")
        p.add_argument("--all-intra", action="store_true", help="code every latent with the intra path")


def _add_data(p) -> None:
    p.add_argument("--data", help="directory of clips (PNG subdirectories or .rgb24 files)")
    p.add_argument("--synthetic", type=int, default=200, help="synthetic clip count when --data is absent")
    p.add_argument("--frames", type=int, default=17)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--policy", choices=POLICIES, default="pad")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")


def _add_train_flags(p) -> None:
    p.add_argument("--factorized-hyperprior", action="store_true", help="baseline non-parametric z model")
    p.add_argument("--uniform-weights", action="store_true", help="w_i = 1 for every latent")
    p.add_argument("--no-memory", action="store_true", help="train with the memory path zeroed")
    p.add_argument("--all-intra", action="store_true", help="train with every latent coded intra")
    p.add_argument("--metrics", help="CSV metrics log path")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="glvc", description="Generative latent video compression toolkit.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic moving-shape corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--frames", type=int, default=17)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--shapes", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("png", "rgb24"), default="png")

    p = sub.add_parser("pretrain-tokenizer", help="fit the toy tokenizer")
    _add_data(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="stage-1 rate-distortion training")
    _add_data(p)
    _add_train_flags(p)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("finetune", help="stage-2 reconstruction-head finetuning")
    _add_data(p)
    _add_models(p, ablations=False)
    p.add_argument("--steps", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("encode", help="encode a clip into a .glvc bitstream")
    _add_models(p)
    p.add_argument("--input", required=True, help="PNG directory or .rgb24 file")
    p.add_argument("--qp", type=int, required=True)
    p.add_argument("--policy", choices=POLICIES, default="pad")
    p.add_argument("--out", required=True)

    p = sub.add_parser("decode", help="decode a .glvc bitstream to PNG frames")
    _add_models(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="output frame directory")

    p = sub.add_parser("eval", help="QP sweep with RD points, frame traces and plots")
    _add_models(p)
    p.add_argument("--input", required=True, nargs="+")
    p.add_argument("--qps", default=",".join(str(q) for q in DEFAULT_SWEEP))
    p.add_argument("--policy", choices=POLICIES, default="pad")
    p.add_argument("--out", required=True)
    p.add_argument("--bd-rate", action="store_true", help="compare against the anchor (default: memory zeroed)")
    p.add_argument("--anchor-codec", help="anchor codec checkpoint for BD-rate")
    p.add_argument("--anchor-no-memory", action="store_true", help="anchor = same codec with memory zeroed")
    p.add_argument("--method", choices=("pchip", "cubic"), default="pchip")

    p = sub.add_parser("bdrate", help="BD-rate between two rd_points.csv files")
    p.add_argument("--anchor", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--anchor-label")
    p.add_argument("--test-label")
    p.add_argument("--metric", default="psnr")
    p.add_argument("--method", choices=("pchip", "cubic"), default="pchip")
    p.add_argument("--out")
    return ap


COMMANDS = {
    "synth": cmd_synth,
    "pretrain-tokenizer": cmd_pretrain,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "bdrate": cmd_bdrate,
}


def main(argv=None) -> int:
    def log(msg: str) -> None:
        print(msg, file=sys.stderr)

    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args, log)
    except UsageError as exc:
        log(f"glvc: usage error: {exc}")
        return EXIT_USAGE
    except (DataError, ContractError, BitstreamError, DecodeError, CheckpointError, ev.EvaluationError,
            FileNotFoundError) as exc:
        log(f"glvc: data error: {exc}")
        return EXIT_DATA
    except (StateError, AssertionError, FloatingPointError, RuntimeError) as exc:
        log(f"glvc: internal error: {exc}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
