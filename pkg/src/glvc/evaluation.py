"""Rate accounting, quality metrics, RD curves, BD-rate and frame-wise traces."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

PSNR_CAP = 100.0
LOWER_BETTER = {"latent_mse", "mse"}


class EvaluationError(ValueError):
    pass


# ------------------------------------------------------------------ rates
def per_frame_rate(per_latent_bits, frames: int) -> list[float]:
    """Spread latent bits over frames: latent 0 -> frame 0, latent k -> 4 frames at 1/4 each."""
    bits = [float(b) for b in per_latent_bits]
    if frames < 1 or (frames - 1) % 4 or len(bits) != (frames - 1) // 4 + 1:
        raise EvaluationError(f"{len(bits)} latents do not match T={frames} (need T = 4*(latents-1) + 1)")
    out = [bits[0]]
    for b in bits[1:]:
        out.extend([b / 4.0] * 4)
    return out


def bpp_from_size(num_bytes: int, width: int, height: int, frames: int) -> float:
    return 8.0 * num_bytes / (width * height * frames)


# --------------------------------------------------------------- quality
def _frames(x) -> np.ndarray:
    return np.asarray(getattr(x, "frames", x), dtype=np.float64)


def frame_psnr(x, y) -> np.ndarray:
    """PSNR per frame for (3, T, H, W) clips with peak 1, capped at 100 dB."""
    a, b = _frames(x), _frames(y)
    if a.shape != b.shape:
        raise EvaluationError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2, axis=(0, 2, 3))
    with np.errstate(divide="ignore"):
        val = np.where(mse > 0, -10.0 * np.log10(np.where(mse > 0, mse, 1.0)), PSNR_CAP)
    return np.minimum(val, PSNR_CAP)


def psnr(x, y) -> float:
    """Mean of per-frame PSNR (dB)."""
    return float(np.mean(frame_psnr(x, y)))


def latent_mse(a, b) -> float:
    a, b = np.asarray(getattr(a, "latents", a)), np.asarray(getattr(b, "latents", b))
    if a.shape != b.shape:
        raise EvaluationError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


# ------------------------------------------------------------- RD curves
@dataclass
class RdPoint:
    bpp: float
    quality: float
    metric_name: str
    qp: int = -1


@dataclass
class RdCurve:
    points: list[RdPoint]
    label: str = ""

    def __post_init__(self):
        self.points = sorted(self.points, key=lambda p: p.bpp)
        names = {p.metric_name for p in self.points}
        if len(names) > 1:
            raise EvaluationError(f"mixed metrics in one curve: {sorted(names)}")
        bpps = [p.bpp for p in self.points]
        if any(b <= 0 for b in bpps) or any(b2 <= b1 for b1, b2 in zip(bpps, bpps[1:])):
            raise EvaluationError("curve bpp values must be positive and strictly increasing")

    @property
    def metric_name(self) -> str:
        return self.points[0].metric_name if self.points else ""

    @classmethod
    def from_arrays(cls, bpp, quality, metric_name: str = "psnr", qps=None, label: str = "") -> "RdCurve":
        qps = list(qps) if qps is not None else [-1] * len(bpp)
        return cls([RdPoint(float(b), float(q), metric_name, int(p)) for b, q, p in zip(bpp, quality, qps)], label)


@dataclass
class BdRateResult:
    percent: float
    overlap_range: tuple[float, float]
    method: str = "pchip"


def _ingest(curve: RdCurve) -> tuple[np.ndarray, np.ndarray]:
    """(quality ascending, log10 bpp); lower-better metrics are negated first."""
    if len(curve.points) < 4:
        raise EvaluationError(f"BD-rate needs at least 4 points, curve {curve.label!r} has {len(curve.points)}")
    sign = -1.0 if curve.metric_name in LOWER_BETTER else 1.0
    q = np.array([sign * p.quality for p in curve.points])
    r = np.log10([p.bpp for p in curve.points])
    order = np.argsort(q)
    q, r = q[order], r[order]
    if np.any(np.diff(q) <= 0) or np.any(np.diff(r) <= 0):
        raise EvaluationError(f"curve {curve.label!r} is not monotone: quality must rise strictly with bpp")
    return q, r


def _integral(q: np.ndarray, r: np.ndarray, lo: float, hi: float, method: str) -> float:
    if method == "pchip":
        return float(PchipInterpolator(q, r).integrate(lo, hi))
    if method == "cubic":
        poly = np.polyint(np.polyfit(q, r, 3))
        return float(np.polyval(poly, hi) - np.polyval(poly, lo))
    raise EvaluationError(f"unknown interpolation {method!r}")


def bd_rate(anchor: RdCurve, test: RdCurve, method: str = "pchip") -> BdRateResult:
    """Bjontegaard delta rate of ``test`` against ``anchor`` in percent.

    Log-rate is interpolated as a function of quality (shape-preserving
    piecewise cubic by default, the classic cubic polynomial with
    ``method="cubic"``) and averaged over the shared quality range.
    """
    if anchor.metric_name != test.metric_name:
        raise EvaluationError("curves use different metrics")
    qa, ra = _ingest(anchor)
    qt, rt = _ingest(test)
    lo, hi = max(qa[0], qt[0]), min(qa[-1], qt[-1])
    if not hi > lo:
        raise EvaluationError("quality ranges do not overlap")
    diff = (_integral(qt, rt, lo, hi, method) - _integral(qa, ra, lo, hi, method)) / (hi - lo)
    sign = -1.0 if anchor.metric_name in LOWER_BETTER else 1.0
    overlap = (sign * lo, sign * hi) if sign > 0 else (sign * hi, sign * lo)
    return BdRateResult((10.0**diff - 1.0) * 100.0, overlap, method)


# ------------------------------------------------------------ frame trace
@dataclass
class FrameTrace:
    rows: list[tuple[int, float, float, float]]  # (index, bits, psnr, latent_mse)
    slope: float  # dB per frame

    @property
    def psnr(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows])

    @property
    def bits(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])


def regression_slope(values) -> float:
    y = np.asarray(values, dtype=np.float64)
    if y.size < 2:
        return 0.0
    x = np.arange(y.size, dtype=np.float64)
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


def slot_of_frame(t: int) -> int:
    return 0 if t == 0 else (t - 1) // 4 + 1


def frame_quality_trace(original, decoded, per_frame_bits, latents=None, decoded_latents=None) -> FrameTrace:
    """Per-frame (index, bits, PSNR, latent MSE) plus the PSNR-vs-index slope.

    Latent MSE of a frame is that of the latent slot covering it; it is NaN
    when latents are not supplied.
    """
    per = frame_psnr(original, decoded)
    bits = list(per_frame_bits)
    if len(bits) != per.size:
        raise EvaluationError(f"{len(bits)} frame rates for {per.size} frames")
    if latents is not None:
        la = np.asarray(getattr(latents, "latents", latents))
        lb = np.asarray(getattr(decoded_latents, "latents", decoded_latents))
        slot_mse = np.mean((la - lb) ** 2, axis=(0, 2, 3))
    rows = []
    for t in range(per.size):
        lm = float(slot_mse[slot_of_frame(t)]) if latents is not None else float("nan")
        rows.append((t, float(bits[t]), float(per[t]), lm))
    return FrameTrace(rows, regression_slope(per))


# ----------------------------------------------------------------- timing
@dataclass
class TimingReport:
    resolution: str
    frames: int
    encode_ms_per_frame: float
    decode_ms_per_frame: float
    runs: int


def median_ms(fn, runs: int = 3) -> float:
    times = []
    for _ in range(max(runs, 1)):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1000.0)
    return float(np.median(times))


def timing_report(clip, models, qp: int, runs: int = 3) -> TimingReport:
    """Median wall-clock encode and decode time per frame over ``runs`` runs."""
    from .pipeline import decode_bytes, encode_clip

    frames = _frames(clip)
    _, t, h, w = frames.shape
    payload = encode_clip(models, clip, qp).data
    enc = median_ms(lambda: encode_clip(models, clip, qp), runs)
    dec = median_ms(lambda: decode_bytes(models, payload), runs)
    return TimingReport(f"{w}x{h}", t, enc / t, dec / t, runs)


# -------------------------------------------------------------- artifacts
RD_COLUMNS = ("label", "qp", "bpp", "metric", "quality", "dists", "lpips")
TRACE_COLUMNS = ("label", "qp", "frame", "bits", "psnr_db", "latent_mse")
BD_COLUMNS = ("anchor", "test", "metric", "method", "bd_rate_percent", "overlap_low", "overlap_high")


def _write(path, columns, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])


def write_rd_points(path, curves: list[RdCurve]) -> None:
    """One row per point; perceptual-network columns are placeholders ("n/a")."""
    _write(
        path,
        RD_COLUMNS,
        [(c.label, p.qp, p.bpp, p.metric_name, p.quality, "n/a", "n/a") for c in curves for p in c.points],
    )


def write_frame_trace(path, traces: list[tuple[str, int, FrameTrace]]) -> None:
    """PSNR is capped at 100 dB for identical frames."""
    _write(path, TRACE_COLUMNS, [(lab, qp, *row) for lab, qp, tr in traces for row in tr.rows])


def write_bd_rate(path, results: list[tuple[str, str, str, BdRateResult]]) -> None:
    _write(
        path,
        BD_COLUMNS,
        [(a, t, m, r.method, r.percent, r.overlap_range[0], r.overlap_range[1]) for a, t, m, r in results],
    )


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "glvc"
    return plt


def _save_svg(fig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})


def plot_rd_curves(path, curves: list[RdCurve]) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    for c in curves:
        ax.plot([p.bpp for p in c.points], [p.quality for p in c.points], marker="o", label=c.label or None)
    ax.set_xlabel("bpp")
    ax.set_ylabel(curves[0].metric_name if curves else "quality")
    if any(c.label for c in curves):
        ax.legend()
    _save_svg(fig, path)
    plt.close(fig)


def plot_frame_trace(path, traces: list[tuple[str, int, FrameTrace]]) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for lab, qp, tr in traces:
        ax.plot(range(len(tr.rows)), tr.psnr, label=f"{lab} qp={qp}")
    ax.set_xlabel("frame")
    ax.set_ylabel("PSNR (dB)")
    ax.legend()
    _save_svg(fig, path)
    plt.close(fig)
