"""Byte-oriented range coder with 16-bit cumulative frequencies.

The coder state is a 33-bit ``low`` (carry propagates through a cached byte
plus a run of pending 0xFF bytes) and a 32-bit ``range`` renormalized a byte at
a time whenever it drops below 2^24.

Gaussian models are never tabulated. The cumulative frequency of symbol ``s``
inside its window ``[lo, hi]`` is::

    C(s) = round((Phi(s - 0.5) - Phi(lo - 0.5)) * scale) + (s - lo)

which is monotone and gives every in-window symbol a frequency of at least 1.
Encoder and decoder evaluate exactly the same scalar expression, so the tables
they would build agree bit for bit.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from typing import Sequence

import numpy as np

from .gaussian import SIGMA_FLOOR, GaussianParams

PRECISION = 16
TOTAL = 1 << PRECISION
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
TAIL_SIGMAS = 64.0
MAX_HALF_WIDTH = float(1 << 14)
_SQRT2 = math.sqrt(2.0)


class DecodeError(ValueError):
    """Truncated or inconsistent payload."""


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self) -> None:
        if self.low < 0xFF000000 or self.low > _MASK32:
            carry = self.low >> 32
            temp = self.cache
            while True:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (self.low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (self.low & 0x00FFFFFF) << 8

    def encode(self, start: int, size: int) -> None:
        r = self.range >> PRECISION
        self.low += r * start
        self.range = r * size
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.range = _MASK32
        self.code = 0
        for _ in range(5):
            self.code = (self.code << 8) | self._next()
        self.code &= _MASK32

    def _next(self) -> int:
        if self.pos >= len(self.data):
            raise DecodeError("truncated range-coded payload")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def target(self) -> int:
        self._r = self.range >> PRECISION
        t = self.code // self._r
        if t >= TOTAL:
            raise DecodeError("decoder state out of range (model mismatch or corrupt payload)")
        return t

    def consume(self, start: int, size: int) -> None:
        r = self._r
        self.code -= r * start
        self.range = r * size
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next()) & _MASK32
            self.range <<= 8

    def check_end(self) -> None:
        if self.pos != len(self.data):
            raise DecodeError(f"{len(self.data) - self.pos} unread bytes after decoding (model mismatch)")


# ------------------------------------------------------------ Gaussian model
def _phi(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def symbol_window(mu: float, sigma: float) -> tuple[int, int]:
    """Inclusive integer window the coder can represent for N(mu, sigma)."""
    half = min(TAIL_SIGMAS * sigma, MAX_HALF_WIDTH)
    return int(math.floor(mu - half)), int(math.ceil(mu + half))


def symbol_windows(params: GaussianParams) -> tuple[np.ndarray, np.ndarray]:
    half = np.minimum(TAIL_SIGMAS * params.sigma, MAX_HALF_WIDTH)
    return np.floor(params.mu - half), np.ceil(params.mu + half)


class _GaussianCdf:
    __slots__ = ("mu", "sigma", "lo", "hi", "base", "scale")

    def __init__(self, mu: float, sigma: float):
        self.mu = mu
        self.sigma = sigma
        self.lo, self.hi = symbol_window(mu, sigma)
        self.base = _phi((self.lo - 0.5 - mu) / sigma)
        top = _phi((self.hi + 0.5 - mu) / sigma)
        n = self.hi - self.lo + 1
        self.scale = (TOTAL - n) / (top - self.base)

    def cum(self, s: int) -> int:
        if s <= self.lo:
            return 0
        if s > self.hi:
            return TOTAL
        g = (_phi((s - 0.5 - self.mu) / self.sigma) - self.base) * self.scale
        return int(math.floor(g + 0.5)) + (s - self.lo)

    def interval(self, s: int) -> tuple[int, int]:
        a = self.cum(s)
        b = self.cum(s + 1)
        if b <= a:
            raise DecodeError("degenerate cumulative frequency")
        return a, b - a

    def find(self, target: int) -> int:
        lo, hi = self.lo, self.hi
        # largest s in [lo, hi] with cum(s) <= target
        while lo < hi:
            mid = (lo + hi + 1) >> 1
            if self.cum(mid) <= target:
                lo = mid
            else:
                hi = mid - 1
        return lo


def _check_params(params: GaussianParams) -> None:
    if np.any(params.sigma < SIGMA_FLOOR):
        raise ValueError("sigma below floor")


def range_encode(symbols, params: GaussianParams) -> bytes:
    """Losslessly code integer ``symbols`` under per-symbol Gaussians."""
    s = np.asarray(symbols)
    if s.shape != params.shape:
        raise ValueError(f"symbols shape {s.shape} != params shape {params.shape}")
    _check_params(params)
    flat = np.asarray(s, dtype=np.float64).ravel()
    if np.any(flat != np.round(flat)):
        raise ValueError("symbols must be integers")
    enc = RangeEncoder()
    mus = params.mu.ravel().tolist()
    sigmas = params.sigma.ravel().tolist()
    for i, v in enumerate(flat.astype(np.int64).tolist()):
        cdf = _GaussianCdf(mus[i], sigmas[i])
        if v < cdf.lo or v > cdf.hi:
            raise ValueError(f"symbol {v} at position {i} outside window [{cdf.lo}, {cdf.hi}]")
        enc.encode(*cdf.interval(v))
    return enc.finish()


def range_decode(data: bytes, params: GaussianParams, shape: Sequence[int] | None = None) -> np.ndarray:
    """Inverse of :func:`range_encode`; returns an int64 array."""
    shape = tuple(params.shape if shape is None else shape)
    if shape != params.shape:
        raise ValueError(f"shape {shape} != params shape {params.shape}")
    _check_params(params)
    dec = RangeDecoder(data)
    mus = params.mu.ravel().tolist()
    sigmas = params.sigma.ravel().tolist()
    out = []
    for mu, sigma in zip(mus, sigmas):
        cdf = _GaussianCdf(mu, sigma)
        v = cdf.find(dec.target())
        dec.consume(*cdf.interval(v))
        out.append(v)
    dec.check_end()
    return np.array(out, dtype=np.int64).reshape(shape)


# ---------------------------------------------------------------- table model
class CdfTable:
    """Explicit per-row cumulative frequency tables (factorized densities).

    ``cdfs[r]`` is a nondecreasing int list of length ``n_r + 1`` from 0 to
    TOTAL, covering symbols ``offsets[r] .. offsets[r] + n_r - 1``.
    """

    def __init__(self, cdfs: list[list[int]], offsets: list[int]):
        self.cdfs = cdfs
        self.offsets = offsets

    def window(self, row: int) -> tuple[int, int]:
        return self.offsets[row], self.offsets[row] + len(self.cdfs[row]) - 2


def pmf_to_cdf(pmf: np.ndarray) -> list[int]:
    """Quantize a pmf to 16-bit frequencies, each at least 1."""
    pmf = np.clip(np.asarray(pmf, dtype=np.float64), 0.0, None)
    n = len(pmf)
    if n + 1 > TOTAL:
        raise ValueError("alphabet too large for 16-bit frequencies")
    cum = np.concatenate([[0.0], np.cumsum(pmf)])
    cum = cum / cum[-1] * (TOTAL - n)
    return [int(math.floor(c + 0.5)) + i for i, c in enumerate(cum.tolist())]


def range_encode_table(symbols, rows, table: CdfTable) -> bytes:
    enc = RangeEncoder()
    for v, r in zip(np.asarray(symbols).ravel().astype(np.int64).tolist(), np.asarray(rows).ravel().tolist()):
        lo, hi = table.window(r)
        if v < lo or v > hi:
            raise ValueError(f"symbol {v} outside window [{lo}, {hi}]")
        cdf = table.cdfs[r]
        i = v - lo
        enc.encode(cdf[i], cdf[i + 1] - cdf[i])
    return enc.finish()


def range_decode_table(data: bytes, rows, table: CdfTable, shape) -> np.ndarray:
    dec = RangeDecoder(data)
    out = []
    for r in np.asarray(rows).ravel().tolist():
        cdf = table.cdfs[r]
        i = bisect_right(cdf, dec.target()) - 1
        if i >= len(cdf) - 1:
            raise DecodeError("target beyond table")
        dec.consume(cdf[i], cdf[i + 1] - cdf[i])
        out.append(table.offsets[r] + i)
    dec.check_end()
    return np.array(out, dtype=np.int64).reshape(tuple(shape))
