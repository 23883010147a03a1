"""Detector clicks: synthesis from a flux trace, time-stamp files and a start-stop-free g2.

Two detectors sit behind a 50/50 splitter. Click times are integers in units
of the 164 ps tagger tick. Files are either binary (16-byte header, then packed
little-endian ``(u8 channel, u64 tick)`` records in arrival order) or text with
one ``channel tick`` pair per line.
"""

from __future__ import annotations

import io
import logging
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .correlator import G2Curve, InsufficientDataError, trace_g2

log = logging.getLogger(__name__)

TICK = 164e-12  # s
TICK_FS = 164000
MAGIC = b"QBTS"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")
RECORD_DTYPE = np.dtype([("channel", "u1"), ("tick", "<u8")])  # packed, 9 bytes

__all__ = [
    "ClickFormatError",
    "ClickRecord",
    "ClickStreams",
    "CoincidenceHistogram",
    "ClickG2",
    "synthesize_clicks",
    "parse_timestamps",
    "write_timestamps",
    "estimate_g2",
    "expected_g2",
    "bin_ticks",
    "reduced_chi2",
]


class ClickFormatError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


@dataclass(frozen=True)
class ClickRecord:
    channel: int
    tick: int

    @property
    def time(self) -> float:
        return self.tick * TICK


@dataclass
class ClickStreams:
    """Per-channel sorted tick arrays plus the observation span in ticks."""

    ticks: tuple  # (ch0, ch1) uint64 arrays
    span: int

    @property
    def duration(self) -> float:
        return self.span * TICK

    def records(self) -> list[ClickRecord]:
        """All clicks merged in time order; ties go to channel 0 first."""
        ch = np.concatenate([np.zeros(self.ticks[0].size, np.uint8), np.ones(self.ticks[1].size, np.uint8)])
        tk = np.concatenate(self.ticks)
        order = np.lexsort((ch, tk))
        return [ClickRecord(int(c), int(t)) for c, t in zip(ch[order], tk[order])]

    def swapped(self) -> "ClickStreams":
        return ClickStreams((self.ticks[1], self.ticks[0]), self.span)

    def __len__(self):
        return int(self.ticks[0].size + self.ticks[1].size)


# --- synthesis ------------------------------------------------------------------------

def _thin(rng, t_grid, rate, t_end):
    """Inhomogeneous Poisson times on [t_grid[0], t_end) by thinning a piecewise-linear rate."""
    lam_max = float(rate.max()) if rate.size else 0.0
    if lam_max <= 0.0:
        return np.empty(0)
    t0 = float(t_grid[0])
    n = rng.poisson(lam_max * (t_end - t0))
    cand = np.sort(rng.uniform(t0, t_end, n))
    lam = np.interp(cand, t_grid, rate)
    return cand[rng.uniform(0.0, lam_max, n) < lam]


def _detector(rng, t, dead_time, afterpulse_prob):
    if afterpulse_prob > 0 and t.size:
        # afterpulses trail the parent click by the dead time plus an exponential 100 ns delay
        parent = t[rng.uniform(size=t.size) < afterpulse_prob]
        t = np.sort(np.concatenate([t, parent + dead_time + rng.exponential(100e-9, parent.size)]))
    if dead_time > 0 and t.size:
        keep = np.ones(t.size, bool)
        last = -np.inf
        for i, x in enumerate(t):
            if x - last < dead_time:
                keep[i] = False
            else:
                last = x
        t = t[keep]
    return t


def synthesize_clicks(flux, dt: float, efficiency: float = 1.0, seed=None, *, dark_rate: float = 0.0,
                      scale: float = 1.0, dead_time: float = 0.0, afterpulse_prob: float = 0.0,
                      t0: float = 0.0) -> ClickStreams:
    """Two click streams from a photon-flux trace sampled every ``dt`` seconds.

    The detection rate efficiency*scale*flux(t) is linearly interpolated
    between samples and thinned; each detection picks a detector with
    probability 1/2. ``dark_rate`` adds flat Poisson clicks per detector.
    ``scale`` multiplies the flux, which leaves g2 unchanged but buys counts.
    """
    flux = np.asarray(flux, float)
    if flux.size and flux.min() < 0:
        raise ValueError("flux must be non-negative")
    if not 0 < efficiency <= 1:
        raise ValueError("efficiency must be in (0, 1]")
    rng = np.random.default_rng(seed)
    n = flux.size
    span_s = n * dt
    span = int(round(span_s / TICK))
    if n == 0:
        return ClickStreams((np.empty(0, np.uint64), np.empty(0, np.uint64)), 0)
    grid = t0 + dt * np.arange(n)
    rate = efficiency * scale * flux
    t = _thin(rng, grid, rate, t0 + span_s)
    side = rng.uniform(size=t.size) < 0.5
    out = []
    for ch, sel in enumerate((~side, side)):
        tc = t[sel]
        if dark_rate > 0:
            tc = np.sort(np.concatenate([tc, rng.uniform(t0, t0 + span_s, rng.poisson(dark_rate * span_s))]))
        tc = _detector(rng, tc, dead_time, afterpulse_prob)
        out.append(np.floor((tc - t0) / TICK).astype(np.uint64))
    return ClickStreams(tuple(out), span)


# --- files ----------------------------------------------------------------------------

def write_timestamps(path, streams: ClickStreams, fmt: str = "binary") -> None:
    recs = streams.records()
    if fmt == "binary":
        arr = np.empty(len(recs), RECORD_DTYPE)
        arr["channel"] = [r.channel for r in recs]
        arr["tick"] = [r.tick for r in recs]
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, TICK_FS))
            fh.write(arr.tobytes())
    elif fmt == "text":
        with open(path, "w") as fh:
            fh.write(f"# channel tick  (tick = {TICK_FS} fs)\n")
            fh.write(f"# span {streams.span}\n")
            for r in recs:
                fh.write(f"{r.channel} {r.tick}\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")


def _split(ch, tk, span, where):
    out = []
    for c in (0, 1):
        sel = np.nonzero(ch == c)[0]
        t = tk[sel]
        if t.size > 1:
            bad = np.nonzero(t[1:] < t[:-1])[0]
            if bad.size:
                i = int(sel[bad[0] + 1])
                raise ClickFormatError(f"tick regression on channel {c}", where(i))
        out.append(t.astype(np.uint64))
    if span is None:
        span = int(tk.max()) + 1 if tk.size else 0
    return ClickStreams(tuple(out), int(span))


def _parse_binary(data: bytes) -> ClickStreams:
    if len(data) < _HEADER.size:
        raise ClickFormatError("truncated header")
    magic, version, tick_fs = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ClickFormatError("bad magic")
    if version != VERSION:
        raise ClickFormatError(f"unsupported version {version}")
    if tick_fs != TICK_FS:
        raise ClickFormatError(f"tick length {tick_fs} fs, expected {TICK_FS}")
    body = data[_HEADER.size:]
    if len(body) % RECORD_DTYPE.itemsize:
        raise ClickFormatError("trailing partial record", len(body) // RECORD_DTYPE.itemsize)
    arr = np.frombuffer(body, RECORD_DTYPE)
    ch = arr["channel"]
    bad = np.nonzero(ch > 1)[0]
    if bad.size:
        raise ClickFormatError(f"unknown channel {int(ch[bad[0]])}", int(bad[0]))
    # binary positions are record indices
    return _split(ch, arr["tick"], None, lambda i: i)


def _parse_text(text: str) -> ClickStreams:
    ch, tk, lines = [], [], []
    span = None
    for no, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if s.startswith("#"):
            parts = s[1:].split()
            if len(parts) == 2 and parts[0] == "span":
                span = int(parts[1])
            continue
        if not s:
            continue
        parts = s.split()
        if len(parts) != 2:
            raise ClickFormatError("expected 'channel tick'", no)
        try:
            c, t = int(parts[0]), int(parts[1])
        except ValueError:
            raise ClickFormatError(f"not an integer pair: {s!r}", no) from None
        if c not in (0, 1):
            raise ClickFormatError(f"unknown channel {c}", no)
        if t < 0:
            raise ClickFormatError("negative tick", no)
        ch.append(c)
        tk.append(t)
        lines.append(no)
    return _split(np.array(ch, np.uint8), np.array(tk, np.uint64), span, lambda i: lines[i])


def parse_timestamps(source) -> ClickStreams:
    """Read a binary or text time-stamp file (path, bytes or text stream)."""
    if isinstance(source, (str, Path)) and Path(source).exists():
        data = Path(source).read_bytes()
    elif isinstance(source, bytes):
        data = source
    elif isinstance(source, io.TextIOBase):
        data = source.read().encode()
    elif hasattr(source, "read"):
        data = source.read()
    else:
        raise FileNotFoundError(source)
    if data[:4] == MAGIC:
        st = _parse_binary(data)
    else:
        try:
            text = data.decode()
        except UnicodeDecodeError:
            raise ClickFormatError("neither a binary time-stamp file nor text") from None
        st = _parse_text(text)
    if len(st) == 0:
        warnings.warn("time-stamp file holds no clicks", stacklevel=2)
    return st


# --- estimation -----------------------------------------------------------------------

@dataclass
class CoincidenceHistogram:
    bin_width: float
    tau: np.ndarray  # bin centers, s
    bins: np.ndarray  # counts of t1 - t0 per bin
    singles_rates: tuple
    duration: float

    def merge(self, other: "CoincidenceHistogram") -> "CoincidenceHistogram":
        if self.bin_width != other.bin_width or self.tau.size != other.tau.size:
            raise ValueError("histograms on different grids")
        d = self.duration + other.duration
        rates = tuple((a * self.duration + b * other.duration) / d
                      for a, b in zip(self.singles_rates, other.singles_rates))
        return CoincidenceHistogram(self.bin_width, self.tau, self.bins + other.bins, rates, d)

    def normalized(self):
        """(g2, err). Each bin is divided by r0 r1 bw (T - |tau|), the expected count of uncorrelated streams."""
        r0, r1 = self.singles_rates
        expect = r0 * r1 * self.bin_width * (self.duration - np.abs(self.tau))
        if np.any(expect <= 0):
            raise InsufficientDataError("no overlap at the largest delay")
        return self.bins / expect, np.sqrt(self.bins) / expect


@dataclass
class ClickG2:
    tau: np.ndarray
    g2: np.ndarray
    err: np.ndarray
    histogram: CoincidenceHistogram

    def curve(self) -> G2Curve:
        """As a correlator curve with empty decomposition channels."""
        h = self.histogram
        return G2Curve(self.tau, self.g2, {}, self.err, 0.0, float(len(h.bins)),
                       float(sum(h.singles_rates)))


def bin_ticks(bin_width: float) -> int:
    """Odd number of ticks closest to ``bin_width``, so bins tile the integer lags exactly."""
    return max(1, 2 * int(round((bin_width / TICK - 1) / 2)) + 1)


def _lag_counts_fft(t0, t1, span, W, shard=1 << 22):
    """Same counts by FFT over time shards of channel 0; cheaper for dense streams."""
    out = np.zeros(2 * W + 1, np.int64)
    shard = min(shard, max(span, 1))
    n = 1 << int(np.ceil(np.log2(2 * shard + 2 * W)))
    for a in range(0, max(span, 1), shard):
        i0 = t0[np.searchsorted(t0, a):np.searchsorted(t0, a + shard)] - a
        if i0.size == 0:
            continue
        j1 = t1[np.searchsorted(t1, max(a - W, 0)):np.searchsorted(t1, a + shard + W)]
        if j1.size == 0:
            continue
        c0 = np.bincount(i0, minlength=shard)
        c1 = np.bincount(j1 + W - a, minlength=shard + 2 * W)  # index d + W = j1 - i0
        x = np.fft.irfft(np.conj(np.fft.rfft(c0, n)) * np.fft.rfft(c1, n), n)[: 2 * W + 1]
        out += np.rint(x).astype(np.int64)
    return out


def _lag_counts(t0, t1, W, chunk=1 << 18):
    """Exact counts of t1 - t0 = d for |d| <= W over all cross-channel pairs.

    Both arrays are sorted, so the partners of each channel-0 click form a
    contiguous run of channel 1; the m-th partner of every click is handled
    in one vectorized pass. Cost is proportional to the number of pairs.
    """
    out = np.zeros(2 * W + 1, np.int64)
    for s in range(0, t0.size, chunk):
        a = t0[s:s + chunk]
        lo = np.searchsorted(t1, a - W, "left")
        hi = np.searchsorted(t1, a + W, "right")
        n = hi - lo
        m = 0
        live = np.nonzero(n > 0)[0]
        while live.size:
            d = t1[lo[live] + m] - a[live] + W
            out += np.bincount(d, minlength=2 * W + 1)
            m += 1
            live = live[n[live] > m]
    return out


def _lags(t0, t1, W):
    span = max(int(t0[-1]) if t0.size else 0, int(t1[-1]) if t1.size else 0) + 1
    pairs = t0.size * t1.size * (2.0 * W + 1) / span
    # pair walking costs per pair, the FFT per tick of record
    return _lag_counts(t0, t1, W) if pairs < 20.0 * span else _lag_counts_fft(t0, t1, span, W)


def estimate_g2(streams: ClickStreams, bin_width: float, tau_max: float, *, blocks: int = 0) -> ClickG2:
    """Cross-correlation of channel 1 against channel 0.

    Bins are an odd number of ticks wide (10 ns becomes 61 ticks) and centred
    on multiples of that width; the tick-level histogram is exact.

    Errors are Poisson (sqrt of the bin count) by default. That is right for
    sparse streams but too small once a bin holds several partners of one
    click and the rate itself fluctuates. ``blocks > 1`` instead takes
    batch-means errors over that many equal time blocks.
    """
    t0 = np.asarray(streams.ticks[0], np.int64)
    t1 = np.asarray(streams.ticks[1], np.int64)
    if t0.size == 0 or t1.size == 0:
        raise InsufficientDataError("a detector channel is empty")
    T = streams.duration
    if T <= 2 * tau_max:
        raise InsufficientDataError("record shorter than twice tau_max")
    b = bin_ticks(bin_width)
    k = int(round(tau_max / (b * TICK)))
    W = k * b + (b - 1) // 2
    bw = b * TICK
    tau = np.arange(-k, k + 1) * bw

    def hist(a0, a1, span):
        counts = _lags(a0, a1, W).reshape(2 * k + 1, b).sum(axis=1)
        d = span * TICK
        return CoincidenceHistogram(bw, tau, counts, (a0.size / d, a1.size / d), d)

    h = hist(t0, t1, streams.span)
    g2, err = h.normalized()
    if blocks > 1:
        if streams.span / blocks * TICK <= 2 * tau_max:
            raise InsufficientDataError("blocks shorter than twice tau_max")
        edges = [streams.span * j // blocks for j in range(blocks + 1)]
        vals = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            a0 = t0[np.searchsorted(t0, lo):np.searchsorted(t0, hi)] - lo
            a1 = t1[np.searchsorted(t1, lo):np.searchsorted(t1, hi)] - lo
            if a0.size == 0 or a1.size == 0:
                raise InsufficientDataError("a time block holds no clicks on one channel")
            vals.append(hist(a0, a1, hi - lo).normalized()[0])
        err = np.std(vals, axis=0, ddof=1) / np.sqrt(blocks)
    return ClickG2(tau, g2, err, h)


def expected_g2(flux, dt: float, bin_width: float, tau_max: float, *, upsample: int = 8):
    """Bin-averaged autocorrelation of the linearly interpolated flux.

    This is what ``estimate_g2`` converges to for clicks from
    ``synthesize_clicks(flux, dt)`` (no dark counts, no dead time).
    """
    flux = np.asarray(flux, float)
    n = flux.size
    fine_dt = dt / upsample
    tf = np.arange((n - 1) * upsample + 1) * fine_dt
    fine = np.interp(tf, dt * np.arange(n), flux)
    bin_width = bin_ticks(bin_width) * TICK
    k = int(round(tau_max / bin_width))
    half = bin_width / 2
    lag_tau, ac = trace_g2(fine, fine_dt, (k + 1) * bin_width)
    out = np.empty(k + 1)
    for j in range(k + 1):
        lo, hi = j * bin_width - half, j * bin_width + half
        x = np.linspace(lo, hi, 2 * upsample * max(1, int(round(bin_width / dt))) + 1)
        out[j] = np.interp(np.abs(x), lag_tau, ac).mean()
    tau = np.arange(-k, k + 1) * bin_width
    return tau, np.concatenate([out[:0:-1], out])


def reduced_chi2(est: ClickG2, ref, mask=None) -> float:
    r = (est.g2 - np.asarray(ref)) / np.where(est.err > 0, est.err, np.inf)
    if mask is not None:
        r = r[mask]
    return float(np.sum(r ** 2) / max(r.size, 1))
