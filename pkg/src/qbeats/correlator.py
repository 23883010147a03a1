"""Two-time H-mode correlation by the conditional-state method.

Every ``sample_interval`` the trajectory installs a collapsed copy
``b' <- a'``, ``b'' <- 2 a''`` of each atom and propagates it next to the
base state. At each later record step the kernel adds twelve scalar rows per
delay bin (see :data:`qbeats.kernel_layout.ACC_NAMES`). They are chosen so
that the background amplitude beta can be applied afterwards: a single run
serves any beta.

With alpha_i = |a'_i|^2, beta_i = |b'_i|^2, z_i = <a'_i|b'_i>, c_i the
overlap of b''_i with a_i on the center pair and o_i = |b''_i|^2, the
conditional second-photon weight is

    P2 = one + two + cross + cc + dalpha
         + |b0|^2 (bb + aa + 2 hom_re) + |b0|^4 b4 + 2 Re(conj(b0^2) c)

where b0 is the background amplitude in units where the mean atomic flux
is sum alpha. The homodyne channel is ``2 |b0|^2 hom_re``; ``one`` and
``two`` are the one-atom and two-atom channels; the rest is the residual.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernel_py as _kp
from . import kernel_layout as L

__all__ = [
    "AccumulatorPartial",
    "BeatResult",
    "CorrelationAccumulator",
    "G2Curve",
    "InsufficientDataError",
    "background_halfwidth",
    "beat_amplitude",
    "beat_frequency",
    "begin_sample",
    "read_csv",
    "trace_g2",
    "write_csv",
]

CHANNELS = ("one_atom", "two_atom", "homodyne", "residual")
CSV_COLUMNS = ("tau_s", "g2_total", "g2_one_atom", "g2_two_atom", "g2_homodyne",
               "g2_residual", "stderr_total")


class InsufficientDataError(RuntimeError):
    pass


@dataclass
class AccumulatorPartial:
    """Compensated per-bin sums from one batch of one trajectory."""

    acc: np.ndarray
    comp: np.ndarray
    nbin: np.ndarray
    tot: np.ndarray  # sum alpha at sample starts, sum |r0|^2, sample count
    totc: np.ndarray

    @classmethod
    def empty(cls, nb: int) -> "AccumulatorPartial":
        return cls(np.zeros((L.NACC, nb)), np.zeros((L.NACC, nb)), np.zeros(nb, dtype=np.int64),
                   np.zeros(3), np.zeros(3))

    def rows(self) -> np.ndarray:
        return self.acc + self.comp

    def totals(self) -> np.ndarray:
        return self.tot + self.totc


def _exact_sum(arrays) -> np.ndarray:
    stack = np.stack(list(arrays))
    flat = stack.reshape(stack.shape[0], -1)
    return np.array([math.fsum(col) for col in flat.T]).reshape(stack.shape[1:])


@dataclass
class G2Curve:
    tau: np.ndarray  # symmetric grid, -tau_max..tau_max
    g2: np.ndarray
    channels: dict
    stderr: np.ndarray
    beta_percent: float
    n_samples: float
    mean_flux: float

    def positive(self):
        """(tau, g2, stderr) on tau >= 0."""
        k = self.tau.size // 2
        return self.tau[k:], self.g2[k:], self.stderr[k:]


@dataclass
class CorrelationAccumulator:
    """Mergeable container of partial sums on a fixed delay grid."""

    dtau: float
    nbins: int
    partials: list = field(default_factory=list)
    beta_percent: float = 0.0
    beta_phase: float = 0.0  # radians
    seeds: list = field(default_factory=list)

    @property
    def tau_grid(self) -> np.ndarray:
        return np.arange(self.nbins) * self.dtau

    @classmethod
    def from_trajectory(cls, result, cfg) -> "CorrelationAccumulator":
        nb = result.partials[0].nbin.size if result.partials else 0
        d = cfg.drive
        return cls(result.record_interval, nb, list(result.partials), d.beta_percent,
                   math.atan2(d.beta.imag, d.beta.real), [result.seed])

    def merge(self, other: "CorrelationAccumulator") -> "CorrelationAccumulator":
        if self.nbins != other.nbins or not math.isclose(self.dtau, other.dtau, rel_tol=1e-12):
            raise ValueError("cannot merge accumulators on different delay grids")
        return CorrelationAccumulator(self.dtau, self.nbins, self.partials + other.partials,
                                      self.beta_percent, self.beta_phase, self.seeds + other.seeds)

    # --- raw sums -------------------------------------------------------------
    def _sums(self, parts=None):
        parts = self.partials if parts is None else parts
        rows = _exact_sum(p.rows() for p in parts)
        nbin = np.sum([p.nbin for p in parts], axis=0)
        tot = _exact_sum(p.totals() for p in parts)
        return rows, nbin, tot

    @property
    def sample_count(self) -> int:
        return int(round(self._sums()[2][2])) if self.partials else 0

    @property
    def total_weight(self) -> float:
        return float(self._sums()[2][0]) if self.partials else 0.0

    def numerators(self, beta_percent=None, beta_phase=None, beta_abs2=None) -> dict:
        """Per-bin mean numerators (total and channels) and the denominator."""
        if not self.partials:
            raise InsufficientDataError("no samples")
        return _numerators(*self._sums(), self._beta(beta_percent, beta_phase, beta_abs2))

    def _beta(self, beta_percent, beta_phase, beta_abs2=None):
        bp = self.beta_percent if beta_percent is None else beta_percent
        ph = self.beta_phase if beta_phase is None else beta_phase
        return bp, ph, beta_abs2

    def finalize(self, beta_percent: float | None = None, beta_phase: float | None = None,
                 beta_abs2: float | None = None) -> G2Curve:
        """Normalized, symmetrized g2 with channel curves and batch-means errors.

        beta is given as a percentage of the mean atomic H flux; ``beta_abs2``
        instead fixes |beta|^2 in absolute units (needed when there are no atoms).
        """
        if not self.partials:
            raise InsufficientDataError("no samples accumulated")
        bp, ph, b2abs = self._beta(beta_percent, beta_phase, beta_abs2)
        nm = _numerators(*self._sums(), (bp, ph, b2abs))
        if b2abs is None:
            b2abs = nm["beta_abs2"]  # batches share the ensemble beta
        den = nm["denominator"]
        g2 = nm["total"] / den ** 2
        ch = {c: nm[c] / den ** 2 for c in CHANNELS}
        # batch means over partials with data
        vals = []
        for p in self.partials:
            try:
                q = _numerators(p.rows(), p.nbin, p.totals(), (bp, ph, b2abs))
            except InsufficientDataError:
                continue
            vals.append(q["total"] / q["denominator"] ** 2)
        if len(vals) >= 2:
            # exact sums keep the result independent of partial order
            nv = len(vals)
            mean = _exact_sum(vals) / nv
            err = np.sqrt(_exact_sum((v - mean) ** 2 for v in vals) / (nv - 1) / nv)
        else:
            err = np.full(g2.size, np.nan)

        def sym(x):
            return np.concatenate([x[:0:-1], x])

        tau = self.tau_grid
        return G2Curve(np.concatenate([-tau[:0:-1], tau]), sym(g2), {c: sym(v) for c, v in ch.items()},
                       sym(err), bp, float(nm["n_samples"]), float(den))


def _numerators(rows, nbin, tot, beta):
    bp, ph, b2abs = beta
    if tot[2] <= 0:
        raise InsufficientDataError("zero total weight")
    if np.any(nbin == 0):
        raise InsufficientDataError("empty delay bins; run longer than tau_max")
    ea = tot[0] / tot[2]
    er = tot[1] / tot[2]
    if b2abs is not None:
        b2 = float(b2abs)
    else:
        b2 = bp / 100.0 * ea / er if er > 0 else 0.0
    den = ea + b2 * er
    if den <= 0:
        raise InsufficientDataError("zero mean H-mode flux")
    b0sq = b2 * complex(math.cos(2 * ph), math.sin(2 * ph))
    r = rows / nbin
    coef = np.zeros(L.NACC)
    coef[[L.ACC_ONE, L.ACC_TWO, L.ACC_CROSS, L.ACC_CC, L.ACC_DALPHA]] = 1.0
    coef[[L.ACC_BB, L.ACC_AA]] = b2
    coef[L.ACC_HOM_RE] = 2.0 * b2
    coef[L.ACC_B4] = b2 * b2
    coef[L.ACC_C_RE] = 2.0 * b0sq.real
    coef[L.ACC_C_IM] = 2.0 * b0sq.imag
    total = coef @ r
    one = r[L.ACC_ONE]
    two = r[L.ACC_TWO]
    hom = 2.0 * b2 * r[L.ACC_HOM_RE]
    rest = (r[L.ACC_CROSS] + r[L.ACC_CC] + r[L.ACC_DALPHA]
            + b2 * (r[L.ACC_BB] + r[L.ACC_AA]) + b2 * b2 * r[L.ACC_B4]
            + 2.0 * (b0sq.real * r[L.ACC_C_RE] + b0sq.imag * r[L.ACC_C_IM]))
    return {"total": total, "one_atom": one, "two_atom": two, "homodyne": hom, "residual": rest,
            "denominator": den, "n_samples": tot[2], "beta_abs2": b2}


def begin_sample(state) -> float:
    """Install b' <- a', b'' <- 2a'' for every atom in the next sample slot.

    Returns the sample weight sum_i <a'_i|a'_i>; a zero-weight sample is not
    installed. Mirrors what the kernels do on the sample grid.
    """
    idx = np.nonzero(state.active)[0]
    alpha = np.sum(np.abs(state.A1[idx]) ** 2, axis=(1, 2))
    w = float(np.sum(alpha))
    if w <= 0.0:
        return 0.0
    sl = int(state.istate[L.I_NEXT_SLOT])
    if state.slive[sl]:
        raise RuntimeError("sample slot still live; tau_max/sample_interval ring is full")
    state.slive[sl] = 1
    state.sstart[sl] = state.istate[L.I_STEP]
    state.sD[sl] = 0.0
    state.sr0[sl] = 1.0
    state.B1[idx, sl] = state.A1[idx]
    state.B2[idx, sl] = 2.0 * state.A2[idx]
    state.O1[idx, sl] = state.A1[idx]
    state.O2[idx, sl] = 2.0 * state.A2[idx]
    state.ow[idx, sl] = alpha
    state.omc[idx, sl] = state.mc[idx]
    for i in idx:
        state.othr[i, sl] = _kp.next_uniform(state.krng)
    state.bact[idx, sl] = (alpha > 0).astype(np.int8)
    state.istate[L.I_NEXT_SLOT] = (sl + 1) % state.slive.size
    return w


# --- curve analysis ------------------------------------------------------------------

@dataclass(frozen=True)
class BeatResult:
    frequency: float  # Hz, nan when no significant peak
    sigma: float
    peak: float
    noise_floor: float

    @property
    def found(self) -> bool:
        return math.isfinite(self.frequency)


def _positive_half(tau, curve):
    tau = np.asarray(tau, float)
    curve = np.asarray(curve, float)
    keep = tau >= 0
    return tau[keep], curve[keep]


def beat_frequency(tau, curve, *, fmin: float | None = None, fmax: float | None = None,
                   window: str = "hann", detrend: int = 4, pad: int = 16) -> BeatResult:
    """Dominant oscillation frequency of a correlation curve.

    Uses tau >= 0, removes a polynomial background of degree ``detrend`` in
    tau, tapers, zero-pads and takes the FFT magnitude peak above ``fmin``
    (default: three cycles over the span). The peak is refined by a parabola
    through three points; sigma is the offset at which that parabola falls
    by the noise floor. Returns a non-finite frequency when the peak is below
    three times the RMS spectral floor away from the peak, or at rounding level.
    """
    t, y = _positive_half(tau, curve)
    n = t.size
    if n < 8:
        raise InsufficientDataError("curve too short for a spectral estimate")
    scale = float(np.max(np.abs(y)))
    dt = float(np.median(np.diff(t)))
    span = t[-1] - t[0]
    x = (t - t[0]) / span * 2 - 1
    if detrend >= 0:
        y = y - np.polyval(np.polyfit(x, y, detrend), x)
    if window == "hann":
        y = y * np.hanning(n)
    elif window not in ("none", "rect"):
        raise ValueError(f"unknown window {window!r}")
    nfft = 1 << int(math.ceil(math.log2(n * pad)))
    spec = np.abs(np.fft.rfft(y, nfft))
    f = np.fft.rfftfreq(nfft, dt)
    fmin = 3.0 / span if fmin is None else fmin
    fmax = f[-1] if fmax is None else fmax
    band = (f >= fmin) & (f <= fmax)
    if not band.any():
        raise InsufficientDataError("no frequencies in the search band")
    ib = np.nonzero(band)[0]
    k = int(ib[np.argmax(spec[ib])])
    df_native = 1.0 / (n * dt)
    excl = np.abs(f - f[k]) > 3 * df_native
    floor_sel = band & excl
    floor = float(np.sqrt(np.mean(spec[floor_sel] ** 2))) if floor_sel.any() else 0.0
    peak = float(spec[k])
    if peak <= 3.0 * floor or peak <= 1e-12 * scale * n:
        return BeatResult(math.nan, math.nan, peak, floor)
    if 0 < k < spec.size - 1:
        ym, y0, yp = spec[k - 1], spec[k], spec[k + 1]
        den = ym - 2 * y0 + yp
        off = 0.5 * (ym - yp) / den if den != 0 else 0.0
        a = 0.5 * den
    else:
        off, a = 0.0, 0.0
    fpk = (k + off) * (f[1] - f[0])
    if a < 0 and floor > 0:
        sig = math.sqrt(floor / -a) * (f[1] - f[0])
    else:
        sig = df_native
    return BeatResult(float(fpk), float(min(sig, df_native)), peak, floor)


def beat_amplitude(tau, curve, frequency: float, *, tmin: float = 0.0, detrend: int = 4) -> float:
    """Least-squares amplitude of a cosine at ``frequency`` on top of a smooth background."""
    t, y = _positive_half(tau, curve)
    keep = t >= tmin
    t, y = t[keep], y[keep]
    x = (t - t[0]) / max(t[-1] - t[0], 1e-300) * 2 - 1
    cols = [x ** j for j in range(detrend + 1)]
    w = 2 * math.pi * frequency
    cols += [np.cos(w * t), np.sin(w * t)]
    A = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(math.hypot(coef[-2], coef[-1]))


def background_halfwidth(tau, curve, *, beat_hz: float | None = None, baseline: float = 1.0,
                         tmin: float = 0.0) -> tuple[float, float]:
    """1/e half-width of a Gaussian background: fit baseline + A exp(-(tau/w)^2).

    When ``beat_hz`` is given a cosine at that frequency, with its own
    Gaussian-damped amplitude, is fitted together with the background.
    Returns (w, A).
    """
    from scipy.optimize import curve_fit

    t, y = _positive_half(tau, curve)
    keep = t >= tmin
    t, y = t[keep], y[keep]
    y = y - baseline
    A0 = float(max(y[0], 1e-6)) if y.size else 1.0
    below = np.nonzero(y < A0 / math.e)[0]
    w0 = float(t[below[0]]) if below.size else float(t[-1])
    w0 = max(w0, 2 * (t[1] - t[0]))
    if beat_hz:
        om = 2 * math.pi * beat_hz

        def model(tt, A, w, B, C):
            env = np.exp(-(tt / w) ** 2)
            return A * env + env * (B * np.cos(om * tt) + C * np.sin(om * tt))

        p0 = (A0, w0, 0.0, 0.0)
    else:
        def model(tt, A, w):
            return A * np.exp(-(tt / w) ** 2)

        p0 = (A0, w0)
    popt, _ = curve_fit(model, t, y, p0=p0, maxfev=20000)
    return abs(float(popt[1])), float(popt[0])


def trace_g2(signal, dt: float, tau_max: float, *, background: float = 0.0):
    """Classical intensity autocorrelation <I(t) I(t+tau)> / <I>^2 of a sampled trace.

    ``background`` is a constant added to the signal (an incoherent offset).
    Returns (tau, g2) on 0..tau_max.
    """
    I = np.asarray(signal, float) + background
    n = I.size
    k = int(round(tau_max / dt))
    if n <= k + 1:
        raise InsufficientDataError("trace shorter than tau_max")
    mu = I.mean()
    if mu <= 0:
        raise InsufficientDataError("zero mean intensity")
    nfft = 1 << int(math.ceil(math.log2(2 * n)))
    F = np.fft.rfft(I, nfft)
    ac = np.fft.irfft(F * np.conj(F), nfft)[: k + 1]
    ac /= (n - np.arange(k + 1))
    return np.arange(k + 1) * dt, ac / mu ** 2


# --- CSV --------------------------------------------------------------------------------

def write_csv(path_or_buf, curve: G2Curve, header: dict | None = None) -> None:
    """Write a curve; ``header`` items become ``# key: value`` comment lines."""
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        for k, v in (header or {}).items():
            for line in str(v).splitlines() or [""]:
                fh.write(f"# {k}: {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        blank = [None] * curve.g2.size  # channels a curve does not carry stay empty
        cols = [curve.tau, curve.g2] + [curve.channels.get(c, blank) for c in CHANNELS] + [curve.stderr]
        for row in zip(*cols):
            w.writerow(["" if v is None else repr(float(v)) for v in row])
    finally:
        if own:
            fh.close()


def read_csv(path_or_text) -> dict:
    """Read a curve CSV into a dict of arrays keyed by column name."""
    if isinstance(path_or_text, str) and "\n" in path_or_text:
        text = path_or_text
    else:
        with open(path_or_text) as fh:
            text = fh.read()
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    if not lines:
        raise InsufficientDataError("empty curve file")
    rd = csv.reader(io.StringIO("\n".join(lines)))
    head = next(rd)
    data = np.array([[float(v) if v else math.nan for v in row] for row in rd]).reshape(-1, len(head))
    return {h: data[:, j] for j, h in enumerate(head)}
