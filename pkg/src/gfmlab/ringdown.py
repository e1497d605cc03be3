"""Trace analysis: spectra, ringdown modal fits and resonance classification.

The resonance classes are frequency bands relative to the nominal
frequency f1:

* SR  - power band [0.8 f1, 1.1 f1]; on stationary-frame current the band
  closes at f1 (above f1 the component is the NSR image).
* SSR - power band [1 Hz, 0.5 f1].
* NSR - stationary-frame current only, (f1, 2 f1); the f1 + f_ssr image.

A detected sub-synchronous power oscillation at f_ssr must show up in the
stationary-frame current as a pair of components at f1 - f_ssr and
f1 + f_ssr; ``coupling_check`` verifies that signature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, NoDominantModeError, NumericFailureError
from .sim import SimTrace

_MIN_WINDOW = 0.2  # s, below this no spectral statement is made
_ENERGY_FLOOR = 0.05  # modal energy fraction considered present
_AMP_FLOOR_REL = 0.01  # peak amplitude vs deviation RMS below which: no resonance
_ZETA_CUTOFF = 0.4  # better damped than this: not a resonance
_PEAK_FMIN = 0.5  # Hz, excludes the DC/trend residual from peak searches


@dataclass(frozen=True)
class Spectrum:
    """One-sided amplitude spectrum of a detrended, Hann-windowed signal.

    ``magnitude`` is calibrated so a pure tone of amplitude A shows a peak
    of height A.  ``signal_rms`` is the RMS of the detrended input,
    used for relative significance thresholds.
    """

    freq_hz: np.ndarray
    magnitude: np.ndarray
    fs: float
    n_samples: int
    signal_rms: float
    window: str = "hann"

    def _interp_peak(self, k: int) -> tuple[float, float]:
        """Parabolic interpolation on log magnitude around bin k."""
        m = self.magnitude
        if 0 < k < len(m) - 1 and m[k - 1] > 0.0 and m[k] > 0.0 and m[k + 1] > 0.0:
            la, lb, lc = math.log(m[k - 1]), math.log(m[k]), math.log(m[k + 1])
            den = la - 2.0 * lb + lc
            if den < 0.0:
                delta = 0.5 * (la - lc) / den
                delta = max(-0.5, min(0.5, delta))
                df = self.freq_hz[1] - self.freq_hz[0]
                return (self.freq_hz[k] + delta * df,
                        math.exp(lb - 0.25 * (la - lc) * delta))
        return float(self.freq_hz[k]), float(self.magnitude[k])

    def peak(self, fmin: float = _PEAK_FMIN, fmax: float | None = None) -> tuple[float, float]:
        """(frequency, amplitude) of the largest component in a band."""
        f = self.freq_hz
        hi = f <= (fmax if fmax is not None else f[-1])
        sel = (f >= fmin) & hi
        if not np.any(sel):
            raise InsufficientDataError("empty frequency band")
        k = int(np.argmax(np.where(sel, self.magnitude, -1.0)))
        return self._interp_peak(k)

    def peak_near(self, f0: float, tol: float) -> tuple[float, float] | None:
        """Largest local maximum within f0 +- tol, or None if the band is
        monotonic (no distinct component there)."""
        f = self.freq_hz
        m = self.magnitude
        sel = np.flatnonzero((f >= f0 - tol) & (f <= f0 + tol))
        best: tuple[float, float] | None = None
        for k in sel:
            if 0 < k < len(m) - 1 and m[k] >= m[k - 1] and m[k] >= m[k + 1]:
                fk, ak = self._interp_peak(int(k))
                if best is None or ak > best[1]:
                    best = (fk, ak)
        return best


def estimate_spectrum(y: np.ndarray, fs: float) -> Spectrum:
    """Amplitude spectrum with linear detrend, Hann window, 8x zero padding.

    Peak frequencies read through :meth:`Spectrum.peak` are good to about
    0.1 Hz for a tone of a few hertz over a one-second window.
    """
    y = np.asarray(y, float)
    n = y.size
    if n < 4 or (n - 1) / fs < _MIN_WINDOW:
        raise InsufficientDataError(
            f"window of {0.0 if n == 0 else (n - 1) / fs:.3f} s is shorter "
            f"than {_MIN_WINDOW} s")
    t = np.arange(n) / fs
    coef = np.polyfit(t, y, 1)
    yd = y - np.polyval(coef, t)
    rms = float(np.sqrt(np.mean(yd ** 2)))
    w = np.hanning(n)
    nfft = 1 << max(int(np.ceil(np.log2(8 * n))), 3)
    spec = np.fft.rfft(yd * w, nfft)
    mag = 2.0 * np.abs(spec) / np.sum(w)
    freq = np.fft.rfftfreq(nfft, 1.0 / fs)
    return Spectrum(freq_hz=freq, magnitude=mag, fs=fs, n_samples=n,
                    signal_rms=rms)


@dataclass(frozen=True)
class RingdownMode:
    """One fitted exponential mode a * e^{s t} (plus conjugate if complex)."""

    s: complex
    amplitude: float  # peak signal contribution (2|a| for a conjugate pair)
    energy_frac: float  # share of segment energy carried by this mode

    @property
    def freq_hz(self) -> float:
        return abs(self.s.imag) / (2.0 * math.pi)

    @property
    def zeta(self) -> float:
        mag = abs(self.s)
        return 1.0 if mag < 1e-9 else -self.s.real / mag


def pencil_modes(y: np.ndarray, fs: float, max_order: int = 6) -> list[RingdownMode]:
    """Matrix-pencil identification of decaying exponentials in a segment.

    The segment is slice-decimated to a few hundred samples (the bands of
    interest sit far below the trace Nyquist), a Hankel matrix is rank
    truncated at a 1e-8 relative singular-value floor (capped at
    ``max_order``), and amplitudes follow from a least-squares fit.
    Returns modes sorted by energy share, largest first.
    """
    y = np.asarray(y, float)
    n = y.size
    if n < 16:
        raise InsufficientDataError("ringdown fit needs at least 16 samples")
    dec = max(1, n // 500)
    ys = y[::dec]
    m = ys.size
    dt = dec / fs

    ncols = m // 2 + 1
    nrows = m - ncols + 1
    hank = np.lib.stride_tricks.sliding_window_view(ys, ncols)[:nrows]
    u, sv, vh = np.linalg.svd(hank, full_matrices=False)
    order = int(np.sum(sv > 1e-8 * sv[0]))
    order = max(1, min(order, max_order, ncols - 1))
    v = vh.conj().T[:, :order]
    z = np.linalg.eigvals(np.linalg.pinv(v[:-1, :]) @ v[1:, :])
    z = z[np.abs(z) > 1e-12]
    if z.size == 0:
        raise NoDominantModeError("pencil produced no usable poles")
    s = np.log(z) / dt

    # least-squares amplitudes on the decimated samples
    k = np.arange(m)
    vand = np.power.outer(z, k).T  # m x order
    a, *_ = np.linalg.lstsq(vand, ys.astype(complex), rcond=None)
    seg_energy = float(np.sum(ys ** 2))
    if seg_energy <= 0.0:
        return []

    used = np.zeros(s.size, bool)
    modes: list[RingdownMode] = []
    for i in range(s.size):
        if used[i]:
            continue
        used[i] = True
        contrib = a[i] * z[i] ** k
        amp = abs(a[i])
        if s[i].imag > 1e-9:
            # join the conjugate partner, or mirror if the fit lost it
            paired = False
            rest = np.flatnonzero(~used)
            if rest.size:
                j = rest[np.argmin(np.abs(s[rest] - s[i].conjugate()))]
                if abs(s[j] - s[i].conjugate()) < 1e-3 * max(abs(s[i]), 1.0):
                    used[j] = True
                    contrib = contrib + a[j] * z[j] ** k
                    paired = True
            if not paired:
                contrib = contrib + contrib.conjugate()
            amp = 2.0 * abs(a[i])
        elif s[i].imag < -1e-9:
            # unpaired negative-frequency pole; mirror it
            contrib = contrib + contrib.conjugate()
            amp = 2.0 * abs(a[i])
            s[i] = s[i].conjugate()
        energy = float(np.sum(contrib.real ** 2)) / seg_energy
        modes.append(RingdownMode(s=complex(s[i]), amplitude=float(amp),
                                  energy_frac=energy))
    modes.sort(key=lambda md: md.energy_frac, reverse=True)
    return modes


def fit_ringdown(y: np.ndarray, fs: float, max_order: int = 6) -> tuple[float, float]:
    """Frequency (Hz) and damping ratio of the dominant mode by energy.

    Raises :class:`NoDominantModeError` when no fitted mode carries at
    least 5% of the segment energy.
    """
    modes = [md for md in pencil_modes(y, fs, max_order)
             if md.energy_frac >= _ENERGY_FLOOR]
    if not modes:
        raise NoDominantModeError("no mode carries 5% of the segment energy")
    return modes[0].freq_hz, modes[0].zeta


@dataclass(frozen=True)
class ResonanceReport:
    """Classified oscillation on one channel.

    ``klass`` is one of "SR", "SSR", "NSR" or None (no resonance)."""

    channel: str
    klass: str | None
    freq_hz: float
    zeta: float
    amplitude: float

    def csv_row(self) -> str:
        name = self.klass if self.klass is not None else "None"
        return (f"{self.channel},{name},{self.freq_hz:.12g},"
                f"{self.zeta:.12g},{self.amplitude:.12g}")


def _band_class(freq_hz: float, f1: float, current_channel: bool) -> str | None:
    if 1.0 <= freq_hz <= 0.5 * f1:
        return "SSR"
    if current_channel:
        if 0.8 * f1 <= freq_hz <= f1:
            return "SR"
        if f1 < freq_hz < 2.0 * f1:
            return "NSR"
        return None
    if 0.8 * f1 <= freq_hz <= 1.1 * f1:
        return "SR"
    return None


def classify_resonance(spec: Spectrum, fitted_freq_hz: float, fitted_zeta: float,
                       f1: float = 50.0, channel: str = "P",
                       current_channel: bool = False) -> ResonanceReport:
    """Band classification of a fitted mode against its spectrum.

    No resonance is reported when the dominant spectral peak is below 1%
    of the channel's deviation RMS, or the fitted damping exceeds 0.4.
    """
    if spec.signal_rms < 1e-12:
        return ResonanceReport(channel=channel, klass=None, freq_hz=0.0,
                               zeta=1.0, amplitude=0.0)
    pk_freq, pk_amp = spec.peak()
    if pk_amp < _AMP_FLOOR_REL * spec.signal_rms or not math.isfinite(fitted_zeta) \
            or fitted_zeta > _ZETA_CUTOFF:
        return ResonanceReport(channel=channel, klass=None, freq_hz=pk_freq,
                               zeta=fitted_zeta, amplitude=pk_amp)
    klass = _band_class(fitted_freq_hz, f1, current_channel)
    return ResonanceReport(channel=channel, klass=klass, freq_hz=fitted_freq_hz,
                           zeta=fitted_zeta, amplitude=pk_amp)


@dataclass(frozen=True)
class CouplingCheck:
    """Result of the f1 +- f_ssr stationary-frame current signature test."""

    passed: bool
    expected_hz: tuple[float, float]
    measured: tuple[tuple[float, float] | None, tuple[float, float] | None]
    dominant_amp: float


def reconstruct_phase_current(trace: SimTrace, f1: float = 50.0,
                              window_start: float | None = None,
                              subtract_steady: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Phase-a current rebuilt from the dq channels and the frame angle.

    With ``subtract_steady`` the steady dq values are removed before
    rotating, so the constant fundamental carrier vanishes and only
    transient content remains: a dq mode at f shows up at f1−f and f1+f.
    The steady values are loudness-weighted means: the quiet stretch of
    the record pins the carrier level, which works for settling windows
    (quiet tail), growing windows (quiet head) and steady ones alike.
    """
    for name in ("i_d", "i_q", "theta"):
        if name not in trace.channels:
            raise InsufficientDataError(f"trace lacks channel {name!r}")
    seg = trace.after(window_start if window_start is not None
                      else trace.last_event_time + 0.1)
    if seg.t.size < 4:
        raise InsufficientDataError("no samples after the analysis window start")
    i_d = seg.channel("i_d")
    i_q = seg.channel("i_q")
    if subtract_steady:
        dev = np.hypot(i_d - i_d.mean(), i_q - i_q.mean())
        n = max(1, dev.size // 20)
        env = np.convolve(dev, np.ones(n) / n, mode="same")
        w = 1.0 / (env ** 2 + 1e-24)
        w /= w.sum()
        i_d = i_d - float(np.dot(w, i_d))
        i_q = i_q - float(np.dot(w, i_q))
    ang = 2.0 * math.pi * f1 * seg.t + seg.channel("theta")
    return seg.t, i_d * np.cos(ang) - i_q * np.sin(ang)


def coupling_check(trace: SimTrace, f_ssr: float, f1: float = 50.0,
                   window_start: float | None = None,
                   tol_hz: float = 1.0) -> CouplingCheck:
    """Verify the two current components at f1 - f_ssr and f1 + f_ssr.

    Phase-a current is reconstructed from the dq deviations so the steady
    carrier does not mask the signature, and its modal decomposition
    measures the image components directly: each expected component must
    match a mode within ``tol_hz`` carrying at least 10% of the dominant
    transient component's amplitude.  The modal estimator stays sharp when
    the envelope grows or decays strongly within the window, where a
    Fourier line would smear across many bins.  Modes within 2 Hz of f1
    are ignored: a dq mode at f lands at f1 - f and f1 + f, never at f1
    itself, so that band holds only the subtracted-carrier residue.

    When f_ssr is small enough that both images fall inside the carrier
    band the signature degenerates: the components merge at f1 and the
    check passes when the dq deviations are dominated by near-DC content.
    """
    t, i_a = reconstruct_phase_current(trace, f1, window_start)
    fs = 1.0 / (t[1] - t[0])
    if f_ssr <= 2.0 - tol_hz:
        seg = trace.after(window_start if window_start is not None
                          else trace.last_event_time + 0.1)
        dev = seg.channel("i_d") - seg.channel("i_d").mean()
        spec = estimate_spectrum(dev, fs)
        f_dom = spec.peak()[0] if dev.size >= 4 else math.inf
        merged = (f1, float(np.abs(dev).max()))
        return CouplingCheck(passed=bool(f_dom < 2.0),
                             expected_hz=(f1 - f_ssr, f1 + f_ssr),
                             measured=(merged, merged), dominant_amp=merged[1])
    modes = [md for md in pencil_modes(i_a, fs, max_order=8)
             if abs(md.freq_hz - f1) > 2.0]
    dom_amp = max((md.amplitude for md in modes), default=0.0)

    def find(f_exp: float) -> tuple[float, float] | None:
        cands = [md for md in modes if abs(md.freq_hz - f_exp) <= tol_hz]
        if not cands:
            return None
        best = max(cands, key=lambda md: md.amplitude)
        return (best.freq_hz, best.amplitude)

    lo = find(f1 - f_ssr)
    hi = find(f1 + f_ssr)
    ok = (dom_amp > 0.0 and lo is not None and hi is not None
          and lo[1] >= 0.1 * dom_amp and hi[1] >= 0.1 * dom_amp)
    return CouplingCheck(passed=bool(ok),
                         expected_hz=(f1 - f_ssr, f1 + f_ssr),
                         measured=(lo, hi), dominant_amp=dom_amp)


@dataclass(frozen=True)
class TraceAnalysis:
    """Per-channel classification plus the coupling signature when an SSR
    was found in power."""

    reports: tuple[ResonanceReport, ...]
    coupling: CouplingCheck | None
    window: tuple[float, float]
    f1: float

    @property
    def power(self) -> ResonanceReport:
        return self.reports[0]

    def worst_zeta(self) -> float:
        detected = [r.zeta for r in self.reports if r.klass is not None]
        return min(detected) if detected else math.inf


def _fit_near_peak(y: np.ndarray, fs: float, spec: Spectrum) -> tuple[float, float]:
    """Dominant-energy mode, steered to the spectral peak when one stands out."""
    pk_freq, pk_amp = spec.peak()
    modes = [md for md in pencil_modes(y, fs) if md.energy_frac >= _ENERGY_FLOOR]
    if not modes:
        raise NoDominantModeError("no mode carries 5% of the segment energy")
    if pk_amp >= _AMP_FLOOR_REL * spec.signal_rms:
        osc = [md for md in modes if abs(md.freq_hz - pk_freq) <= max(2.0, 0.2 * pk_freq)]
        if osc:
            best = max(osc, key=lambda md: md.energy_frac)
            return best.freq_hz, best.zeta
    return modes[0].freq_hz, modes[0].zeta


def analyze_trace(trace: SimTrace, f1: float = 50.0,
                  window_start: float | None = None) -> TraceAnalysis:
    """Classify the power channel and the reconstructed phase current.

    The window starts 100 ms after the last event unless overridden.
    Diverged traces are a numeric failure, not an analysis result.
    """
    if trace.diverged:
        raise NumericFailureError(f"trace diverged at t={trace.diverged_at:.4f} s")
    t0 = window_start if window_start is not None else trace.last_event_time + 0.1
    seg = trace.after(t0)
    if seg.t.size < 4 or seg.t[-1] - seg.t[0] < _MIN_WINDOW:
        raise InsufficientDataError("analysis window shorter than 0.2 s")
    fs = 1.0 / (seg.t[1] - seg.t[0])

    reports: list[ResonanceReport] = []

    y_p = seg.channel("P")
    spec_p = estimate_spectrum(y_p, fs)
    yd = y_p - np.polyval(np.polyfit(seg.t - seg.t[0], y_p, 1), seg.t - seg.t[0])
    try:
        f_fit, z_fit = _fit_near_peak(yd, fs, spec_p)
    except NoDominantModeError:
        f_fit, z_fit = spec_p.peak()[0], math.inf
    reports.append(classify_resonance(spec_p, f_fit, z_fit, f1, channel="P"))

    _, i_a = reconstruct_phase_current(trace, f1, window_start=t0)
    spec_i = estimate_spectrum(i_a, fs)
    try:
        f_fit_i, z_fit_i = _fit_near_peak(i_a, fs, spec_i)
    except NoDominantModeError:
        f_fit_i, z_fit_i = spec_i.peak()[0], math.inf
    reports.append(classify_resonance(spec_i, f_fit_i, z_fit_i, f1,
                                      channel="i_a", current_channel=True))

    coupling = None
    if reports[0].klass == "SSR":
        coupling = coupling_check(trace, reports[0].freq_hz, f1,
                                  window_start=t0)
    return TraceAnalysis(reports=tuple(reports), coupling=coupling,
                         window=(float(seg.t[0]), float(seg.t[-1])), f1=f1)


def write_report_csv(analysis: TraceAnalysis, path) -> None:
    lines = ["channel,class,freq_hz,zeta,amplitude"]
    lines += [r.csv_row() for r in analysis.reports]
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_report_txt(analysis: TraceAnalysis, path) -> None:
    lines = [f"f1_hz: {analysis.f1:.12g}",
             f"window_s: {analysis.window[0]:.12g} {analysis.window[1]:.12g}"]
    for r in analysis.reports:
        name = r.klass if r.klass is not None else "None"
        lines.append(f"{r.channel}.class: {name}")
        lines.append(f"{r.channel}.freq_hz: {r.freq_hz:.12g}")
        lines.append(f"{r.channel}.zeta: {r.zeta:.12g}")
        lines.append(f"{r.channel}.amplitude: {r.amplitude:.12g}")
    if analysis.coupling is not None:
        c = analysis.coupling
        lines.append(f"coupling.passed: {c.passed}")
        lines.append(f"coupling.expected_hz: {c.expected_hz[0]:.12g} {c.expected_hz[1]:.12g}")
        for tag, meas in zip(("lower", "upper"), c.measured):
            if meas is None:
                lines.append(f"coupling.{tag}: absent")
            else:
                lines.append(f"coupling.{tag}: {meas[0]:.12g} Hz amp {meas[1]:.12g}")
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
