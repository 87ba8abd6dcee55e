"""
Spectra of ODDM signals: the sub-pulse spectrum, closed-form frequency responses of
both basis families, expected and empirical power spectral densities, and the
out-of-band emission metrics used to compare them.

All spectra follow the energy-spectral-density convention ``E |X(f)|^2`` of a single
frame, with ``X(f) = dt * sum_k x[k] e^{-j 2 pi f t_k}``.
"""
import logging
from dataclasses import dataclass, field
from typing import Iterable, Literal

import numpy as np
from scipy import fft, signal

from src.schemas import OddmParams
from src.services.analog_modem import analog_modulate
from src.services.digital_modem import digital_modulate
from src.services.errors import DomainError
from src.services.params_grid import SampledWaveform, psi_index, psi_indices, qam_map, random_bits
from src.services.pulse import ProtoPulse

logger = logging.getLogger(__name__)

CurveKind = Literal["analytic_analog", "analytic_digital", "analytic_otfs", "empirical", "envelope"]

# frequencies times taps evaluated per block of the direct DTFT sum
DIRECT_SUM_BLOCK = 4_000_000

PSD_NORMALIZATION = "E|X(f)|^2 per frame, X(f) = dt * sum_k x[k] exp(-j 2 pi f t_k)"


@dataclass(frozen=True)
class PulseSpectrum:
    freqs: np.ndarray
    values: np.ndarray


@dataclass(frozen=True)
class PsdCurve:
    freqs: np.ndarray
    power: np.ndarray
    kind: CurveKind
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=float)
        power = np.asarray(self.power, dtype=float)
        if freqs.shape != power.shape or freqs.ndim != 1:
            raise DomainError("frequency and power vectors must be one-dimensional and of equal length")
        if freqs.size > 1 and np.any(np.diff(freqs) <= 0):
            raise DomainError("frequencies must be strictly increasing")
        if not np.all(np.isfinite(power)):
            raise DomainError("power spectral density holds non-finite values")
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "power", power)

    def normalized_db(self) -> np.ndarray:
        """Power in dB relative to the curve maximum, floored at the smallest positive double."""
        peak = self.power.max()
        if peak <= 0:
            raise DomainError("cannot normalize an all-zero spectrum")
        return 10 * np.log10(np.maximum(self.power / peak, np.finfo(float).tiny))


@dataclass(frozen=True)
class Plateau:
    f_start: float
    f_end: float
    width_hz: float
    level_db: float


@dataclass(frozen=True)
class OobeMetrics:
    thresholds_db: tuple[float, ...]
    bandwidth_hz: tuple[float, ...]
    lower_edge_hz: tuple[float, ...]
    upper_edge_hz: tuple[float, ...]
    peak_sidelobe_db: float
    oob_energy_fraction: float

    def rows(self) -> list[tuple[float, float, float, float]]:
        return list(zip(self.thresholds_db, self.bandwidth_hz, self.upper_edge_hz, self.lower_edge_hz))


def frequency_grid(params: OddmParams, points_per_bin: int = 16, span_hz: float | None = None) -> np.ndarray:
    """
    Uniform frequency grid with ``points_per_bin`` points per Doppler resolution.

    :param params: Frame parameters.
    :type params: OddmParams
    :param points_per_bin: Points per ``1/(N T)``.
    :type points_per_bin: int
    :param span_hz: One-sided extent; defaults to half the simulation rate.
    :type span_hz: float | None
    :return: Ascending frequencies containing 0 and every multiple of ``1/(N T)`` in range.
    :rtype: np.ndarray
    """
    if points_per_bin < 1:
        raise DomainError(f"points_per_bin must be positive, got {points_per_bin}")
    step = params.doppler_res / points_per_bin
    if span_hz is None:
        half = points_per_bin * params.N * params.samples_per_symbol // 2
        return np.arange(-half, half) * step
    half = int(np.ceil(span_hz / step - 1e-9))
    return np.arange(-half, half + 1) * step


def _is_uniform(freqs: np.ndarray) -> bool:
    if freqs.size < 2:
        return False
    steps = np.diff(freqs)
    return steps[0] > 0 and np.allclose(steps, steps[0], rtol=1e-9, atol=0)


def pulse_freq(pulse: ProtoPulse, freqs: np.ndarray) -> PulseSpectrum:
    """
    Exact DTFT of the sampled sub-pulse scaled by the sample spacing,
    ``A(f) = dt * sum_k a[k] e^{-j 2 pi f (k - center) dt}``.

    Uniform grids go through the chirp-z transform; anything else is summed directly in
    blocks.

    :param pulse: The sub-pulse.
    :type pulse: ProtoPulse
    :param freqs: Frequencies in Hz.
    :type freqs: np.ndarray
    :return: The pulse spectrum on ``freqs``.
    :rtype: PulseSpectrum
    """
    freqs = np.asarray(freqs, dtype=float)
    if not np.all(np.isfinite(freqs)):
        raise DomainError("frequencies must be finite")
    dt = pulse.dt
    if _is_uniform(freqs):
        step = freqs[1] - freqs[0]
        w = np.exp(-2j * np.pi * step * dt)
        a = np.exp(2j * np.pi * freqs[0] * dt)
        raw = signal.czt(pulse.taps.astype(complex), m=freqs.size, w=w, a=a)
    else:
        raw = np.empty(freqs.size, dtype=complex)
        k = np.arange(pulse.taps.size)
        block = max(1, DIRECT_SUM_BLOCK // pulse.taps.size)
        for lo in range(0, freqs.size, block):
            f = freqs[lo : lo + block]
            raw[lo : lo + block] = np.exp(-2j * np.pi * np.outer(f, k) * dt) @ pulse.taps
    values = dt * raw * np.exp(2j * np.pi * freqs * pulse.center * dt)
    return PulseSpectrum(freqs, values)


def dirichlet_train(x: np.ndarray, period: int, kmax: int | None = None) -> np.ndarray:
    """
    Alternating sinc train ``sum_k (-1)^{k (P - 1)} sinc(x - k P)``.

    With ``kmax`` unset the closed form ``sin(pi x) / (P sin(pi x / P))`` is used.

    :param x: Evaluation points.
    :type x: np.ndarray
    :param period: Train period ``P``.
    :type period: int
    :param kmax: Truncation ``|k| <= kmax`` or None for the exact sum.
    :type kmax: int | None
    :return: The train values.
    :rtype: np.ndarray
    """
    x = np.asarray(x, dtype=float)
    if kmax is not None:
        out = np.zeros_like(x)
        for k in range(-kmax, kmax + 1):
            sign = -1.0 if (k * (period - 1)) % 2 else 1.0
            out += sign * np.sinc(x - k * period)
        return out
    denominator = period * np.sin(np.pi * x / period)
    near = np.abs(denominator) < 1e-12
    out = np.empty_like(x)
    out[~near] = np.sin(np.pi * x[~near]) / denominator[~near]
    j = np.rint(x[near] / period).astype(np.int64)
    out[near] = np.where((j * (period - 1)) % 2, -1.0, 1.0)
    return out


def sinc2_train(x: np.ndarray, period: int = 1, kmax: int | None = None) -> np.ndarray:
    """
    Squared sinc train ``sum_k sinc^2(x - k P)``; equals 1 everywhere for ``P = 1``.

    :param x: Evaluation points.
    :type x: np.ndarray
    :param period: Train period ``P``.
    :type period: int
    :param kmax: Truncation ``|k| <= kmax`` or None for the exact sum.
    :type kmax: int | None
    :return: The train values.
    :rtype: np.ndarray
    """
    x = np.asarray(x, dtype=float)
    if kmax is None:
        return dirichlet_train(x, period) ** 2
    out = np.zeros_like(x)
    for k in range(-kmax, kmax + 1):
        out += np.sinc(x - k * period) ** 2
    return out


def waveform_spectrum(wf: SampledWaveform, nfft: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """
    Scaled DTFT of a sampled waveform on the FFT grid, referenced to absolute time.

    :param wf: The waveform.
    :type wf: SampledWaveform
    :param nfft: Transform length, at least the waveform length.
    :type nfft: int | None
    :return: Ascending frequencies and ``X(f)``.
    :rtype: tuple[np.ndarray, np.ndarray]
    """
    nfft = nfft or len(wf)
    if nfft < len(wf):
        raise DomainError(f"FFT length {nfft} shorter than the waveform ({len(wf)} samples)")
    freqs = fft.fftshift(fft.fftfreq(nfft, 1 / wf.fs))
    values = fft.fftshift(fft.fft(wf.samples, nfft)) / wf.fs
    return freqs, values * np.exp(-2j * np.pi * freqs * wf.t0)


def _comb_power(x: np.ndarray, count: int, period: int) -> np.ndarray:
    """``|sum_k e^{-j 2 pi x k / period}|^2`` over ``count`` consecutive ``k``."""
    x = np.asarray(x, dtype=float)
    denominator = np.sin(np.pi * x / period)
    near = np.abs(denominator) < 1e-12
    out = np.full(x.shape, float(count**2))
    out[~near] = (np.sin(np.pi * x[~near] * count / period) / denominator[~near]) ** 2
    return out


def _sinc_tones(params: OddmParams, freqs: np.ndarray, shift: int, kmax: int | None) -> np.ndarray:
    x = params.N * params.T * freqs - shift
    return np.exp(-1j * np.pi * (params.N - 1) * x / params.N) * dirichlet_train(x, params.N, kmax)


def _check_index(m: int, n: int, params: OddmParams):
    if not (0 <= m < params.M and 0 <= n < params.N):
        raise DomainError(f"basis index ({m}, {n}) outside the {params.M} x {params.N} grid")


def freq_basis_digital(
    m: int, n: int, params: OddmParams, pulse: ProtoPulse, freqs: np.ndarray, kmax: int | None = None
) -> np.ndarray:
    """
    Fourier transform of the digital basis function: the envelope ``A(f)`` modulated by
    a train of sinc tones at ``(k N + psi(n)) / (N T)``.

    :param m: Delay index.
    :type m: int
    :param n: Doppler index.
    :type n: int
    :param params: Frame parameters.
    :type params: OddmParams
    :param pulse: The sub-pulse.
    :type pulse: ProtoPulse
    :param freqs: Frequencies in Hz.
    :type freqs: np.ndarray
    :param kmax: Sinc train truncation, None for the exact sum.
    :type kmax: int | None
    :return: Complex spectrum on ``freqs``.
    :rtype: np.ndarray
    """
    _check_index(m, n, params)
    freqs = np.asarray(freqs, dtype=float)
    envelope = pulse_freq(pulse, freqs).values
    delay = np.exp(-2j * np.pi * freqs * m * params.delay_res)
    return np.sqrt(params.N) * delay * envelope * _sinc_tones(params, freqs, psi_index(n, params.N), kmax)


def freq_basis_analog(
    m: int, n: int, params: OddmParams, pulse: ProtoPulse, freqs: np.ndarray, kmax: int | None = None
) -> np.ndarray:
    """
    Fourier transform of the analog basis function: same sinc tones as the digital
    basis, under the envelope ``A(f - psi(n) / (N T))``.

    :param m: Delay index.
    :type m: int
    :param n: Doppler index.
    :type n: int
    :param params: Frame parameters.
    :type params: OddmParams
    :param pulse: The sub-pulse.
    :type pulse: ProtoPulse
    :param freqs: Frequencies in Hz.
    :type freqs: np.ndarray
    :param kmax: Sinc train truncation, None for the exact sum.
    :type kmax: int | None
    :return: Complex spectrum on ``freqs``.
    :rtype: np.ndarray
    """
    _check_index(m, n, params)
    freqs = np.asarray(freqs, dtype=float)
    shift = psi_index(n, params.N)
    envelope = pulse_freq(pulse, freqs - shift * params.doppler_res).values
    delay = np.exp(-2j * np.pi * freqs * m * params.delay_res)
    return np.sqrt(params.N) * delay * envelope * _sinc_tones(params, freqs, shift, kmax)


def staircase_psd(
    pulse: ProtoPulse,
    freqs: np.ndarray,
    M: int,
    N: int,
    T: float,
    es: float = 1.0,
    kmax: int | None = None,
    lcp: int = 0,
) -> np.ndarray:
    """
    ``Es N M sum_n |A(f - n/(N T))|^2 sum_k sinc^2(N T f - k N - n)`` over
    ``n = -N/2 .. N/2 - 1``; for ``N = 1`` this is the digital shape.

    The last ``lcp`` delay rows carry one extra sub-pulse; their comb of ``N + 1``
    sub-pulses is always evaluated in closed form.
    """
    freqs = np.asarray(freqs, dtype=float)
    total = np.zeros(freqs.size)
    for shift in range(-(N // 2), N - N // 2):
        envelope = np.abs(pulse_freq(pulse, freqs - shift / (N * T)).values) ** 2
        x = N * T * freqs - shift
        rows = (M - lcp) * N * sinc2_train(x, N, kmax)
        if lcp:
            rows = rows + lcp * _comb_power(x, N + 1, N) / N
        total += envelope * rows
    return es * total


def psd_analytic_analog(
    params: OddmParams, pulse: ProtoPulse, freqs: np.ndarray, es: float = 1.0, kmax: int | None = None
) -> PsdCurve:
    """
    Expected PSD of analog ODDM frames with i.i.d. zero-mean symbols of energy ``es``.
    The CP-appended rows (``params.Lcp``) are included.

    :param params: Frame parameters.
    :type params: OddmParams
    :param pulse: The sub-pulse.
    :type pulse: ProtoPulse
    :param freqs: Ascending frequencies in Hz.
    :type freqs: np.ndarray
    :param es: Mean symbol energy.
    :type es: float
    :param kmax: Sinc train truncation, None for the exact sum.
    :type kmax: int | None
    :return: The staircase-shaped PSD.
    :rtype: PsdCurve
    """
    power = staircase_psd(pulse, freqs, params.M, params.N, params.T, es, kmax, params.Lcp)
    meta = {"es": es, "kmax": kmax, "lcp": params.Lcp, "normalization": PSD_NORMALIZATION}
    return PsdCurve(freqs, power, "analytic_analog", meta)


def psd_analytic_digital(
    params: OddmParams, pulse: ProtoPulse, freqs: np.ndarray, es: float = 1.0, kmax: int | None = None
) -> PsdCurve:
    """
    Expected PSD of approximate-digital ODDM frames, ``Es N M |A(f)|^2`` times the
    (unit) partition of the dense sinc-squared train. A cyclic prefix of ``Lcp`` samples repeats
    the frame tail one frame length ``N T`` earlier and adds
    ``Es |A(f)|^2 Lcp (1 + 2 cos(2 pi N T f))``.

    :param params: Frame parameters.
    :type params: OddmParams
    :param pulse: The sub-pulse.
    :type pulse: ProtoPulse
    :param freqs: Ascending frequencies in Hz.
    :type freqs: np.ndarray
    :param es: Mean symbol energy.
    :type es: float
    :param kmax: Sinc train truncation, None for the exact sum.
    :type kmax: int | None
    :return: The PSD, confined to the pulse spectrum.
    :rtype: PsdCurve
    """
    freqs = np.asarray(freqs, dtype=float)
    envelope = np.abs(pulse_freq(pulse, freqs).values) ** 2
    train = sinc2_train(params.N * params.T * freqs, 1, kmax)
    prefix = params.Lcp * (1 + 2 * np.cos(2 * np.pi * params.N * params.T * freqs))
    power = es * envelope * (params.N * params.M * train + prefix)
    meta = {"es": es, "kmax": kmax, "lcp": params.Lcp, "normalization": PSD_NORMALIZATION}
    return PsdCurve(freqs, power, "analytic_digital", meta)


def psd_analytic_otfs(params: OddmParams, freqs: np.ndarray, es: float = 1.0) -> PsdCurve:
    """Expected PSD of rectangular-pulse OTFS (no CP): ``Es N T sum_l sinc^2(f T - psi(l))``."""
    freqs = np.asarray(freqs, dtype=float)
    power = np.zeros(freqs.size)
    for shift in psi_indices(params.M):
        power += np.sinc(freqs * params.T - shift) ** 2
    meta = {"es": es, "lcp": 0, "normalization": PSD_NORMALIZATION}
    return PsdCurve(freqs, es * params.N * params.T * power, "analytic_otfs", meta)


def psd_empirical(frames: Iterable[SampledWaveform], trials: int, fft_len: int) -> PsdCurve:
    """
    Average periodogram ``mean |X(f)|^2`` over ``trials`` frames.

    :param frames: Source of independent frames; the first ``trials`` are consumed in order.
    :type frames: Iterable[SampledWaveform]
    :param trials: Number of frames to average.
    :type trials: int
    :param fft_len: Transform length, at least the longest frame.
    :type fft_len: int
    :return: The estimated PSD on the shifted FFT grid.
    :rtype: PsdCurve
    """
    if trials < 1:
        raise DomainError("empirical PSD needs at least one trial")
    acc = np.zeros(fft_len)
    fs = None
    used = 0
    for wf in frames:
        if used == trials:
            break
        if fs is None:
            fs = wf.fs
        elif not np.isclose(wf.fs, fs, rtol=1e-12):
            raise DomainError("frames at different sample rates")
        if len(wf) > fft_len:
            raise DomainError(f"FFT length {fft_len} shorter than a frame ({len(wf)} samples)")
        acc += np.abs(fft.fft(wf.samples, fft_len) / wf.fs) ** 2
        used += 1
    if used < trials:
        raise DomainError(f"frame source ran dry after {used} of {trials} frames")
    freqs = fft.fftshift(fft.fftfreq(fft_len, 1 / fs))
    meta = {"trials": trials, "fft_len": fft_len, "normalization": PSD_NORMALIZATION}
    return PsdCurve(freqs, fft.fftshift(acc / trials), "empirical", meta)


def _crossing(freqs: np.ndarray, level: np.ndarray, i: int, j: int, target: float) -> float:
    # linear interpolation in dB between the last point above and the first below
    return float(freqs[i] + (target - level[i]) * (freqs[j] - freqs[i]) / (level[j] - level[i]))


def oobe_metrics(curve: PsdCurve, thresholds_db: Iterable[float], band_edge_hz: float | None = None) -> OobeMetrics:
    """
    Threshold bandwidths and out-of-band levels of a PSD.

    For every threshold the curve is walked outward from its maximum until it first
    falls the given number of dB below it; a side that never falls is unbounded (inf).

    :param curve: The PSD.
    :type curve: PsdCurve
    :param thresholds_db: Thresholds below the maximum, in dB.
    :type thresholds_db: Iterable[float]
    :param band_edge_hz: Sidelobes and out-of-band energy are taken over ``|f| >= band_edge_hz``.
    :type band_edge_hz: float | None
    :return: Bandwidths, edges, peak sidelobe and out-of-band energy fraction.
    :rtype: OobeMetrics
    """
    level = curve.normalized_db()
    freqs = curve.freqs
    top = int(np.argmax(curve.power))
    thresholds = tuple(float(t) for t in thresholds_db)
    widths, lowers, uppers = [], [], []
    for threshold in thresholds:
        below = np.flatnonzero(level[top:] < -threshold)
        upper = _crossing(freqs, level, top + below[0] - 1, top + below[0], -threshold) if below.size else np.inf
        below = np.flatnonzero(level[: top + 1][::-1] < -threshold)
        lower = _crossing(freqs, level, top - below[0] + 1, top - below[0], -threshold) if below.size else -np.inf
        uppers.append(upper)
        lowers.append(lower)
        widths.append(upper - lower)

    sidelobe_db, fraction = -np.inf, 0.0
    if band_edge_hz is not None:
        outside = np.abs(freqs) >= band_edge_hz
        if outside.any():
            sidelobe_db = float(level[outside].max())
        fraction = float(curve.power[outside].sum() / curve.power.sum())
    return OobeMetrics(thresholds, tuple(widths), tuple(lowers), tuple(uppers), sidelobe_db, fraction)


def detect_plateaus(
    curve: PsdCurve,
    tone_spacing_hz: float,
    rel_tol: float = 1e-6,
    floor_db: float = -60.0,
    ceiling_db: float = -3.0,
) -> list[Plateau]:
    """
    Runs of equal PSD values on consecutive tones ``k * tone_spacing_hz``.

    Only runs whose level lies in ``[floor_db, ceiling_db]`` relative to the curve
    maximum are reported, i.e. the transition regions.

    :param curve: The PSD, sampled on a grid containing the tones.
    :type curve: PsdCurve
    :param tone_spacing_hz: Tone spacing, normally ``1/(N T)``.
    :type tone_spacing_hz: float
    :param rel_tol: Relative tolerance for two tone values to count as equal.
    :type rel_tol: float
    :param floor_db: Lowest level considered.
    :type floor_db: float
    :param ceiling_db: Highest level considered.
    :type ceiling_db: float
    :return: Plateaus in ascending frequency; width is the tone count times the spacing.
    :rtype: list[Plateau]
    """
    ratio = curve.freqs / tone_spacing_hz
    on_tone = np.abs(ratio - np.rint(ratio)) < 1e-6
    tones = np.rint(ratio[on_tone]).astype(np.int64)
    power = curve.power[on_tone]
    level = curve.normalized_db()[on_tone]

    plateaus = []
    start = 0
    for i in range(1, tones.size + 1):
        same = (
            i < tones.size
            and tones[i] == tones[i - 1] + 1
            and abs(power[i] - power[i - 1]) <= rel_tol * max(power[i], power[i - 1])
        )
        if same:
            continue
        count = i - start
        run_level = float(level[start:i].mean())
        if count > 1 and floor_db <= run_level <= ceiling_db:
            f0 = (tones[start] - 0.5) * tone_spacing_hz
            f1 = (tones[i - 1] + 0.5) * tone_spacing_hz
            plateaus.append(Plateau(f0, f1, count * tone_spacing_hz, run_level))
        start = i
    return plateaus


def waveform_difference(params: OddmParams, pulse: ProtoPulse, trials: int, seed: int) -> float:
    """
    Mean normalized squared difference ``||x_A - x_D||^2 / ||x_D||^2`` between analog and
    digital frames carrying the same random 4-QAM grid, without CP.

    :param params: Frame parameters (Lcp is ignored).
    :type params: OddmParams
    :param pulse: The sub-pulse.
    :type pulse: ProtoPulse
    :param trials: Number of random frames.
    :type trials: int
    :param seed: Root seed.
    :type seed: int
    :return: The averaged ratio.
    :rtype: float
    """
    if trials < 1:
        raise DomainError("waveform comparison needs at least one trial")
    params = params.replace(Lcp=0)
    ratios = []
    for trial in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))
        grid = qam_map(random_bits(rng, 2 * params.M * params.N), params)
        x_a = analog_modulate(grid, params, pulse).wf
        x_d = digital_modulate(grid, params, pulse)
        lo = min(x_a.offset, x_d.offset)
        length = max(x_a.end_offset, x_d.end_offset) - lo
        diff = x_a.window(lo, length) - x_d.window(lo, length)
        ratios.append(np.sum(np.abs(diff) ** 2) / np.sum(np.abs(x_d.samples) ** 2))
    result = float(np.mean(ratios))
    logger.debug("analog/digital waveform difference over %d frames: %.3e", trials, result)
    return result
