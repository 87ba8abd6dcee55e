"""
Doubly-selective multipath channel at the waveform level, AWGN and tap generators.

The received signal is ``r(t) = sum_p h_p x(t - tau_p) exp(j 2 pi nu_p (t - tau_p))``:
the Doppler phase is referenced to the delayed signal.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import constants, signal

from src.conf.config import settings
from src.schemas import EVA_MAX_DELAY_S, OddmParams
from src.services.errors import DomainError
from src.services.params_grid import SampledWaveform

logger = logging.getLogger(__name__)

# Extended Vehicular A power-delay profile (3GPP TS 36.104)
EVA_DELAYS_NS = np.array([0, 30, 150, 310, 370, 710, 1090, 1730, 2510])
EVA_POWERS_DB = np.array([0.0, -1.5, -1.4, -3.6, -0.6, -9.1, -7.0, -12.0, -16.9])

GRID_TOL = 1e-6

CONVENTIONS = {
    "channel": "r(t) = sum_p h_p x(t - tau_p) exp(j 2 pi nu_p (t - tau_p))",
    "doppler_sign": "positive nu_p raises the received frequency",
    "awgn": "N0 = Es / (bits_per_symbol 10^(EbN0_dB / 10)); per-sample variance N0 fs",
}


@dataclass(frozen=True)
class ChannelTap:
    gain: complex
    delay_s: float
    doppler_hz: float

    def __post_init__(self):
        if self.delay_s < 0:
            raise DomainError(f"tap delay must be non-negative, got {self.delay_s}")


@dataclass(frozen=True)
class DdChannel:
    taps: tuple[ChannelTap, ...]

    def __post_init__(self):
        object.__setattr__(self, "taps", tuple(self.taps))
        if not self.taps:
            raise DomainError("a channel needs at least one tap")

    @classmethod
    def single(cls, gain: complex = 1.0, delay_s: float = 0.0, doppler_hz: float = 0.0) -> "DdChannel":
        return cls((ChannelTap(gain, delay_s, doppler_hz),))

    @classmethod
    def from_grid(cls, params: OddmParams, taps: list[tuple[int, int, complex]]) -> "DdChannel":
        """Channel with tap ``(l, k, h)`` at delay ``l T/M`` and Doppler ``k / (N T)``."""
        return cls(tuple(ChannelTap(h, l * params.delay_res, k * params.doppler_res) for l, k, h in taps))

    @property
    def max_delay(self) -> float:
        return max(tap.delay_s for tap in self.taps)

    def grid_indices(self, params: OddmParams) -> list[tuple[int, int, complex]]:
        """
        Delay and Doppler indices of every tap.

        :param params: Frame parameters.
        :type params: OddmParams
        :return: ``(l, k, h)`` per tap.
        :rtype: list[tuple[int, int, complex]]
        """
        out = []
        for tap in self.taps:
            l = tap.delay_s / params.delay_res
            k = tap.doppler_hz / params.doppler_res
            if abs(l - round(l)) > GRID_TOL or abs(k - round(k)) > GRID_TOL:
                raise DomainError(
                    f"tap at {tap.delay_s:.4g} s, {tap.doppler_hz:.4g} Hz is off the delay-Doppler grid"
                )
            out.append((int(round(l)), int(round(k)), complex(tap.gain)))
        return out

    def on_grid(self, params: OddmParams) -> bool:
        try:
            self.grid_indices(params)
        except DomainError:
            return False
        return True

    def rows(self) -> list[tuple[int, float, float, float, float]]:
        return [
            (p, float(np.real(t.gain)), float(np.imag(t.gain)), t.delay_s, t.doppler_hz)
            for p, t in enumerate(self.taps)
        ]


def fractional_delay_filter(frac: float, length: int, beta: float) -> tuple[np.ndarray, int]:
    """
    Kaiser-windowed sinc interpolator for a delay of ``frac`` samples, ``0 <= frac < 1``.

    :param frac: Fractional part of the delay.
    :type frac: float
    :param length: Number of taps (even).
    :type length: int
    :param beta: Kaiser window shape.
    :type beta: float
    :return: The taps and the index of the first tap relative to the integer delay.
    :rtype: tuple[np.ndarray, int]
    """
    first = -(length // 2) + 1
    k = np.arange(first, first + length)
    return np.sinc(k - frac) * signal.windows.kaiser(length, beta), first


def _delayed(tx: SampledWaveform, delay_samples: float) -> tuple[np.ndarray, int]:
    whole = int(np.floor(delay_samples + GRID_TOL))
    frac = delay_samples - whole
    if abs(frac) <= GRID_TOL:
        return tx.samples, tx.offset + whole
    taps, first = fractional_delay_filter(frac, settings.fracdelay_taps, settings.kaiser_beta)
    return np.convolve(tx.samples, taps), tx.offset + whole + first


def apply_channel(tx: SampledWaveform, ch: DdChannel) -> SampledWaveform:
    """
    Pass a waveform through the multipath channel.

    Delays that are whole samples are exact shifts; other delays use windowed-sinc
    interpolation. The output starts with the input and extends past the longest delay.

    :param tx: Transmitted waveform.
    :type tx: SampledWaveform
    :param ch: The channel.
    :type ch: DdChannel
    :return: The received waveform at the same rate.
    :rtype: SampledWaveform
    """
    paths = []
    for tap in ch.taps:
        samples, start = _delayed(tx, tap.delay_s * tx.fs)
        t = (start + np.arange(samples.size)) / tx.fs
        rotation = np.exp(2j * np.pi * tap.doppler_hz * (t - tap.delay_s))
        paths.append((start, tap.gain * samples * rotation))

    lo = min(tx.offset, min(start for start, _ in paths))
    hi = max(start + samples.size for start, samples in paths)
    out = np.zeros(hi - lo, dtype=complex)
    for start, samples in paths:
        out[start - lo : start - lo + samples.size] += samples
    return SampledWaveform(out, tx.fs, lo / tx.fs)


def noise_psd(ebn0_db: float, bits_per_symbol: int, es: float = 1.0) -> float:
    """``N0 = Es / (bits_per_symbol 10^(Eb/N0 / 10))``."""
    return es / (bits_per_symbol * 10 ** (ebn0_db / 10))


def add_awgn(
    wf: SampledWaveform,
    ebn0_db: float,
    bits_per_symbol: int,
    rng: np.random.Generator | int | np.random.SeedSequence,
    es: float = 1.0,
) -> SampledWaveform:
    """
    Add circular white Gaussian noise of one-sided density ``N0``.

    Each sample receives variance ``N0 fs``, so a unit-energy matched filter delivers
    noise of variance ``N0`` per symbol.

    :param wf: Noise-free waveform.
    :type wf: SampledWaveform
    :param ebn0_db: Eb/N0 in dB; ``inf`` leaves the waveform unchanged.
    :type ebn0_db: float
    :param bits_per_symbol: Bits carried per QAM symbol.
    :type bits_per_symbol: int
    :param rng: Generator or seed for the noise stream.
    :type rng: np.random.Generator | int | np.random.SeedSequence
    :param es: Mean symbol energy.
    :type es: float
    :return: The noisy waveform.
    :rtype: SampledWaveform
    """
    if np.isposinf(ebn0_db):
        return wf
    if not np.isfinite(ebn0_db):
        raise DomainError(f"Eb/N0 must be finite or +inf, got {ebn0_db}")
    rng = np.random.default_rng(rng)
    variance = noise_psd(ebn0_db, bits_per_symbol, es) * wf.fs
    noise = rng.standard_normal(len(wf)) + 1j * rng.standard_normal(len(wf))
    return SampledWaveform(wf.samples + np.sqrt(variance / 2) * noise, wf.fs, wf.t0)


def max_doppler(fc_hz: float, speed_kmh: float) -> float:
    return fc_hz * (speed_kmh / 3.6) / constants.c


def merge_on_grid_taps(taps: list[tuple[int, int, complex]]) -> list[tuple[int, int, complex]]:
    """Sum the gains of taps that share a delay-Doppler cell; order of first appearance is kept."""
    merged: dict[tuple[int, int], complex] = {}
    for l, k, h in taps:
        merged[(l, k)] = merged.get((l, k), 0j) + h
    return [(l, k, h) for (l, k), h in merged.items()]


def eva_profile(
    fc_hz: float,
    speed_kmh: float,
    params: OddmParams,
    rng: np.random.Generator | int | np.random.SeedSequence,
    quantize_to_grid: bool = True,
) -> DdChannel:
    """
    Random EVA channel realization with Rayleigh tap gains and Jakes-distributed Dopplers
    ``nu_max cos(theta)``.

    :param fc_hz: Carrier frequency.
    :type fc_hz: float
    :param speed_kmh: Terminal speed.
    :type speed_kmh: float
    :param params: Frame parameters (grid for quantization).
    :type params: OddmParams
    :param rng: Generator or seed.
    :type rng: np.random.Generator | int | np.random.SeedSequence
    :param quantize_to_grid: Round delays to ``T/M`` and Dopplers to ``1/(N T)`` and merge
        taps that land in the same cell.
    :type quantize_to_grid: bool
    :return: The channel.
    :rtype: DdChannel
    """
    if fc_hz <= 0 or speed_kmh <= 0:
        raise DomainError("carrier frequency and speed must be positive")
    rng = np.random.default_rng(rng)
    powers = 10 ** (EVA_POWERS_DB / 10)
    powers = powers / powers.sum()
    count = powers.size
    gains = np.sqrt(powers / 2) * (rng.standard_normal(count) + 1j * rng.standard_normal(count))
    dopplers = max_doppler(fc_hz, speed_kmh) * np.cos(rng.uniform(-np.pi, np.pi, count))
    delays = EVA_DELAYS_NS * 1e-9

    if not quantize_to_grid:
        return DdChannel(tuple(ChannelTap(complex(h), float(d), float(v)) for h, d, v in zip(gains, delays, dopplers)))
    taps = [
        (int(round(d / params.delay_res)), int(round(v / params.doppler_res)), complex(h))
        for h, d, v in zip(gains, delays, dopplers)
    ]
    merged = merge_on_grid_taps(taps)
    logger.debug("EVA realization: %d taps on %d grid cells", count, len(merged))
    return DdChannel.from_grid(params, merged)


def fixed_channel(params: OddmParams) -> DdChannel:
    """
    Deterministic four-tap on-grid channel: delays ``0..3`` bins, Dopplers ``0, 1, -1, 2``
    bins, powers 0, -1, -3 and -6 dB normalized to unit sum.

    :param params: Frame parameters.
    :type params: OddmParams
    :return: The channel.
    :rtype: DdChannel
    """
    powers = 10 ** (np.array([0.0, -1.0, -3.0, -6.0]) / 10)
    powers = powers / powers.sum()
    phases = np.array([0.0, np.pi / 3, -np.pi / 4, 2 * np.pi / 3])
    gains = np.sqrt(powers) * np.exp(1j * phases)
    cells = [(0, 0), (1, 1), (2, -1), (3, 2)]
    return DdChannel.from_grid(params, [(l, k, complex(h)) for (l, k), h in zip(cells, gains)])


def check_cp(ch: DdChannel, params: OddmParams) -> str | None:
    """Warning text when the delay spread exceeds the cyclic prefix, else None."""
    spread = max(ch.max_delay, 0.0)
    if spread > params.tcp + 1e-15:
        return f"channel delay spread {spread * 1e9:.0f} ns exceeds Tcp = {params.tcp * 1e9:.0f} ns"
    return None


def eva_cp_warning(params: OddmParams) -> str | None:
    if params.tcp < EVA_MAX_DELAY_S:
        return f"Tcp = {params.tcp * 1e9:.0f} ns is shorter than the EVA delay spread {EVA_MAX_DELAY_S * 1e9:.0f} ns"
    return None
