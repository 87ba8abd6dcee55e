"""
Direct multicarrier (analog) ODDM: every delay row modulates N Doppler tones that are
windowed by the (CP-appended) DDOP and then time-division multiplexed at T/M spacing.
Continuous-time signals are simulated on the oversampled grid ``fs = Ns M / T``.
"""
import logging
from dataclasses import dataclass

import numpy as np

from src.schemas import OddmParams
from src.services.errors import DomainError
from src.services.params_grid import DdGrid, SampledWaveform, check_coverage, psi_indices
from src.services.pulse import Ddop, ProtoPulse, build_ddop, build_ddop_ce, build_ddop_cp

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnalogFrame:
    wf: SampledWaveform
    params: OddmParams


def tone_matrix(params: OddmParams, offsets: np.ndarray) -> np.ndarray:
    """
    Doppler tones ``exp(j 2 pi psi(n) F t)`` at the given sample offsets.

    :param params: Frame parameters.
    :type params: OddmParams
    :param offsets: Sample indices relative to the delay-row origin.
    :type offsets: np.ndarray
    :return: ``N x len(offsets)`` matrix, row ``n`` for Doppler index ``n``.
    :rtype: np.ndarray
    """
    cycles_per_sample = params.doppler_res * params.dt
    phase = np.outer(psi_indices(params.N), np.asarray(offsets) * cycles_per_sample)
    return np.exp(2j * np.pi * phase)


def generalized_window(params: OddmParams, pulse: ProtoPulse) -> Ddop:
    """Generalized DDOP shifted so that its data sub-pulses sit at ``0, T, ..., (N-1) T``."""
    ddop = build_ddop_ce(params, pulse, normalized=True)
    shift = -params.d * params.samples_per_symbol
    return Ddop(
        SampledWaveform.at_offset(ddop.wf.samples, params, ddop.wf.offset + shift),
        ddop.kind,
        ddop.subpulses,
    )


def _row_windows(params: OddmParams, pulse: ProtoPulse, generalized: bool) -> list[Ddop]:
    if generalized:
        return [generalized_window(params, pulse)] * params.M
    plain = build_ddop(params, pulse)
    cp = build_ddop_cp(params, pulse, params.M - 1) if params.Lcp else plain
    return [plain if m <= params.M - params.Lcp - 1 else cp for m in range(params.M)]


def analog_modulate(
    grid: DdGrid, params: OddmParams, pulse: ProtoPulse, generalized: bool = False
) -> AnalogFrame:
    """
    Analog ODDM transmitter.

    For each delay row ``m`` the N-tone sum is evaluated only on the support of the
    row's window and added to the frame at an offset of ``m T/M``.

    :param grid: Delay-Doppler symbols.
    :type grid: DdGrid
    :param params: Frame parameters.
    :type params: OddmParams
    :param pulse: The sub-pulse.
    :type pulse: ProtoPulse
    :param generalized: Window every row with the generalized DDOP instead of the CP DDOP.
    :type generalized: bool
    :return: The transmitted frame.
    :rtype: AnalogFrame
    """
    grid.check_shape(params)
    windows = _row_windows(params, pulse, generalized)
    Ns = params.Ns
    starts = [w.wf.offset + m * Ns for m, w in enumerate(windows)]
    ends = [w.wf.end_offset + m * Ns for m, w in enumerate(windows)]
    frame_start = min(starts)
    frame = np.zeros(max(ends) - frame_start, dtype=complex)

    cache = {}
    for m, window in enumerate(windows):
        key = id(window)
        if key not in cache:
            support = np.flatnonzero(window.wf.samples)
            offsets = window.wf.offset + support
            cache[key] = (support, window.wf.samples[support], tone_matrix(params, offsets))
        support, values, tones = cache[key]
        row = grid.values[m] @ tones
        frame[window.wf.offset + m * Ns - frame_start + support] += values * row

    logger.debug("analog frame: %d samples from offset %d", frame.size, frame_start)
    return AnalogFrame(SampledWaveform.at_offset(frame, params, frame_start), params)


def analog_demodulate(rx: SampledWaveform, params: OddmParams, pulse: ProtoPulse) -> DdGrid:
    """
    Analog ODDM receiver: correlate against ``u*(t - m T/M) exp(-j 2 pi psi(n) F (t - m T/M))``.

    Samples before the frame body (the CP region) only enter through the tails of the
    first sub-pulses.

    :param rx: Received waveform at ``fs``.
    :type rx: SampledWaveform
    :param params: Frame parameters.
    :type params: OddmParams
    :param pulse: The sub-pulse.
    :type pulse: ProtoPulse
    :return: Received delay-Doppler symbols.
    :rtype: DdGrid
    """
    check_coverage(rx, params, 0)
    u = build_ddop(params, pulse).wf
    support = np.flatnonzero(u.samples)
    tones = tone_matrix(params, u.offset + support)
    span = u.samples.size + (params.M - 1) * params.Ns
    r = rx.window(u.offset, span)
    rows = r[np.arange(params.M)[:, None] * params.Ns + support[None, :]]
    Y = (rows * np.conj(u.samples[support])) @ np.conj(tones).T * params.dt
    return DdGrid(Y)


def analog_basis(
    m: int, n: int, params: OddmParams, pulse: ProtoPulse, generalized: bool = False
) -> SampledWaveform:
    """
    Analog basis ``exp(j 2 pi psi(n)/(N T) (t - m T/M)) u(t - m T/M)``.

    :param m: Delay index.
    :type m: int
    :param n: Doppler index.
    :type n: int
    :param params: Frame parameters.
    :type params: OddmParams
    :param pulse: The sub-pulse.
    :type pulse: ProtoPulse
    :param generalized: Use the generalized DDOP as window.
    :type generalized: bool
    :return: The sampled basis function.
    :rtype: SampledWaveform
    """
    if not (0 <= m < params.M and 0 <= n < params.N):
        raise DomainError(f"basis index ({m}, {n}) outside the {params.M} x {params.N} grid")
    u = generalized_window(params, pulse).wf if generalized else build_ddop(params, pulse).wf
    offsets = u.offset + np.arange(u.samples.size)
    tone = tone_matrix(params, offsets)[n]
    return SampledWaveform.at_offset(u.samples * tone, params, u.offset + m * params.Ns)
