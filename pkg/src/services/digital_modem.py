"""
Approximate-digital ODDM: row-wise IDFT to the delay-time domain, column-wise
serialization, cyclic prefix and sample-wise pulse shaping with the truncated sub-pulse.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import fft, signal

from src.schemas import OddmParams
from src.services.errors import DomainError
from src.services.params_grid import DdGrid, SampledWaveform, check_coverage
from src.services.pulse import ProtoPulse, pulse_train

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiscreteTimeSeq:
    values: np.ndarray
    start: int = 0

    def __len__(self) -> int:
        return self.values.size


def dd_to_delay_time(grid: DdGrid) -> np.ndarray:
    """
    Row-wise unitary N-point IDFT, ``X_dt[m, k] = N^-1/2 sum_n X[m, n] e^{j 2 pi n k / N}``.

    :param grid: Delay-Doppler symbols.
    :type grid: DdGrid
    :return: Delay-time matrix of the same shape.
    :rtype: np.ndarray
    """
    return fft.ifft(grid.values, axis=1, norm="ortho")


def delay_time_to_dd(X_dt: np.ndarray) -> DdGrid:
    """Row-wise unitary N-point DFT, inverse of ``dd_to_delay_time``."""
    return DdGrid(fft.fft(X_dt, axis=1, norm="ortho"))


def serialize(X_dt: np.ndarray) -> DiscreteTimeSeq:
    # column-major: seq[k M + m] = X_dt[m, k]
    return DiscreteTimeSeq(np.asarray(X_dt).ravel(order="F"))


def deserialize(seq: DiscreteTimeSeq, M: int, N: int) -> np.ndarray:
    if len(seq) != M * N:
        raise DomainError(f"sequence of length {len(seq)} cannot fill a {M} x {N} matrix")
    return seq.values.reshape(N, M).T


def add_cp(seq: DiscreteTimeSeq, Lcp: int) -> DiscreteTimeSeq:
    """
    Prepend the last ``Lcp`` samples, so that ``x_cp[k] = x[k mod MN]`` for ``k >= -Lcp``.

    :param seq: Frame body starting at index 0.
    :type seq: DiscreteTimeSeq
    :param Lcp: Prefix length in delay bins.
    :type Lcp: int
    :return: The CP-extended sequence starting at ``-Lcp``.
    :rtype: DiscreteTimeSeq
    """
    if not 0 <= Lcp < len(seq):
        raise DomainError(f"CP length {Lcp} must lie in [0, {len(seq)})")
    if Lcp == 0:
        return DiscreteTimeSeq(seq.values, seq.start)
    return DiscreteTimeSeq(np.concatenate([seq.values[-Lcp:], seq.values]), seq.start - Lcp)


def remove_cp(seq: DiscreteTimeSeq, Lcp: int) -> DiscreteTimeSeq:
    if not 0 <= Lcp < len(seq):
        raise DomainError(f"CP length {Lcp} must lie in [0, {len(seq)})")
    return DiscreteTimeSeq(seq.values[Lcp:], seq.start + Lcp)


def digital_modulate(grid: DdGrid, params: OddmParams, pulse: ProtoPulse) -> SampledWaveform:
    """
    Approximate-digital ODDM transmitter.

    The CP-extended sequence is upsampled by Ns and filtered with the sub-pulse taps
    in one polyphase step; the first sample sits at ``-Lcp T/M - Ta/2``.

    :param grid: Delay-Doppler symbols.
    :type grid: DdGrid
    :param params: Frame parameters.
    :type params: OddmParams
    :param pulse: The sub-pulse.
    :type pulse: ProtoPulse
    :return: The transmitted waveform at ``fs``.
    :rtype: SampledWaveform
    """
    grid.check_shape(params)
    x_cp = add_cp(serialize(dd_to_delay_time(grid)), params.Lcp)
    samples = signal.upfirdn(pulse.taps, x_cp.values, up=params.Ns)
    start = x_cp.start * params.Ns - pulse.center
    return SampledWaveform.at_offset(samples, params, start)


def matched_filter(rx: SampledWaveform, params: OddmParams, pulse: ProtoPulse) -> DiscreteTimeSeq:
    """
    Correlate with the sub-pulse and keep one sample per delay bin, aligned to
    ``t = k T/M`` for ``k = -Lcp .. MN - 1``.

    :param rx: Received waveform at ``fs``.
    :type rx: SampledWaveform
    :param params: Frame parameters.
    :type params: OddmParams
    :param pulse: The sub-pulse.
    :type pulse: ProtoPulse
    :return: Matched-filter outputs including the CP.
    :rtype: DiscreteTimeSeq
    """
    count = params.M * params.N + params.Lcp
    start = -params.Lcp * params.Ns - pulse.center
    r = rx.window(start, (count - 1) * params.Ns + pulse.taps.size)
    y = signal.correlate(r, pulse.taps, mode="valid")[:: params.Ns] * params.dt
    return DiscreteTimeSeq(y, -params.Lcp)


def digital_demodulate(rx: SampledWaveform, params: OddmParams, pulse: ProtoPulse) -> DdGrid:
    """
    Approximate-digital ODDM receiver: matched filter, CP removal, deserialization and
    row-wise DFT.

    :param rx: Received waveform at ``fs``.
    :type rx: SampledWaveform
    :param params: Frame parameters.
    :type params: OddmParams
    :param pulse: The sub-pulse.
    :type pulse: ProtoPulse
    :return: Received delay-Doppler symbols.
    :rtype: DdGrid
    """
    check_coverage(rx, params, -params.Lcp * params.Ns)
    y = remove_cp(matched_filter(rx, params, pulse), params.Lcp)
    return delay_time_to_dd(deserialize(y, params.M, params.N))


def digital_basis(m: int, n: int, params: OddmParams, pulse: ProtoPulse) -> SampledWaveform:
    """
    Digital basis ``N^-1/2 sum_k e^{j 2 pi n k / N} a(t - kT - m T/M)``: every sub-pulse
    carries a constant phase.

    :param m: Delay index.
    :type m: int
    :param n: Doppler index.
    :type n: int
    :param params: Frame parameters.
    :type params: OddmParams
    :param pulse: The sub-pulse.
    :type pulse: ProtoPulse
    :return: The sampled basis function.
    :rtype: SampledWaveform
    """
    if not (0 <= m < params.M and 0 <= n < params.N):
        raise DomainError(f"basis index ({m}, {n}) outside the {params.M} x {params.N} grid")
    k = np.arange(params.N)
    positions = k * params.samples_per_symbol + m * params.Ns
    amplitudes = np.exp(2j * np.pi * n * k / params.N) / np.sqrt(params.N)
    samples, start = pulse_train(pulse, positions, amplitudes)
    return SampledWaveform.at_offset(samples, params, start)
