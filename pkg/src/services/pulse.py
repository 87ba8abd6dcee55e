import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

from src.schemas import OddmParams
from src.services.errors import DomainError
from src.services.params_grid import SampledWaveform

logger = logging.getLogger(__name__)

SINGULARITY_GUARD = 1e-8

DdopKind = Literal["plain", "cp_appended", "generalized"]


@dataclass(frozen=True)
class ProtoPulse:
    taps: np.ndarray
    center: int
    energy: float
    dt: float

    @property
    def times(self) -> np.ndarray:
        return (np.arange(self.taps.size) - self.center) * self.dt


@dataclass(frozen=True)
class Ddop:
    wf: SampledWaveform
    kind: DdopKind
    subpulses: int


def srrc_value(t: np.ndarray | float, delay_res: float, beta: float) -> np.ndarray:
    """
    Square-root raised-cosine pulse with zero-ISI interval ``delay_res``.

    The removable singularities at ``t = 0`` and ``t = ±delay_res / (4 beta)`` are
    replaced by their limits.

    :param t: Time instants in seconds.
    :type t: np.ndarray | float
    :param delay_res: Zero-ISI interval (T/M).
    :type delay_res: float
    :param beta: Roll-off factor in [0, 1].
    :type beta: float
    :return: Pulse values (unit energy before truncation).
    :rtype: np.ndarray
    """
    x = np.atleast_1d(np.asarray(t, dtype=float)) / delay_res
    scale = 1 / np.sqrt(delay_res)
    out = np.empty_like(x)

    at_zero = np.abs(x) < SINGULARITY_GUARD
    at_edge = (
        np.abs(np.abs(x) - 1 / (4 * beta)) < SINGULARITY_GUARD if beta > 0 else np.zeros_like(at_zero)
    )
    regular = ~(at_zero | at_edge)

    out[at_zero] = scale * (1 - beta + 4 * beta / np.pi)
    if beta > 0:
        out[at_edge] = (
            scale
            * beta
            / np.sqrt(2)
            * (
                (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta))
                + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
            )
        )
    xr = x[regular]
    out[regular] = (
        scale
        * (np.sin(np.pi * xr * (1 - beta)) + 4 * beta * xr * np.cos(np.pi * xr * (1 + beta)))
        / (np.pi * xr * (1 - (4 * beta * xr) ** 2))
    )
    return out


def srrc_pulse(params: OddmParams) -> ProtoPulse:
    """
    Truncated SRRC sub-pulse sampled at ``Ns / delay_res`` on ``[-Q T/M, Q T/M]`` and
    renormalized to unit energy.

    :param params: Frame parameters.
    :type params: OddmParams
    :return: The sampled sub-pulse.
    :rtype: ProtoPulse
    """
    center = params.Q * params.Ns
    half = srrc_value(np.arange(center + 1) * params.dt, params.delay_res, params.beta)
    taps = np.concatenate([half[:0:-1], half])
    taps = taps / np.sqrt(np.sum(taps**2) * params.dt)
    taps.setflags(write=False)
    return ProtoPulse(taps=taps, center=center, energy=float(np.sum(taps**2) * params.dt), dt=params.dt)


def pulse_autocorrelation(pulse: ProtoPulse, lags: np.ndarray, samples_per_bin: int) -> np.ndarray:
    """
    Autocorrelation of the sampled sub-pulse at integer multiples of the delay resolution.

    :param pulse: The sub-pulse.
    :type pulse: ProtoPulse
    :param lags: Lags in delay bins.
    :type lags: np.ndarray
    :param samples_per_bin: Samples per delay bin (Ns).
    :type samples_per_bin: int
    :return: ``R(k T/M)`` for every lag.
    :rtype: np.ndarray
    """
    full = np.correlate(pulse.taps, pulse.taps, mode="full") * pulse.dt
    zero = pulse.taps.size - 1
    out = np.zeros(len(lags), dtype=complex)
    for i, lag in enumerate(np.asarray(lags) * samples_per_bin):
        if abs(lag) <= zero:
            out[i] = full[zero + lag]
    return out


def pulse_train(pulse: ProtoPulse, positions: np.ndarray, scale: float | np.ndarray) -> tuple[np.ndarray, int]:
    """
    Sum of shifted copies of the sub-pulse.

    :param pulse: The sub-pulse.
    :type pulse: ProtoPulse
    :param positions: Sample indices of the copy centers, ascending.
    :type positions: np.ndarray
    :param scale: Amplitude of every copy, or one amplitude per copy.
    :type scale: float | np.ndarray
    :return: The samples and the absolute index of the first sample.
    :rtype: tuple[np.ndarray, int]
    """
    positions = np.asarray(positions, dtype=int)
    start = int(positions[0]) - pulse.center
    samples = np.zeros(int(positions[-1] - positions[0]) + pulse.taps.size, dtype=complex)
    amplitudes = np.broadcast_to(np.asarray(scale), positions.shape)
    for position, amplitude in zip(positions, amplitudes):
        lo = int(position) - pulse.center - start
        samples[lo : lo + pulse.taps.size] += amplitude * pulse.taps
    return samples, start


def build_ddop(params: OddmParams, pulse: ProtoPulse) -> Ddop:
    """
    DDOP ``u(t) = N^-1/2 sum_k a(t - kT)`` for ``k = 0..N-1``.

    :param params: Frame parameters.
    :type params: OddmParams
    :param pulse: The sub-pulse.
    :type pulse: ProtoPulse
    :return: The plain DDOP starting at ``-Ta/2``.
    :rtype: Ddop
    """
    positions = np.arange(params.N) * params.samples_per_symbol
    samples, start = pulse_train(pulse, positions, 1 / np.sqrt(params.N))
    ddop = Ddop(SampledWaveform.at_offset(samples, params, start), "plain", params.N)
    energy = ddop_energy(ddop)
    if abs(energy - 1) > 1e-2:
        logger.warning("DDOP energy %.6f deviates from 1 (Ta/T = %.3g)", energy, params.ta / params.T)
    return ddop


def build_ddop_cp(params: OddmParams, pulse: ProtoPulse, m: int) -> Ddop:
    """
    CP-appended DDOP for delay index ``m``: rows ``m >= M - Lcp`` gain one extra
    sub-pulse one symbol before the train.

    :param params: Frame parameters.
    :type params: OddmParams
    :param pulse: The sub-pulse.
    :type pulse: ProtoPulse
    :param m: Delay index.
    :type m: int
    :return: The CP-appended DDOP.
    :rtype: Ddop
    """
    if not 0 <= m < params.M:
        raise DomainError(f"delay index {m} outside [0, {params.M})")
    if m <= params.M - params.Lcp - 1:
        return build_ddop(params, pulse)
    positions = np.arange(-1, params.N) * params.samples_per_symbol
    samples, start = pulse_train(pulse, positions, 1 / np.sqrt(params.N))
    return Ddop(SampledWaveform.at_offset(samples, params, start), "cp_appended", params.N + 1)


def build_ddop_ce(params: OddmParams, pulse: ProtoPulse, normalized: bool = False) -> Ddop:
    """
    Generalized DDOP with ``D = ceil(Ta/T)`` extra sub-pulses on each side, sub-pulse
    centers at ``0, T, ..., (N - 1 + 2D) T``.

    :param params: Frame parameters.
    :type params: OddmParams
    :param pulse: The sub-pulse.
    :type pulse: ProtoPulse
    :param normalized: Apply the ``N^-1/2`` amplitude of the plain DDOP.
    :type normalized: bool
    :return: The generalized DDOP.
    :rtype: Ddop
    """
    count = params.N + 2 * params.d
    positions = np.arange(count) * params.samples_per_symbol
    scale = 1 / np.sqrt(params.N) if normalized else 1.0
    samples, start = pulse_train(pulse, positions, scale)
    return Ddop(SampledWaveform.at_offset(samples, params, start), "generalized", count)


def ddop_energy(ddop: Ddop) -> float:
    return ddop.wf.energy
