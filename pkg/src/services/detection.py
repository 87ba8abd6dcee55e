"""
Delay-Doppler domain detection for on-grid channels.

With a cyclic prefix covering the delay spread, every on-grid path acts on the grid as
a two-dimensional circular shift with an index-dependent phase:

    Y[m, n] = sum_p g_p(m, n) X[[m - l_p]_M, [n - k_p]_N]
    g_p(m, n) = h_p exp(j 2 pi k_p (m - l_p) / (M N)) * (exp(-j 2 pi [n - k_p]_N / N) if m < l_p else 1)

The closed form is the model used for rectangular OTFS. For analog and digital ODDM the
per-tap phase tables are measured once per (params, pulse, tap) by passing random 4-QAM
frames through the waveform pipeline, and the closed form only serves as a cross-check.
"""
import logging
import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import linalg, sparse, stats

from src.conf.config import settings
from src.schemas import OddmParams
from src.services.analog_modem import analog_demodulate, analog_modulate
from src.services.channel import DdChannel, apply_channel, merge_on_grid_taps
from src.services.digital_modem import digital_demodulate, digital_modulate
from src.services.errors import DomainError, SizeGuardError, SolverError
from src.services.params_grid import QAM4, DdGrid, qam_decide, qam_map, random_bits
from src.services.pulse import ProtoPulse, srrc_pulse

logger = logging.getLogger(__name__)

VAR_FLOOR = 1e-10

# (system, l, k, params, pulse bytes, frames) -> read-only phase table
_PHASE_TABLES: dict[tuple, np.ndarray] = {}


def shift_phase(l: int, k: int, M: int, N: int) -> np.ndarray:
    """Closed-form unit-gain phase table of a single on-grid tap ``(l, k)``."""
    m = np.arange(M)[:, None]
    n = np.arange(N)[None, :]
    wrap = np.where(m < l, np.exp(-2j * np.pi * ((n - k) % N) / N), 1.0)
    return np.exp(2j * np.pi * k * (m - l) / (M * N)) * wrap


@dataclass(frozen=True, eq=False)
class EffectiveChannel:
    M: int
    N: int
    taps: tuple[tuple[int, int, complex], ...]
    phases: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "taps", tuple(self.taps))
        if not self.taps:
            raise DomainError("effective channel needs at least one tap")
        if self.phases is not None:
            phases = tuple(np.asarray(table, dtype=complex) for table in self.phases)
            if len(phases) != len(self.taps) or any(table.shape != (self.M, self.N) for table in phases):
                raise DomainError(f"expected {len(self.taps)} phase tables of shape ({self.M}, {self.N})")
            object.__setattr__(self, "phases", phases)

    @property
    def size(self) -> int:
        return self.M * self.N

    @property
    def calibrated(self) -> bool:
        return self.phases is not None

    def gains(self, p: int) -> np.ndarray:
        """``g_p(m, n)`` over the whole grid for tap ``p``."""
        l, k, h = self.taps[p]
        if self.phases is not None:
            return h * self.phases[p]
        return h * shift_phase(l, k, self.M, self.N)

    def apply(self, grid: DdGrid) -> DdGrid:
        if grid.shape != (self.M, self.N):
            raise DomainError(f"grid shape {grid.shape} does not match ({self.M}, {self.N})")
        out = np.zeros((self.M, self.N), dtype=complex)
        for p, (l, k, _) in enumerate(self.taps):
            out += self.gains(p) * np.roll(grid.values, shift=(l, k), axis=(0, 1))
        return DdGrid(out)

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """
        Factor-graph edges on the row-major vectorized grid.

        :return: ``(columns, coefficients)``, both ``MN x P``: observation ``d`` sees
            variable ``columns[d, p]`` through ``coefficients[d, p]``.
        :rtype: tuple[np.ndarray, np.ndarray]
        """
        m = np.arange(self.M)[:, None]
        n = np.arange(self.N)[None, :]
        columns = np.stack([(((m - l) % self.M) * self.N + (n - k) % self.N).ravel() for l, k, _ in self.taps], axis=1)
        coefficients = np.stack([self.gains(p).ravel() for p in range(len(self.taps))], axis=1)
        return columns, coefficients

    def to_sparse(self) -> sparse.csr_matrix:
        columns, coefficients = self.edges()
        rows = np.repeat(np.arange(self.size), len(self.taps))
        shape = (self.size, self.size)
        return sparse.coo_matrix((coefficients.ravel(), (rows, columns.ravel())), shape=shape).tocsr()

    def to_dense(self) -> np.ndarray:
        if self.size > settings.lmmse_max_dim:
            raise SizeGuardError(f"dense channel of dimension {self.size} exceeds lmmse_max_dim = {settings.lmmse_max_dim}")
        return self.to_sparse().toarray()


@dataclass(frozen=True)
class Detection:
    soft: np.ndarray
    hard: DdGrid
    iterations: int = 1
    converged: bool = True


@dataclass(frozen=True)
class CalibrationReport:
    channel: EffectiveChannel
    residual_db: float
    anchor: tuple[int, int]
    measured: tuple[complex, ...]
    predicted: tuple[complex, ...]


@dataclass(frozen=True)
class BerResult:
    errors: int
    total: int
    rate: float
    ci_low: float
    ci_high: float


def _pipeline(system: str, grid: DdGrid, ch: DdChannel, params: OddmParams, pulse: ProtoPulse) -> DdGrid:
    if system == "analog":
        return analog_demodulate(apply_channel(analog_modulate(grid, params, pulse).wf, ch), params, pulse)
    if system == "digital":
        return digital_demodulate(apply_channel(digital_modulate(grid, params, pulse), ch), params, pulse)
    raise DomainError(f"no waveform pipeline for system '{system}'")


def measure_phase_table(
    system: Literal["analog", "digital"], l: int, k: int, params: OddmParams, pulse: ProtoPulse
) -> np.ndarray:
    """
    Unit-gain phase table of the on-grid tap ``(l, k)`` as seen through the waveform pipeline.

    Every 4-QAM symbol has unit modulus, so ``Y * conj(X[m - l, n - k])`` averaged over a few
    random frames estimates the gain of each output cell. Tables are cached per
    ``(system, l, k, params, pulse)``.

    :param system: ``analog`` or ``digital``.
    :type system: Literal["analog", "digital"]
    :param l: Delay index of the tap, within the cyclic prefix.
    :type l: int
    :param k: Doppler index of the tap.
    :type k: int
    :param params: Frame parameters.
    :type params: OddmParams
    :param pulse: The sub-pulse.
    :type pulse: ProtoPulse
    :return: Read-only ``(M, N)`` table of unit-modulus gains.
    :rtype: np.ndarray
    """
    if not 0 <= l <= params.Lcp:
        raise DomainError(f"tap delay of {l} bins is outside the cyclic prefix of {params.Lcp} bins")
    frames = settings.calibration_frames
    key = (system, l, k, params, pulse.taps.tobytes(), frames)
    table = _PHASE_TABLES.get(key)
    if table is not None:
        return table

    ch = DdChannel.from_grid(params, [(l, k, 1.0)])
    acc = np.zeros((params.M, params.N), dtype=complex)
    for frame in range(frames):
        rng = np.random.default_rng(np.random.SeedSequence(0, spawn_key=(l, k % params.N, frame)))
        grid = qam_map(random_bits(rng, 2 * params.M * params.N), params)
        Y = _pipeline(system, grid, ch, params, pulse)
        acc += Y.values * np.conj(np.roll(grid.values, shift=(l, k), axis=(0, 1)))
    magnitude = np.abs(acc)
    if np.any(magnitude == 0):
        raise DomainError(f"tap ({l}, {k}) leaves grid cells without a response")
    table = acc / magnitude
    table.setflags(write=False)
    _PHASE_TABLES[key] = table
    logger.debug("%s phase table for tap (%d, %d) from %d frames", system, l, k, frames)
    return table


def effective_channel(
    ch: DdChannel,
    params: OddmParams,
    require_cp: bool = True,
    system: Literal["analog", "digital", "otfs"] | None = None,
    pulse: ProtoPulse | None = None,
) -> EffectiveChannel:
    """
    Delay-Doppler operator of an on-grid channel.

    :param ch: The physical channel; every tap must sit on the grid.
    :type ch: DdChannel
    :param params: Frame parameters.
    :type params: OddmParams
    :param require_cp: Refuse taps delayed beyond the cyclic prefix.
    :type require_cp: bool
    :param system: ``analog`` or ``digital`` measure the phase tables through the waveform
        pipeline; ``otfs`` or None use the closed form.
    :type system: str | None
    :param pulse: Sub-pulse of the pipeline, the SRRC pulse of ``params`` when omitted.
    :type pulse: ProtoPulse | None
    :return: The operator.
    :rtype: EffectiveChannel
    """
    taps = merge_on_grid_taps(ch.grid_indices(params))
    longest = max(l for l, _, _ in taps)
    if require_cp and longest > params.Lcp:
        raise DomainError(f"tap delay of {longest} bins exceeds the cyclic prefix of {params.Lcp} bins")
    if system not in ("analog", "digital"):
        return EffectiveChannel(params.M, params.N, tuple(taps))
    pulse = srrc_pulse(params) if pulse is None else pulse
    phases = tuple(measure_phase_table(system, l, k, params, pulse) for l, k, _ in taps)
    return EffectiveChannel(params.M, params.N, tuple(taps), phases)


def calibrate_effective_channel(
    ch: DdChannel,
    params: OddmParams,
    pulse: ProtoPulse,
    system: Literal["analog", "digital"] = "digital",
    seed: int = 0,
) -> CalibrationReport:
    """
    Build the calibrated effective channel and check it against the waveform pipeline.

    The operator carries phase tables measured by ``measure_phase_table``. A delta grid at
    the centre of the frame then yields per-tap gains to set against the operator, and a
    random 4-QAM grid yields the overall residual.

    :param ch: On-grid channel.
    :type ch: DdChannel
    :param params: Frame parameters.
    :type params: OddmParams
    :param pulse: The sub-pulse.
    :type pulse: ProtoPulse
    :param system: ``analog`` or ``digital``.
    :type system: Literal["analog", "digital"]
    :param seed: Seed of the random residual frame.
    :type seed: int
    :return: Operator, residual in dB and delta-response gains against the operator gains.
    :rtype: CalibrationReport
    """
    H = effective_channel(ch, params, system=system, pulse=pulse)
    anchor = (params.M // 2, params.N // 2)
    response = _pipeline(system, DdGrid.delta(params, *anchor), ch, params, pulse)
    measured, predicted = [], []
    for p, (l, k, _) in enumerate(H.taps):
        m, n = (anchor[0] + l) % params.M, (anchor[1] + k) % params.N
        measured.append(complex(response.values[m, n]))
        predicted.append(complex(H.gains(p)[m, n]))

    rng = np.random.default_rng(seed)
    grid = qam_map(random_bits(rng, 2 * params.M * params.N), params)
    residual = _pipeline(system, grid, ch, params, pulse).nmse_db(H.apply(grid))
    logger.debug("%s calibration: residual %.1f dB over %d taps", system, residual, len(H.taps))
    return CalibrationReport(H, residual, anchor, tuple(measured), tuple(predicted))


def lmmse_detect(Y: DdGrid, H: EffectiveChannel, noise_var: float) -> Detection:
    """
    LMMSE estimate ``(H^H H + noise_var I)^-1 H^H y`` on the vectorized grid.

    :param Y: Received grid.
    :type Y: DdGrid
    :param H: Effective channel.
    :type H: EffectiveChannel
    :param noise_var: Noise variance per grid entry.
    :type noise_var: float
    :return: Soft estimates and nearest-constellation decisions.
    :rtype: Detection
    """
    Hd = H.to_dense()
    y = Y.values.ravel()
    gram_matrix = Hd.conj().T @ Hd + noise_var * np.eye(H.size)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", linalg.LinAlgWarning)
            x = linalg.solve(gram_matrix, Hd.conj().T @ y, assume_a="her")
    except (linalg.LinAlgError, linalg.LinAlgWarning) as exc:
        raise SolverError(f"LMMSE system could not be solved: {exc}") from exc
    soft = x.reshape(H.M, H.N)
    return Detection(soft, DdGrid(qam_decide(soft)))


def _softmax(log_prob: np.ndarray) -> np.ndarray:
    log_prob = log_prob - log_prob.max(axis=-1, keepdims=True)
    prob = np.exp(log_prob)
    return prob / prob.sum(axis=-1, keepdims=True)


def mp_detect(
    Y: DdGrid,
    H: EffectiveChannel,
    noise_var: float,
    max_iters: int | None = None,
    damping: float | None = None,
    tolerance: float | None = None,
) -> Detection:
    """
    Message-passing detection with Gaussian-approximated interference.

    Each observation treats all but one of its connected symbols as Gaussian noise;
    symbol beliefs are damped mixtures of the new and previous messages.

    :param Y: Received grid.
    :type Y: DdGrid
    :param H: Sparse effective channel.
    :type H: EffectiveChannel
    :param noise_var: Noise variance per grid entry.
    :type noise_var: float
    :param max_iters: Iteration cap, ``settings.mp_max_iters`` by default.
    :type max_iters: int | None
    :param damping: Weight of the new messages, ``settings.mp_damping`` by default.
    :type damping: float | None
    :param tolerance: Stop once no posterior moves by more than this.
    :type tolerance: float | None
    :return: Posterior means and maximum a-posteriori decisions.
    :rtype: Detection
    """
    max_iters = max_iters or settings.mp_max_iters
    damping = settings.mp_damping if damping is None else damping
    tolerance = settings.mp_tolerance if tolerance is None else tolerance
    P = len(H.taps)
    if P > settings.mp_max_taps or P >= H.size:
        raise DomainError(f"{P} taps is not sparse enough for message passing, use lmmse_detect")

    columns, coef = H.edges()
    y = Y.values.ravel()[:, None]
    # edge (d, p) seen from variable c = columns[d, p]: d = inverse[c, p]
    inverse = np.empty_like(columns)
    for p in range(P):
        inverse[columns[:, p], p] = np.arange(H.size)

    messages = np.full((H.size, P, QAM4.size), 1 / QAM4.size)
    posterior = np.full((H.size, QAM4.size), 1 / QAM4.size)
    converged = False
    for iteration in range(1, max_iters + 1):
        mean_edge = coef * (messages @ QAM4)
        var_edge = np.abs(coef) ** 2 * (messages @ np.abs(QAM4) ** 2) - np.abs(mean_edge) ** 2
        mu = mean_edge.sum(axis=1, keepdims=True) - mean_edge
        var = var_edge.sum(axis=1, keepdims=True) - var_edge + noise_var
        var = np.maximum(var, VAR_FLOOR)

        residual = y[:, :, None] - mu[:, :, None] - coef[:, :, None] * QAM4[None, None, :]
        log_lik = -np.abs(residual) ** 2 / var[:, :, None]
        per_variable = np.stack([log_lik[inverse[:, p], p] for p in range(P)], axis=1)
        total = per_variable.sum(axis=1)

        new_posterior = _softmax(total)
        extrinsic = _softmax(total[columns] - log_lik)
        messages = damping * extrinsic + (1 - damping) * messages

        change = np.abs(new_posterior - posterior).max()
        posterior = new_posterior
        if change < tolerance:
            converged = True
            break

    if not converged:
        logger.warning("message passing stopped after %d iterations without converging", max_iters)
    logger.debug("message passing finished after %d iterations", iteration)
    soft = (posterior @ QAM4).reshape(H.M, H.N)
    hard = QAM4[posterior.argmax(axis=1)].reshape(H.M, H.N)
    return Detection(soft, DdGrid(hard), iteration, converged)


def otfs_dd_link(grid: DdGrid, H: EffectiveChannel, noise_var: float, rng: np.random.Generator) -> DdGrid:
    """``Y = H X + W`` with ``W`` circular Gaussian of variance ``noise_var`` per entry."""
    Y = H.apply(grid).values
    noise = rng.standard_normal(Y.shape) + 1j * rng.standard_normal(Y.shape)
    return DdGrid(Y + np.sqrt(noise_var / 2) * noise)


def wilson_interval(errors: int, total: int, confidence: float = 0.95) -> tuple[float, float]:
    """
    Wilson score interval of a binomial proportion.

    :param errors: Number of errors.
    :type errors: int
    :param total: Number of trials.
    :type total: int
    :param confidence: Two-sided confidence level.
    :type confidence: float
    :return: Lower and upper bound.
    :rtype: tuple[float, float]
    """
    if total < 1:
        raise DomainError("Wilson interval needs at least one trial")
    z = stats.norm.ppf(0.5 + confidence / 2)
    rate = errors / total
    denominator = 1 + z**2 / total
    center = (rate + z**2 / (2 * total)) / denominator
    half = z * np.sqrt(rate * (1 - rate) / total + z**2 / (4 * total**2)) / denominator
    return float(max(0.0, center - half)), float(min(1.0, center + half))


def ber_from_counts(errors: int, total: int) -> BerResult:
    low, high = wilson_interval(errors, total)
    return BerResult(int(errors), int(total), errors / total, low, high)


def ber_count(tx_bits: np.ndarray, rx_bits: np.ndarray) -> BerResult:
    """
    Bit errors with a 95 % Wilson interval.

    :param tx_bits: Transmitted bits.
    :type tx_bits: np.ndarray
    :param rx_bits: Detected bits.
    :type rx_bits: np.ndarray
    :return: Counts, rate and interval.
    :rtype: BerResult
    """
    tx_bits = np.asarray(tx_bits).ravel()
    rx_bits = np.asarray(rx_bits).ravel()
    if tx_bits.size != rx_bits.size:
        raise DomainError(f"bit streams differ in length: {tx_bits.size} vs {rx_bits.size}")
    return ber_from_counts(int(np.count_nonzero(tx_bits != rx_bits)), tx_bits.size)
