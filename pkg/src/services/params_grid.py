"""
Delay-Doppler grid containers, sampled waveforms and the index arithmetic shared by
every transceiver.
"""
from dataclasses import dataclass

import numpy as np

from src.schemas import OddmParams
from src.services.errors import DomainError

QAM4 = np.array([1 + 1j, -1 + 1j, 1 - 1j, -1 - 1j]) / np.sqrt(2)
BITS_PER_SYMBOL = {4: 2}


def mod_index(n: int, N: int) -> int:
    """
    Modulo-N reduction into ``[0, N)``.

    :param n: Any integer index.
    :type n: int
    :param N: Period.
    :type N: int
    :return: The representative of ``n`` in ``[0, N)``.
    :rtype: int
    """
    if N < 1:
        raise DomainError(f"modulus must be positive, got {N}")
    return n % N


def psi_index(n: int, N: int) -> int:
    """
    Map an index in ``[0, N)`` onto the symmetric range ``[-N/2, N/2)``.

    :param n: Index in ``[0, N)``.
    :type n: int
    :param N: Even period.
    :type N: int
    :return: ``n`` when ``n < N/2`` else ``n - N``.
    :rtype: int
    """
    if N < 1 or N % 2:
        raise DomainError(f"symmetric indexing needs an even period, got {N}")
    if not 0 <= n < N:
        raise DomainError(f"index {n} outside [0, {N})")
    return n if n < N // 2 else n - N


def psi_indices(N: int) -> np.ndarray:
    """Vectorized ``psi_index`` over ``0..N-1``."""
    n = np.arange(N)
    return np.where(n < N - N // 2, n, n - N)


@dataclass(frozen=True)
class DdGrid:
    values: np.ndarray
    es: float = 1.0

    def __post_init__(self):
        values = np.array(self.values, dtype=complex)
        if values.ndim != 2:
            raise DomainError(f"grid must be two-dimensional, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DomainError("grid holds non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def zeros(cls, params: OddmParams) -> "DdGrid":
        return cls(np.zeros((params.M, params.N), dtype=complex))

    @classmethod
    def delta(cls, params: OddmParams, m: int, n: int, value: complex = 1.0) -> "DdGrid":
        values = np.zeros((params.M, params.N), dtype=complex)
        values[m, n] = value
        return cls(values)

    def check_shape(self, params: OddmParams):
        if self.shape != (params.M, params.N):
            raise DomainError(f"grid shape {self.shape} does not match (M, N) = ({params.M}, {params.N})")

    def nmse_db(self, reference: "DdGrid") -> float:
        """
        Normalized mean squared error against a reference grid, in dB.

        :param reference: The grid regarded as exact.
        :type reference: DdGrid
        :return: ``10 log10(||self - ref||^2 / ||ref||^2)``.
        :rtype: float
        """
        power = np.sum(np.abs(reference.values) ** 2)
        if power == 0:
            raise DomainError("NMSE against an all-zero reference grid is undefined")
        error = np.sum(np.abs(self.values - reference.values) ** 2)
        return float(10 * np.log10(error / power))


@dataclass(frozen=True)
class SampledWaveform:
    samples: np.ndarray
    fs: float
    t0: float = 0.0

    def __post_init__(self):
        samples = np.array(self.samples, dtype=complex).ravel()
        if self.fs <= 0:
            raise DomainError(f"sample rate must be positive, got {self.fs}")
        if not np.all(np.isfinite(samples)):
            raise DomainError("waveform holds non-finite samples")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @classmethod
    def at_offset(cls, samples: np.ndarray, params: OddmParams, offset: int) -> "SampledWaveform":
        """Waveform on the simulation grid whose first sample sits at ``offset / fs``."""
        return cls(samples, params.fs, offset * params.dt)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def offset(self) -> int:
        return int(round(self.t0 * self.fs))

    @property
    def end_offset(self) -> int:
        return self.offset + self.samples.size

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.fs

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2) / self.fs)

    def window(self, start: int, length: int) -> np.ndarray:
        """
        Samples on the absolute index range ``[start, start + length)``, zero outside the
        stored span.

        :param start: Absolute sample index (time ``start / fs``).
        :type start: int
        :param length: Number of samples.
        :type length: int
        :return: The extracted samples.
        :rtype: np.ndarray
        """
        out = np.zeros(length, dtype=complex)
        lo = max(start, self.offset)
        hi = min(start + length, self.end_offset)
        if hi > lo:
            out[lo - start : hi - start] = self.samples[lo - self.offset : hi - self.offset]
        return out

    def inner(self, other: "SampledWaveform") -> complex:
        """Riemann-sum inner product ``<self, other>`` over the common span."""
        if not np.isclose(self.fs, other.fs, rtol=1e-12):
            raise DomainError("inner product needs equal sample rates")
        lo = min(self.offset, other.offset)
        hi = max(self.end_offset, other.end_offset)
        return complex(np.vdot(other.window(lo, hi - lo), self.window(lo, hi - lo)) / self.fs)


def random_bits(rng: np.random.Generator, count: int) -> np.ndarray:
    return rng.integers(0, 2, size=count, dtype=np.uint8)


def qam_map(bits: np.ndarray, params: OddmParams, order: int = 4) -> DdGrid:
    """
    Gray-mapped 4-QAM symbols placed row by row (delay-major) on the M x N grid.

    :param bits: Bit vector of length ``2 M N``.
    :type bits: np.ndarray
    :param params: Frame parameters.
    :type params: OddmParams
    :param order: Constellation size, only 4 is supported.
    :type order: int
    :return: Grid with unit mean symbol energy.
    :rtype: DdGrid
    """
    if order not in BITS_PER_SYMBOL:
        raise DomainError(f"unsupported constellation order {order}")
    k = BITS_PER_SYMBOL[order]
    bits = np.asarray(bits).ravel()
    if bits.size != params.M * params.N * k:
        raise DomainError(f"expected {params.M * params.N * k} bits, got {bits.size}")
    if not np.all((bits == 0) | (bits == 1)):
        raise DomainError("bits must be 0 or 1")
    ints = bits.reshape(-1, k).astype(int).dot(1 << np.arange(k)[::-1])
    return DdGrid(QAM4[ints].reshape(params.M, params.N))


def qam_indices(values: np.ndarray) -> np.ndarray:
    d2 = np.abs(np.asarray(values).reshape(-1, 1) - QAM4[None, :]) ** 2
    return d2.argmin(axis=1)


def qam_decide(values: np.ndarray) -> np.ndarray:
    """Nearest constellation point for every entry, shape preserved."""
    values = np.asarray(values)
    return QAM4[qam_indices(values)].reshape(values.shape)


def qam_demap(grid: DdGrid | np.ndarray) -> np.ndarray:
    """
    Hard demapping by minimum distance, inverse of ``qam_map``.

    :param grid: Received (or detected) grid.
    :type grid: DdGrid | np.ndarray
    :return: Bit vector in transmission order.
    :rtype: np.ndarray
    """
    values = grid.values if isinstance(grid, DdGrid) else np.asarray(grid)
    idx = qam_indices(values)
    k = 2
    return ((idx[:, None] & (1 << np.arange(k)[::-1])) > 0).astype(np.uint8).ravel()


def check_coverage(rx: SampledWaveform, params: OddmParams, first_offset: int):
    """
    Reject received waveforms at the wrong rate or too short for the receiver windows.

    :param rx: Received waveform.
    :type rx: SampledWaveform
    :param params: Frame parameters.
    :type params: OddmParams
    :param first_offset: Earliest sample index the receiver needs.
    :type first_offset: int
    """
    if not np.isclose(rx.fs, params.fs, rtol=1e-12):
        raise DomainError(f"received rate {rx.fs} Hz differs from fs = {params.fs} Hz")
    last = (params.N - 1) * params.samples_per_symbol
    if rx.offset > first_offset or rx.end_offset <= last:
        raise DomainError(
            f"received waveform spans samples [{rx.offset}, {rx.end_offset}) but the receiver "
            f"needs [{first_offset}, {last}]"
        )
