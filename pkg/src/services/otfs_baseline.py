"""OTFS with a T-long rectangular pulse, used as the spectral and BER baseline."""
from dataclasses import dataclass

import numpy as np
from scipy import fft

from src.schemas import OddmParams
from src.services.errors import DomainError
from src.services.params_grid import DdGrid, SampledWaveform, check_coverage, psi_indices


@dataclass(frozen=True)
class TfGrid:
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=complex)
        if values.ndim != 2:
            raise DomainError(f"time-frequency grid must be two-dimensional, got {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def isfft(grid: DdGrid) -> TfGrid:
    """
    Unitary inverse symplectic FFT, ``X_tf[k, l] = (NM)^-1/2 sum X[m, n] e^{j 2 pi (n k / N - m l / M)}``.

    :param grid: Delay-Doppler symbols, shape (M, N).
    :type grid: DdGrid
    :return: Time-frequency symbols, shape (N, M).
    :rtype: TfGrid
    """
    delay_time = fft.ifft(grid.values, axis=1, norm="ortho")
    return TfGrid(fft.fft(delay_time, axis=0, norm="ortho").T)


def sfft(tf: TfGrid) -> DdGrid:
    """Unitary symplectic FFT, inverse of ``isfft``."""
    delay_time = fft.ifft(tf.values.T, axis=0, norm="ortho")
    return DdGrid(fft.fft(delay_time, axis=1, norm="ortho"))


def _bins(params: OddmParams) -> np.ndarray:
    # subcarriers mapped symmetrically around DC
    return psi_indices(params.M) % params.samples_per_symbol


def tf_modulate(tf: TfGrid, params: OddmParams) -> SampledWaveform:
    """
    Multicarrier modulation with the unit-energy pulse ``T^-1/2 rect(t/T)``: block ``k``
    carries ``sum_l X_tf[k, l] e^{j 2 pi psi_M(l) (t - kT) / T}`` on ``[kT, (k+1)T)``.

    :param tf: Time-frequency symbols, shape (N, M).
    :type tf: TfGrid
    :param params: Frame parameters.
    :type params: OddmParams
    :return: The frame, ``N T`` long, starting at ``t = 0``.
    :rtype: SampledWaveform
    """
    if tf.values.shape != (params.N, params.M):
        raise DomainError(f"time-frequency grid shape {tf.values.shape} != ({params.N}, {params.M})")
    L = params.samples_per_symbol
    spectrum = np.zeros((params.N, L), dtype=complex)
    spectrum[:, _bins(params)] = tf.values
    blocks = fft.ifft(spectrum, axis=1) * L / np.sqrt(params.T)
    return SampledWaveform.at_offset(blocks.ravel(), params, 0)


def otfs_modulate(grid: DdGrid, params: OddmParams) -> SampledWaveform:
    grid.check_shape(params)
    return tf_modulate(isfft(grid), params)


def otfs_demodulate(rx: SampledWaveform, params: OddmParams) -> DdGrid:
    """
    Rectangular receive window per block (block-wise DFT at the subcarrier bins)
    followed by the SFFT.

    :param rx: Received waveform at ``fs``.
    :type rx: SampledWaveform
    :param params: Frame parameters.
    :type params: OddmParams
    :return: Received delay-Doppler symbols.
    :rtype: DdGrid
    """
    L = params.samples_per_symbol
    check_coverage(rx, params, 0)
    if rx.end_offset < params.N * L:
        raise DomainError(
            f"received waveform ends at sample {rx.end_offset}, the last OTFS block needs {params.N * L}"
        )
    blocks = rx.window(0, params.N * L).reshape(params.N, L)
    tf = fft.fft(blocks, axis=1)[:, _bins(params)] * np.sqrt(params.T) / L
    return sfft(TfGrid(tf))
