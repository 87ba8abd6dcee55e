"""
Orthogonality diagnostics: ambiguity functions on the (T/M, 1/(NT)) grid, Gram matrices
of basis sets and the offset-averaged metric Lambda.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Literal, Sequence

import numpy as np
from scipy import fft

from src.conf.config import settings
from src.schemas import OddmParams
from src.services.analog_modem import analog_basis, generalized_window
from src.services.digital_modem import digital_basis
from src.services.errors import DomainError, SizeGuardError
from src.services.params_grid import SampledWaveform
from src.services.pulse import ProtoPulse, build_ddop

logger = logging.getLogger(__name__)

SurfaceKind = Literal["auto_u", "cross_uce_u", "lambda_analog", "lambda_digital"]
BasisFn = Callable[[int, int], SampledWaveform]


def to_db(values: np.ndarray | complex | float) -> np.ndarray:
    """Magnitude in dB, ``20 log10 |x|``, floored at the smallest positive double."""
    return 20 * np.log10(np.maximum(np.abs(values), np.finfo(float).tiny))


@dataclass(frozen=True)
class AmbiguitySurface:
    values: np.ndarray
    kind: SurfaceKind
    M: int
    N: int

    def __post_init__(self):
        if self.values.shape != (2 * self.M - 1, 2 * self.N - 1):
            raise DomainError(f"surface shape {self.values.shape} does not match M = {self.M}, N = {self.N}")

    @property
    def m_bar(self) -> np.ndarray:
        return np.arange(-(self.M - 1), self.M)

    @property
    def n_bar(self) -> np.ndarray:
        return np.arange(-(self.N - 1), self.N)

    def at(self, m_bar: int, n_bar: int) -> complex:
        return self.values[m_bar + self.M - 1, n_bar + self.N - 1]

    @property
    def center(self) -> complex:
        return self.at(0, 0)

    def magnitude_db(self) -> np.ndarray:
        return to_db(self.values)


def off_center_max(surface: AmbiguitySurface, doppler_only: bool = False) -> float:
    """
    Largest magnitude away from the origin.

    :param surface: The surface.
    :type surface: AmbiguitySurface
    :param doppler_only: Restrict to the cells with ``n_bar != 0``.
    :type doppler_only: bool
    :return: The maximum magnitude (linear).
    :rtype: float
    """
    mask = np.ones(surface.values.shape, dtype=bool)
    if doppler_only:
        mask[:, surface.N - 1] = False
    else:
        mask[surface.M - 1, surface.N - 1] = False
    return float(np.abs(surface.values[mask]).max())


def ambiguity(
    u1: SampledWaveform, u2: SampledWaveform, params: OddmParams, kind: SurfaceKind = "auto_u"
) -> AmbiguitySurface:
    """
    Cross-ambiguity ``A(m T/M, n / (N T)) = int u1(t) u2*(t - m T/M) e^{-j 2 pi n (t - m T/M) / (N T)} dt``
    on the full offset grid.

    For every delay offset the product is folded modulo one Doppler period
    (``N M Ns`` samples) and a single FFT yields all Doppler offsets.

    :param u1: First waveform, at ``fs``.
    :type u1: SampledWaveform
    :param u2: Second waveform, at ``fs``.
    :type u2: SampledWaveform
    :param params: Frame parameters.
    :type params: OddmParams
    :param kind: Label stored with the surface.
    :type kind: SurfaceKind
    :return: The ``(2M - 1) x (2N - 1)`` surface.
    :rtype: AmbiguitySurface
    """
    for wf in (u1, u2):
        if not np.isclose(wf.fs, params.fs, rtol=1e-12):
            raise DomainError(f"waveform rate {wf.fs} Hz differs from fs = {params.fs} Hz")
    M, N, Ns = params.M, params.N, params.Ns
    period = N * params.samples_per_symbol
    n_bar = np.arange(-(N - 1), N)
    values = np.zeros((2 * M - 1, 2 * N - 1), dtype=complex)
    for row, m_bar in enumerate(range(-(M - 1), M)):
        shift = m_bar * Ns
        lo = max(u1.offset, u2.offset + shift)
        hi = min(u1.end_offset, u2.end_offset + shift)
        if hi <= lo:
            continue
        product = u1.window(lo, hi - lo) * np.conj(u2.window(lo - shift, hi - lo))
        phase_bin = np.arange(lo, hi) % period
        folded = np.bincount(phase_bin, weights=product.real, minlength=period)
        folded = folded + 1j * np.bincount(phase_bin, weights=product.imag, minlength=period)
        spectrum = fft.fft(folded)[n_bar % period]
        values[row] = spectrum * params.dt * np.exp(2j * np.pi * n_bar * m_bar / (M * N))
    return AmbiguitySurface(values, kind, M, N)


def auto_ambiguity(params: OddmParams, pulse: ProtoPulse) -> AmbiguitySurface:
    u = build_ddop(params, pulse).wf
    return ambiguity(u, u, params, "auto_u")


def cross_ambiguity_ce(params: OddmParams, pulse: ProtoPulse) -> AmbiguitySurface:
    """
    Cross-ambiguity of the normalized generalized DDOP and the plain DDOP, with the
    generalized pulse shifted so that its first data sub-pulse coincides with that of u.

    :param params: Frame parameters.
    :type params: OddmParams
    :param pulse: The sub-pulse.
    :type pulse: ProtoPulse
    :return: The cross-ambiguity surface.
    :rtype: AmbiguitySurface
    """
    u_ce = generalized_window(params, pulse).wf
    u = build_ddop(params, pulse).wf
    return ambiguity(u_ce, u, params, "cross_uce_u")


def basis_function(system: str, params: OddmParams, pulse: ProtoPulse) -> BasisFn:
    if system == "analog":
        return lambda m, n: analog_basis(m, n, params, pulse)
    if system == "digital":
        return lambda m, n: digital_basis(m, n, params, pulse)
    raise DomainError(f"no time-domain basis for system '{system}'")


def gram(
    basis_fn: BasisFn,
    params: OddmParams,
    subset: Sequence[tuple[int, int]] | None = None,
    allow_full: bool = False,
) -> np.ndarray:
    """
    Gram matrix ``G[i, j] = <phi_i, phi_j>`` of a set of basis functions.

    :param basis_fn: Maps ``(m, n)`` to a sampled basis function.
    :type basis_fn: BasisFn
    :param params: Frame parameters.
    :type params: OddmParams
    :param subset: Index pairs; all ``M N`` pairs in row-major order when omitted.
    :type subset: Sequence[tuple[int, int]] | None
    :param allow_full: Lift the size guard.
    :type allow_full: bool
    :return: Hermitian matrix of inner products.
    :rtype: np.ndarray
    """
    indices = list(subset) if subset is not None else [(m, n) for m in range(params.M) for n in range(params.N)]
    if not indices:
        raise DomainError("empty basis subset")
    if len(indices) > settings.gram_max_dim and not allow_full:
        raise SizeGuardError(
            f"Gram matrix of dimension {len(indices)} exceeds gram_max_dim = {settings.gram_max_dim}"
        )
    waves = [basis_fn(m, n) for m, n in indices]
    lo = min(w.offset for w in waves)
    hi = max(w.end_offset for w in waves)
    stacked = np.stack([w.window(lo, hi - lo) for w in waves])
    return stacked @ stacked.conj().T * params.dt


def lambda_from_gram(
    G: np.ndarray,
    params: OddmParams,
    indices: Sequence[tuple[int, int]] | None = None,
    system: Literal["analog", "digital"] = "digital",
) -> AmbiguitySurface:
    """
    Average ``|G|`` over every offset class ``(m' - m, n' - n)``.

    :param G: Gram matrix.
    :type G: np.ndarray
    :param params: Frame parameters.
    :type params: OddmParams
    :param indices: Index pairs the rows of ``G`` belong to; row-major full grid when omitted.
    :type indices: Sequence[tuple[int, int]] | None
    :param system: Basis the Gram matrix was built from, used as the surface label.
    :type system: str
    :return: The Lambda surface.
    :rtype: AmbiguitySurface
    """
    M, N = params.M, params.N
    idx = np.array(indices if indices is not None else [(m, n) for m in range(M) for n in range(N)])
    if G.shape != (len(idx), len(idx)):
        raise DomainError(f"Gram matrix shape {G.shape} does not match {len(idx)} indices")
    dm = (idx[None, :, 0] - idx[:, None, 0] + M - 1).ravel()
    dn = (idx[None, :, 1] - idx[:, None, 1] + N - 1).ravel()
    cell = dm * (2 * N - 1) + dn
    sums = np.bincount(cell, weights=np.abs(G).ravel(), minlength=(2 * M - 1) * (2 * N - 1))
    counts = np.bincount(cell, minlength=(2 * M - 1) * (2 * N - 1))
    if np.any(counts == 0):
        raise DomainError(f"{int(np.sum(counts == 0))} offset classes have no index pair")
    return AmbiguitySurface((sums / counts).reshape(2 * M - 1, 2 * N - 1), f"lambda_{system}", M, N)


def _anchor_set(N: int, anchors: int | None, seed: int) -> np.ndarray:
    if anchors is None or anchors >= N:
        return np.arange(N)
    rng = np.random.default_rng(seed)
    inner = rng.choice(np.arange(1, N - 1), size=max(anchors - 2, 0), replace=False)
    return np.sort(np.concatenate([[0, N - 1], inner]))


def lambda_metric(
    params: OddmParams,
    pulse: ProtoPulse,
    system: Literal["analog", "digital"] = "digital",
    anchors: int | None = None,
    seed: int = 0,
) -> AmbiguitySurface:
    """
    ``Lambda(m_bar, n_bar)``: mean of ``|<phi_{m,n}, phi_{m + m_bar, n + n_bar}>|`` over all
    valid index pairs, without forming the ``MN x MN`` Gram matrix.

    Both basis families satisfy ``phi_{m,n}(t) = phi_{0,n}(t - m T/M)`` exactly on the
    sampling grid, so each inner product only depends on ``(n, n + n_bar, m_bar)`` and one
    FFT cross-correlation per Doppler pair covers every delay offset.

    :param params: Frame parameters.
    :type params: OddmParams
    :param pulse: The sub-pulse.
    :type pulse: ProtoPulse
    :param system: Basis family.
    :type system: Literal["analog", "digital"]
    :param anchors: Number of Doppler anchors ``n`` to average over (the edges are always kept);
        all when omitted.
    :type anchors: int | None
    :param seed: Seed for the anchor choice.
    :type seed: int
    :return: The Lambda surface.
    :rtype: AmbiguitySurface
    """
    M, N, Ns = params.M, params.N, params.Ns
    basis = basis_function(system, params, pulse)
    columns = [basis(0, n) for n in range(N)]
    offset = columns[0].offset
    length = max(w.end_offset for w in columns) - offset
    nfft = fft.next_fast_len(2 * length - 1)
    spectra = np.stack([fft.fft(w.window(offset, length), nfft) for w in columns])

    lags = np.arange(-(M - 1), M) * Ns
    sums = np.zeros((2 * M - 1, 2 * N - 1))
    counts = np.zeros(2 * N - 1)
    for n in _anchor_set(N, anchors, seed):
        # <phi_{0,n}, phi_{0,n'}(t - lag)> for every n' at once
        corr = fft.ifft(spectra[n][None, :] * np.conj(spectra), axis=1)[:, lags % nfft] * params.dt
        for n_other in range(N):
            col = n_other - n + N - 1
            sums[:, col] += np.abs(corr[n_other])
            counts[col] += 1
    if np.any(counts == 0):
        raise DomainError("a Doppler offset class has no anchor")
    kind = "lambda_digital" if system == "digital" else "lambda_analog"
    logger.debug("Lambda surface for %s basis over %d anchors", system, int(counts[N - 1]))
    return AmbiguitySurface(sums / counts[None, :], kind, M, N)
