import unittest

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.schemas import OddmParams
from src.services.analog_modem import analog_basis, analog_modulate
from src.services.digital_modem import digital_basis, digital_modulate
from src.services.errors import DomainError
from src.services.params_grid import SampledWaveform, qam_map, random_bits
from src.services.pulse import srrc_pulse
from src.services.spectrum import (
    PsdCurve,
    detect_plateaus,
    dirichlet_train,
    freq_basis_analog,
    freq_basis_digital,
    frequency_grid,
    oobe_metrics,
    psd_analytic_analog,
    psd_analytic_digital,
    psd_analytic_otfs,
    psd_empirical,
    pulse_freq,
    sinc2_train,
    staircase_psd,
    waveform_difference,
    waveform_spectrum,
)

THRESHOLDS = (3.0, 7.0, 10.0, 20.0, 30.0, 40.0)


class TestSincTrains(unittest.TestCase):

    def test_partition_of_unity(self):
        x = np.linspace(-0.5, 0.5, 10_000)
        error = np.abs(sinc2_train(x, 1, kmax=1000) - 1)
        self.assertLess(error.max(), 3e-4)

    def test_closed_form_partition_is_exact(self):
        x = np.linspace(-3, 3, 1001)
        assert_allclose(sinc2_train(x), np.ones_like(x), atol=1e-12)

    def test_dirichlet_closed_form_matches_truncated_sum(self):
        x = np.linspace(-7.3, 7.3, 301)
        assert_allclose(dirichlet_train(x, 4), dirichlet_train(x, 4, kmax=400), atol=1e-3)

    def test_dirichlet_at_singular_points(self):
        assert_allclose(dirichlet_train(np.array([0.0, 4.0, 8.0]), 4), [1.0, -1.0, 1.0])
        assert_allclose(dirichlet_train(np.array([0.0, 5.0]), 5), [1.0, 1.0])

    def test_sinc2_train_with_period(self):
        x = np.linspace(-6, 6, 97)
        assert_allclose(sinc2_train(x, 4), sinc2_train(x, 4, kmax=2000), atol=1e-3)


class TestFrequencyGrid(unittest.TestCase):

    def setUp(self):
        self.params = OddmParams.preset("desk")

    def test_default_span_covers_sample_rate(self):
        freqs = frequency_grid(self.params, 4)
        self.assertEqual(freqs.size, 4 * self.params.N * self.params.samples_per_symbol)
        self.assertAlmostEqual(freqs[1] - freqs[0], self.params.doppler_res / 4)
        self.assertIn(0.0, freqs)

    def test_span(self):
        freqs = frequency_grid(self.params, 2, span_hz=10 * self.params.doppler_res)
        self.assertEqual(freqs.size, 41)
        self.assertAlmostEqual(freqs[-1], 10 * self.params.doppler_res)

    def test_rejects_zero_density(self):
        with self.assertRaises(DomainError):
            frequency_grid(self.params, 0)


def _relative_l2(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_pulse_freq_dc_and_symmetry(desk_pulse):
    freqs = np.linspace(-1e5, 1e5, 401)
    spectrum = pulse_freq(desk_pulse, freqs).values
    assert spectrum[200] == pytest.approx(np.sum(desk_pulse.taps) * desk_pulse.dt)
    assert_allclose(spectrum.imag, 0, atol=1e-9 * np.abs(spectrum).max())
    assert_allclose(spectrum, spectrum[::-1], rtol=1e-7)


def test_pulse_freq_direct_sum_agrees_with_chirp_z(desk_pulse):
    uniform = np.linspace(-2e5, 2e5, 257)
    scattered = uniform[np.random.default_rng(0).permutation(uniform.size)]
    direct = pulse_freq(desk_pulse, scattered).values
    order = np.argsort(scattered)
    assert_allclose(direct[order], pulse_freq(desk_pulse, uniform).values, rtol=1e-8, atol=1e-12)


@pytest.mark.parametrize("system", ["digital", "analog"])
def test_basis_spectrum_matches_closed_form(system, desk_params, desk_pulse):
    rng = np.random.default_rng(31)
    basis = digital_basis if system == "digital" else analog_basis
    closed = freq_basis_digital if system == "digital" else freq_basis_analog
    for _ in range(20):
        m, n = int(rng.integers(desk_params.M)), int(rng.integers(desk_params.N))
        wf = basis(m, n, desk_params, desk_pulse)
        freqs, values = waveform_spectrum(wf)
        assert _relative_l2(closed(m, n, desk_params, desk_pulse, freqs), values) < 1e-6


def test_waveform_spectrum_rejects_short_fft(desk_params):
    wf = SampledWaveform.at_offset(np.ones(16), desk_params, 0)
    with pytest.raises(DomainError):
        waveform_spectrum(wf, 8)


def test_psd_curve_validation():
    with pytest.raises(DomainError):
        PsdCurve(np.array([0.0, 0.0]), np.array([1.0, 1.0]), "empirical")
    with pytest.raises(DomainError):
        PsdCurve(np.array([0.0, 1.0]), np.array([1.0]), "empirical")
    with pytest.raises(DomainError):
        PsdCurve(np.array([0.0, 1.0]), np.array([0.0, 0.0]), "empirical").normalized_db()


def test_digital_psd_is_confined_to_pulse_spectrum(desk_params, desk_pulse):
    freqs = frequency_grid(desk_params, 4)
    curve = psd_analytic_digital(desk_params, desk_pulse, freqs)
    envelope = desk_params.N * desk_params.M * np.abs(pulse_freq(desk_pulse, freqs).values) ** 2
    visible = curve.normalized_db() > -60
    ratio_db = 10 * np.log10(curve.power[visible] / envelope[visible])
    assert np.abs(ratio_db).max() < 0.5


def test_analog_psd_has_plateaus_of_width_one_over_t(desk_params, desk_pulse):
    desk_params = desk_params.replace(Lcp=0)
    freqs = frequency_grid(desk_params, 4)
    curve = psd_analytic_analog(desk_params, desk_pulse, freqs)
    plateaus = [
        p
        for p in detect_plateaus(curve, desk_params.doppler_res)
        if p.f_start > freqs[0] + desk_params.doppler_res and p.f_end < freqs[-1] - desk_params.doppler_res
    ]
    assert len(plateaus) >= 2
    assert any(p.f_end < 0 for p in plateaus)
    assert any(p.f_start > 0 for p in plateaus)
    for plateau in plateaus:
        assert plateau.width_hz == pytest.approx(1 / desk_params.T, rel=0.1)


def test_digital_psd_has_no_plateaus(desk_params, desk_pulse):
    curve = psd_analytic_digital(desk_params, desk_pulse, frequency_grid(desk_params, 4))
    assert detect_plateaus(curve, desk_params.doppler_res) == []


def test_staircase_with_single_doppler_bin_is_digital_shape(desk_params, desk_pulse):
    desk_params = desk_params.replace(Lcp=0)
    freqs = frequency_grid(desk_params, 2, span_hz=40 / desk_params.T)
    digital = psd_analytic_digital(desk_params, desk_pulse, freqs)
    single = staircase_psd(desk_pulse, freqs, desk_params.M, 1, desk_params.T)
    assert_allclose(desk_params.N * single, digital.power, rtol=1e-12)


class TestAnalyticComparison(unittest.TestCase):

    def setUp(self):
        self.params = OddmParams.preset("desk", Q=40)
        self.pulse = srrc_pulse(self.params)
        self.freqs = frequency_grid(self.params, 4)
        self.band_edge = (1 + self.params.beta) * self.params.M / self.params.T

    def test_bandwidth_parity(self):
        analog = oobe_metrics(psd_analytic_analog(self.params, self.pulse, self.freqs), THRESHOLDS)
        digital = oobe_metrics(psd_analytic_digital(self.params, self.pulse, self.freqs), THRESHOLDS)
        tolerance = 1 / (2 * self.params.T) + self.params.doppler_res
        for upper_a, upper_d in zip(analog.upper_edge_hz, digital.upper_edge_hz):
            self.assertTrue(np.isfinite(upper_a) and np.isfinite(upper_d))
            self.assertLessEqual(abs(upper_a - upper_d), tolerance)

    def test_bandwidth_grows_with_threshold(self):
        digital = oobe_metrics(psd_analytic_digital(self.params, self.pulse, self.freqs), THRESHOLDS)
        self.assertTrue(np.all(np.diff(digital.bandwidth_hz) > 0))
        self.assertEqual(len(digital.rows()), len(THRESHOLDS))

    def test_otfs_sidelobes_exceed_oddm(self):
        otfs = oobe_metrics(psd_analytic_otfs(self.params, self.freqs), THRESHOLDS, self.band_edge)
        for curve in (
            psd_analytic_digital(self.params, self.pulse, self.freqs),
            psd_analytic_analog(self.params, self.pulse, self.freqs),
        ):
            oddm = oobe_metrics(curve, THRESHOLDS, self.band_edge)
            self.assertGreaterEqual(otfs.peak_sidelobe_db - oddm.peak_sidelobe_db, 10)
            self.assertGreater(otfs.oob_energy_fraction, oddm.oob_energy_fraction)


def test_oobe_on_rectangle():
    freqs = np.linspace(-10, 10, 201)
    power = np.where(np.abs(freqs) <= 2, 1.0, 1e-3)
    metrics = oobe_metrics(PsdCurve(freqs, power, "envelope"), (3.0, 40.0), band_edge_hz=5.0)
    assert metrics.upper_edge_hz[0] == pytest.approx(2.1 - 0.1 * 27 / 30, abs=1e-9)
    assert metrics.bandwidth_hz[0] == pytest.approx(2 * metrics.upper_edge_hz[0])
    assert metrics.upper_edge_hz[1] == np.inf
    assert metrics.lower_edge_hz[1] == -np.inf
    assert metrics.peak_sidelobe_db == pytest.approx(-30.0)


def _frames(system, params, pulse, seed):
    rng = np.random.default_rng(seed)
    while True:
        grid = qam_map(random_bits(rng, 2 * params.M * params.N), params)
        if system == "analog":
            yield analog_modulate(grid, params, pulse).wf
        else:
            yield digital_modulate(grid, params, pulse)


@pytest.mark.parametrize("lcp", [0, 4])
@pytest.mark.parametrize("system", ["analog", "digital"])
def test_empirical_psd_matches_expected_psd(system, lcp, desk_params, desk_pulse):
    params = desk_params.replace(Lcp=lcp)
    fft_len = 4 * params.N * params.samples_per_symbol
    empirical = psd_empirical(_frames(system, params, desk_pulse, 41), 1000, fft_len)
    analytic = psd_analytic_analog if system == "analog" else psd_analytic_digital
    expected = analytic(params, desk_pulse, empirical.freqs)
    error_db = 10 * np.log10(empirical.power / expected.power)
    in_band = np.abs(empirical.freqs) < 0.4 * params.M / params.T
    assert np.abs(error_db[in_band]).max() < 1.0
    level = expected.normalized_db()
    transition = (level < -3) & (level > -30)
    assert transition.sum() > 10
    assert np.abs(error_db[transition]).max() < 3.0


def test_cyclic_prefix_terms(desk_params, desk_pulse):
    freqs = frequency_grid(desk_params, 4, span_hz=0.3 * desk_params.M / desk_params.T)
    bare = desk_params.replace(Lcp=0)
    for analytic in (psd_analytic_analog, psd_analytic_digital):
        with_cp = analytic(desk_params, desk_pulse, freqs)
        without = analytic(bare, desk_pulse, freqs)
        assert with_cp.meta["lcp"] == desk_params.Lcp
        # the prefix adds Lcp symbols of energy on average
        ratio = with_cp.power.sum() / without.power.sum()
        assert ratio == pytest.approx(1 + desk_params.Lcp / (desk_params.M * desk_params.N), rel=2e-3)
    # digital prefix ripple follows 1 + 2 cos(2 pi N T f)
    points = np.array([0.0, 0.5 * desk_params.doppler_res])
    digital = psd_analytic_digital(desk_params, desk_pulse, points)
    envelope = np.abs(pulse_freq(desk_pulse, points).values) ** 2
    scale = desk_params.M * desk_params.N
    assert digital.power[0] == pytest.approx(envelope[0] * (scale + 3 * desk_params.Lcp), rel=1e-9)
    assert digital.power[1] == pytest.approx(envelope[1] * (scale - desk_params.Lcp), rel=1e-6)


def test_empirical_psd_errors(desk_params, desk_pulse):
    frames = _frames("digital", desk_params, desk_pulse, 0)
    with pytest.raises(DomainError):
        psd_empirical(frames, 0, 1024)
    with pytest.raises(DomainError):
        psd_empirical(frames, 1, 16)
    with pytest.raises(DomainError):
        psd_empirical(iter([]), 2, 1024)


def test_waveform_difference_is_small_and_reproducible(long_params, long_pulse):
    first = waveform_difference(long_params, long_pulse, 2, seed=5)
    assert first == waveform_difference(long_params, long_pulse, 2, seed=5)
    assert 0 <= first < 1
