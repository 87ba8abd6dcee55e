import unittest

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.schemas import EVA_MAX_DELAY_S, OddmParams
from src.services.channel import (
    EVA_DELAYS_NS,
    ChannelTap,
    DdChannel,
    add_awgn,
    apply_channel,
    check_cp,
    eva_cp_warning,
    eva_profile,
    fixed_channel,
    max_doppler,
    merge_on_grid_taps,
    noise_psd,
)
from src.services.errors import DomainError
from src.services.params_grid import SampledWaveform


class TestApplyChannel(unittest.TestCase):

    def setUp(self):
        self.params = OddmParams.preset("desk")
        rng = np.random.default_rng(51)
        self.tx = SampledWaveform.at_offset(rng.standard_normal(64) + 1j * rng.standard_normal(64), self.params, 0)

    def test_whole_sample_delay_is_a_shift(self):
        rx = apply_channel(self.tx, DdChannel.single(delay_s=3 * self.params.dt))
        self.assertEqual(rx.offset, 0)
        self.assertEqual(len(rx), 67)
        assert_allclose(rx.window(3, 64), self.tx.samples)
        assert_allclose(rx.window(0, 3), np.zeros(3))

    def test_doppler_rotates_the_signal(self):
        nu = 0.01 * self.params.fs
        rx = apply_channel(self.tx, DdChannel.single(doppler_hz=nu))
        expected = self.tx.samples * np.exp(2j * np.pi * nu * np.arange(64) / self.params.fs)
        assert_allclose(rx.samples, expected, atol=1e-12)

    def test_taps_add_up(self):
        ch = DdChannel.from_grid(self.params, [(0, 0, 0.5), (1, 0, 0.25j)])
        rx = apply_channel(self.tx, ch)
        expected = 0.5 * self.tx.window(0, 64 + self.params.Ns)
        expected += 0.25j * self.tx.window(-self.params.Ns, 64 + self.params.Ns)
        assert_allclose(rx.window(0, 64 + self.params.Ns), expected, atol=1e-12)

    def test_fractional_delay_on_a_slow_tone(self):
        k = np.arange(512)
        f0 = self.params.fs / 64
        tone = SampledWaveform.at_offset(np.exp(2j * np.pi * f0 * k / self.params.fs), self.params, 0)
        rx = apply_channel(tone, DdChannel.single(delay_s=0.5 * self.params.dt))
        interior = np.arange(64, 448)
        expected = np.exp(2j * np.pi * f0 * (interior - 0.5) / self.params.fs)
        assert_allclose(rx.window(64, interior.size), expected, atol=1e-3)


def test_noise_psd():
    assert noise_psd(0.0, 2) == pytest.approx(0.5)
    assert noise_psd(10.0, 2, es=2.0) == pytest.approx(0.1)


def test_awgn_variance(desk_params):
    wf = SampledWaveform.at_offset(np.zeros(200_000, dtype=complex), desk_params, 0)
    noisy = add_awgn(wf, 10.0, 2, rng=3)
    expected = noise_psd(10.0, 2) * desk_params.fs
    assert np.mean(np.abs(noisy.samples) ** 2) == pytest.approx(expected, rel=0.02)
    assert_allclose(add_awgn(wf, 10.0, 2, rng=3).samples, noisy.samples)


def test_awgn_noise_free_and_invalid(desk_params):
    wf = SampledWaveform.at_offset(np.ones(8, dtype=complex), desk_params, 0)
    assert add_awgn(wf, np.inf, 2, rng=0) is wf
    with pytest.raises(DomainError):
        add_awgn(wf, np.nan, 2, rng=0)
    with pytest.raises(DomainError):
        add_awgn(wf, -np.inf, 2, rng=0)


def test_max_doppler():
    assert max_doppler(5e9, 500) == pytest.approx(2316.4, rel=1e-4)


def test_merge_on_grid_taps():
    merged = merge_on_grid_taps([(0, 0, 1.0), (1, 0, 2.0), (0, 0, 3j)])
    assert merged == [(0, 0, 1 + 3j), (1, 0, 2.0)]


class TestEva(unittest.TestCase):

    def setUp(self):
        self.params = OddmParams.preset("full")

    def test_realization_is_on_grid_and_reproducible(self):
        first = eva_profile(4e9, 500, self.params, rng=7)
        second = eva_profile(4e9, 500, self.params, rng=7)
        self.assertEqual(first, second)
        self.assertTrue(first.on_grid(self.params))
        nu_max = max_doppler(4e9, 500)
        for l, k, _ in first.grid_indices(self.params):
            self.assertLessEqual(l * self.params.delay_res, EVA_MAX_DELAY_S + self.params.delay_res / 2)
            self.assertLessEqual(abs(k) * self.params.doppler_res, nu_max + self.params.doppler_res / 2)

    def test_raw_realization_keeps_every_path(self):
        ch = eva_profile(4e9, 500, self.params, rng=8, quantize_to_grid=False)
        self.assertEqual(len(ch.taps), EVA_DELAYS_NS.size)
        assert_allclose([tap.delay_s for tap in ch.taps], EVA_DELAYS_NS * 1e-9)
        self.assertAlmostEqual(ch.max_delay, EVA_MAX_DELAY_S)

    def test_rejects_bad_scenario(self):
        with self.assertRaises(DomainError):
            eva_profile(0.0, 500, self.params, rng=0)


def test_fixed_channel(desk_params):
    ch = fixed_channel(desk_params)
    cells = [(l, k) for l, k, _ in ch.grid_indices(desk_params)]
    assert cells == [(0, 0), (1, 1), (2, -1), (3, 2)]
    assert sum(abs(tap.gain) ** 2 for tap in ch.taps) == pytest.approx(1.0)
    assert len(ch.rows()) == 4


def test_off_grid_tap(desk_params):
    ch = DdChannel.single(delay_s=0.5 * desk_params.delay_res)
    assert not ch.on_grid(desk_params)
    with pytest.raises(DomainError):
        ch.grid_indices(desk_params)


def test_cyclic_prefix_checks(desk_params):
    ch = fixed_channel(desk_params)
    assert check_cp(ch, desk_params) is None
    assert "exceeds" in check_cp(ch, desk_params.replace(Lcp=2))
    assert eva_cp_warning(desk_params) is None
    assert "EVA" in eva_cp_warning(desk_params.replace(Lcp=1))


def test_tap_validation():
    with pytest.raises(DomainError):
        ChannelTap(1.0, -1e-9, 0.0)
    with pytest.raises(DomainError):
        DdChannel(())
