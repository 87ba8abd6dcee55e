import unittest

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.repository.results import ResultSet, read_grid
from src.schemas import OddmParams, q_for_ta
from src.services.errors import DomainError
from src.services.params_grid import (
    QAM4,
    DdGrid,
    SampledWaveform,
    mod_index,
    psi_index,
    psi_indices,
    qam_demap,
    qam_map,
    random_bits,
)


class TestIndexing(unittest.TestCase):

    def test_mod_index(self):
        self.assertEqual(mod_index(-1, 16), 15)
        self.assertEqual(mod_index(17, 16), 1)
        with self.assertRaises(DomainError):
            mod_index(3, 0)

    def test_psi_index(self):
        self.assertEqual(psi_index(0, 16), 0)
        self.assertEqual(psi_index(7, 16), 7)
        self.assertEqual(psi_index(8, 16), -8)
        self.assertEqual(psi_index(15, 16), -1)

    def test_psi_index_rejects_odd_period(self):
        with self.assertRaises(DomainError):
            psi_index(1, 15)

    def test_psi_index_rejects_out_of_range(self):
        with self.assertRaises(DomainError):
            psi_index(16, 16)

    def test_psi_indices_matches_scalar(self):
        self.assertEqual(list(psi_indices(8)), [psi_index(n, 8) for n in range(8)])


class TestParams(unittest.TestCase):

    def setUp(self):
        self.params = OddmParams.preset("desk", Lcp=4)

    def test_derived_quantities(self):
        self.assertAlmostEqual(self.params.delay_res, 1 / (15000 * 32))
        self.assertAlmostEqual(self.params.doppler_res, 15000 / 16)
        self.assertAlmostEqual(self.params.fs, 8 * 32 * 15000)
        self.assertEqual(self.params.samples_per_symbol, 256)
        self.assertEqual(self.params.pulse_len, 81)
        self.assertEqual(self.params.d, 1)

    def test_full_preset(self):
        params = OddmParams.preset("full")
        self.assertEqual((params.M, params.N, params.Q), (128, 32, 20))

    def test_odd_n_rejected(self):
        with self.assertRaises(ValueError):
            OddmParams.preset("desk", N=15)

    def test_cp_must_be_shorter_than_m(self):
        with self.assertRaises(ValueError):
            OddmParams.preset("desk", Lcp=32)

    def test_q_for_ta(self):
        self.assertEqual(q_for_ta(0.3, 32), 5)
        self.assertEqual(q_for_ta(1.0, 32), 16)
        self.assertEqual(q_for_ta(2.5, 32), 40)
        self.assertEqual(q_for_ta(10.0, 32), 160)
        self.assertEqual(q_for_ta(0.3, 128), 20)

    def test_with_ta(self):
        self.assertEqual(self.params.with_ta(2.5).Q, 40)
        self.assertEqual(self.params.with_ta(2.5).d, 3)


def test_qam_map_demap_recovers_bits(desk_params):
    rng = np.random.default_rng(3)
    bits = random_bits(rng, 2 * desk_params.M * desk_params.N)
    grid = qam_map(bits, desk_params)
    assert grid.shape == (desk_params.M, desk_params.N)
    assert np.mean(np.abs(grid.values) ** 2) == pytest.approx(1.0)
    assert_array_equal(qam_demap(grid), bits)


def test_qam_map_rejects_wrong_length(desk_params):
    with pytest.raises(DomainError):
        qam_map(np.zeros(10, dtype=np.uint8), desk_params)


def test_qam_map_rejects_non_binary_bits(desk_params):
    bits = np.zeros(2 * desk_params.M * desk_params.N, dtype=int)
    bits[5] = 2
    with pytest.raises(DomainError):
        qam_map(bits, desk_params)
    bits[5] = -1
    with pytest.raises(DomainError):
        qam_map(bits, desk_params)


def test_qam_demap_decides_noisy_symbols():
    noisy = QAM4 + 0.2 * np.array([1, -1j, -1, 1j])
    assert_array_equal(qam_demap(noisy), qam_demap(QAM4))


def test_grid_rejects_non_finite():
    with pytest.raises(DomainError):
        DdGrid(np.array([[1.0, np.nan]]))


def test_grid_nmse(desk_params):
    ref = DdGrid(np.ones((desk_params.M, desk_params.N)))
    assert ref.nmse_db(ref) == -np.inf
    assert DdGrid(1.1 * ref.values).nmse_db(ref) == pytest.approx(-20.0)


def test_grid_nmse_rejects_zero_reference(desk_params):
    zero = DdGrid(np.zeros((desk_params.M, desk_params.N)))
    with pytest.raises(DomainError):
        DdGrid(np.ones((desk_params.M, desk_params.N))).nmse_db(zero)


def test_waveform_window_and_inner():
    wf = SampledWaveform.at_offset(np.array([1, 2, 3], dtype=complex), OddmParams.preset("desk"), 5)
    assert wf.offset == 5
    assert wf.end_offset == 8
    assert_allclose(wf.window(3, 7), [0, 0, 1, 2, 3, 0, 0])
    assert wf.inner(wf) == pytest.approx(wf.energy)
    assert wf.energy == pytest.approx(14 / wf.fs)


def test_waveform_inner_rejects_rate_mismatch():
    a = SampledWaveform(np.ones(4), 1.0)
    b = SampledWaveform(np.ones(4), 2.0)
    with pytest.raises(DomainError):
        a.inner(b)


def test_grid_csv_round_trip(tmp_path, desk_params):
    grid = qam_map(random_bits(np.random.default_rng(8), 2 * desk_params.M * desk_params.N), desk_params)
    path = ResultSet(tmp_path).write_grid("grid.csv", grid)
    assert_allclose(read_grid(path).values, grid.values, atol=1e-11)
