import unittest

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.conf.config import settings
from src.schemas import OddmParams
from src.services.errors import DomainError, SizeGuardError
from src.services.orthogonality import (
    ambiguity,
    auto_ambiguity,
    basis_function,
    cross_ambiguity_ce,
    gram,
    lambda_from_gram,
    lambda_metric,
    off_center_max,
    to_db,
)
from src.services.params_grid import SampledWaveform
from src.services.pulse import build_ddop, srrc_pulse


class TestSmallGram(unittest.TestCase):

    def setUp(self):
        self.params = OddmParams(M=8, N=4, Q=2, Ns=4, T=1 / 15000, beta=0.15)
        self.pulse = srrc_pulse(self.params)

    def test_gram_is_hermitian_with_unit_diagonal(self):
        G = gram(basis_function("digital", self.params, self.pulse), self.params)
        self.assertEqual(G.shape, (32, 32))
        assert_allclose(G, G.conj().T, atol=1e-12)
        assert_allclose(np.diag(G).real, np.ones(32), atol=1e-9)

    def test_lambda_metric_agrees_with_gram(self):
        for system in ("digital", "analog"):
            G = gram(basis_function(system, self.params, self.pulse), self.params)
            expected = lambda_from_gram(G, self.params, system=system)
            surface = lambda_metric(self.params, self.pulse, system)
            self.assertEqual(expected.kind, f"lambda_{system}")
            self.assertEqual(expected.kind, surface.kind)
            assert_allclose(surface.values, expected.values, atol=1e-10)

    def test_gram_is_positive_semidefinite(self):
        for system in ("digital", "analog"):
            G = gram(basis_function(system, self.params, self.pulse), self.params)
            self.assertGreater(np.linalg.eigvalsh(G).min(), -1e-8)

    def test_lambda_from_subset(self):
        subset = [(m, n) for m in range(self.params.M) for n in (0, self.params.N - 1)]
        G = gram(basis_function("digital", self.params, self.pulse), self.params, subset)
        with self.assertRaises(DomainError):
            # n offsets 1 and 2 have no index pair
            lambda_from_gram(G, self.params, subset)

    def test_lambda_rejects_shape(self):
        with self.assertRaises(DomainError):
            lambda_from_gram(np.eye(3), self.params)

    def test_gram_size_guard(self):
        original = settings.gram_max_dim
        settings.gram_max_dim = 16
        try:
            with self.assertRaises(SizeGuardError):
                gram(basis_function("digital", self.params, self.pulse), self.params)
            G = gram(basis_function("digital", self.params, self.pulse), self.params, allow_full=True)
            self.assertEqual(G.shape, (32, 32))
        finally:
            settings.gram_max_dim = original

    def test_no_time_domain_basis_for_otfs(self):
        with self.assertRaises(DomainError):
            basis_function("otfs", self.params, self.pulse)


def test_to_db():
    assert to_db(0.1) == pytest.approx(-20.0)
    assert np.isfinite(to_db(0.0))


def test_auto_ambiguity_center_and_symmetry(desk_params, desk_pulse):
    surface = auto_ambiguity(desk_params, desk_pulse)
    assert surface.values.shape == (2 * desk_params.M - 1, 2 * desk_params.N - 1)
    assert abs(surface.center) == pytest.approx(1.0, abs=1e-9)
    assert_allclose(np.abs(surface.values[::-1, ::-1]), np.abs(surface.values), atol=1e-12)


def test_auto_ambiguity_zero_doppler_column(long_params, long_pulse):
    surface = auto_ambiguity(long_params, long_pulse)
    assert abs(surface.center) == pytest.approx(1.0, abs=1e-3)
    column = np.abs(surface.values[:, long_params.N - 1])
    column[long_params.M - 1] = 0
    assert to_db(column.max()) < -40


def test_auto_ambiguity_vanishes_away_from_frame_edges(desk_params, desk_pulse):
    # neighbouring sub-pulses only meet once |m_bar| T/M > T - Ta
    surface = auto_ambiguity(desk_params, desk_pulse)
    reach = desk_params.M - 2 * desk_params.Q - 1
    rows = np.abs(surface.m_bar) <= reach
    interior = np.abs(surface.values[rows])
    interior[:, desk_params.N - 1] = 0
    assert interior.max() < 1e-9


def test_cross_ambiguity_generalized(long_params, long_pulse):
    surface = cross_ambiguity_ce(long_params, long_pulse)
    assert surface.kind == "cross_uce_u"
    assert abs(surface.center) == pytest.approx(1.0, abs=1e-3)
    assert to_db(off_center_max(surface)) < -40
    assert to_db(off_center_max(surface, doppler_only=True)) < -100


def test_full_scale_auto_ambiguity():
    params = OddmParams.preset("full")
    surface = auto_ambiguity(params, srrc_pulse(params))
    assert abs(surface.center) == pytest.approx(1.0, abs=1e-3)
    assert to_db(off_center_max(surface)) < -40


def test_full_scale_cross_ambiguity_with_long_pulse():
    params = OddmParams.preset("full").with_ta(10)
    assert params.Q == 640
    surface = cross_ambiguity_ce(params, srrc_pulse(params))
    assert abs(surface.center) == pytest.approx(1.0, abs=1e-3)
    assert to_db(off_center_max(surface)) < -80
    assert to_db(off_center_max(surface, doppler_only=True)) < -120


def test_ambiguity_rejects_foreign_rate(desk_params, desk_pulse):
    u = build_ddop(desk_params, desk_pulse).wf
    other = SampledWaveform(u.samples, 2 * u.fs, u.t0)
    with pytest.raises(DomainError):
        ambiguity(u, other, desk_params)


def test_surface_accessors(desk_params, desk_pulse):
    surface = auto_ambiguity(desk_params, desk_pulse)
    assert surface.m_bar[0] == -(desk_params.M - 1)
    assert surface.n_bar[-1] == desk_params.N - 1
    assert surface.at(0, 0) == surface.center
    assert surface.magnitude_db()[desk_params.M - 1, desk_params.N - 1] == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("ta_over_t", [1.0, 2.5, 10.0])
def test_digital_lambda_is_orthogonal_for_any_duration(ta_over_t, desk_params):
    params = desk_params.with_ta(ta_over_t)
    surface = lambda_metric(params, srrc_pulse(params), "digital")
    assert surface.center == pytest.approx(1.0, abs=1e-3)
    assert to_db(off_center_max(surface)) < -35


def test_digital_lambda_at_short_pulse(desk_params, desk_pulse):
    surface = lambda_metric(desk_params, desk_pulse, "digital")
    assert surface.center == pytest.approx(1.0, abs=1e-3)
    assert to_db(off_center_max(surface)) < -25


def test_lambda_anchor_subset(long_params, long_pulse):
    full = lambda_metric(long_params, long_pulse, "digital")
    partial = lambda_metric(long_params, long_pulse, "digital", anchors=4, seed=3)
    assert partial.center == pytest.approx(full.center, abs=1e-6)
    assert to_db(off_center_max(partial)) < -35


def test_analog_lambda_up_to_one_symbol(long_params, long_pulse):
    surface = lambda_metric(long_params, long_pulse, "analog")
    assert surface.kind == "lambda_analog"
    assert surface.center == pytest.approx(1.0, abs=1e-3)
    assert to_db(off_center_max(surface)) < -30
