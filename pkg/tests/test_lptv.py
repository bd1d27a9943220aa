"""
Tests for the LPTV (harmonic-form) channel module.
"""
import unittest
import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import numpy as np

from src.models.kernels import DtKernel, FilterPair
from src.models.lifting import lift_lti, lift_ltv, tz_blocks
from src.models.lptv import (
    LpTvKernel,
    TvImpedance,
    TvKernel,
    ZadehBlockOperators,
    block_period,
    commensurate_ts,
    compose_tv,
    default_harmonic_order,
    doppler_profile,
    estimate_harmonics,
    feasible_order,
    harmonic_responses,
    lifted_lptv,
    noise_whitener,
    total_energy,
    truncation_error,
    zadeh_apply,
)
from src.models.twoport import FrequencyGrid, ImpedanceSpec
from src.utils.validation import ComputationError, ValidationError


def _kernel(ts=1e-6, f0=25e3):
    """Conjugate-paired first-order LPTV kernel with three taps per harmonic."""
    h1 = np.array([0.2 + 0.1j, -0.05j, 0.02])
    return LpTvKernel.from_taps(
        {-1: np.conj(h1), 0: np.array([1.0, 0.5, -0.25]), 1: h1}, f0, ts
    )


def _observe(kernel, payloads, p, memory, first_block=0):
    x = tz_blocks(payloads, memory).reshape(-1)
    return zadeh_apply(kernel, x, p, start_sample=first_block * p).reshape(-1, p)


class TestLpTvKernel(unittest.TestCase):
    """Test cases for harmonic kernels and their time-domain forms."""

    def setUp(self):
        """Set up a kernel whose period is 40 samples."""
        self.kernel = _kernel()
        self.rng = np.random.default_rng(5)

    def test_properties(self):
        """Order, memory, period and conjugate pairing."""
        self.assertEqual(self.kernel.order, 1)
        self.assertEqual(self.kernel.memory, 2)
        self.assertAlmostEqual(self.kernel.period_s, 40e-6)
        self.assertTrue(self.kernel.is_conjugate_paired())
        self.assertEqual(self.kernel.tap_matrix().shape, (3, 3))
        np.testing.assert_array_equal(self.kernel.taps(5), 0.0)

    def test_needs_dc_harmonic(self):
        """The harmonic set must contain m = 0."""
        with self.assertRaises(ValidationError):
            LpTvKernel.from_taps({1: np.ones(2)}, 50.0, 1e-6)

    def test_zadeh_matches_tabulated_kernel(self):
        """The filterbank output equals the direct time-varying sum."""
        x = self.rng.standard_normal(96)
        tabulated = TvKernel.from_lptv(self.kernel)
        self.assertEqual(tabulated.period, 40)
        np.testing.assert_allclose(zadeh_apply(self.kernel, x, 16), tabulated.apply(x),
                                   atol=1e-12)

    def test_lifted_lptv_matches_lift_ltv(self):
        """Lifted harmonic matrices equal the lift of the tabulated kernel."""
        tabulated = TvKernel.from_lptv(self.kernel)
        for i in (0, 1, 4):
            pair = lifted_lptv(self.kernel, 16, i)
            direct = lift_ltv(tabulated, 16, i)
            np.testing.assert_allclose(pair.h0, direct.h0, atol=1e-12)
            np.testing.assert_allclose(pair.h1, direct.h1, atol=1e-12)

    def test_modulation_matrices(self):
        """The first block is the sum of Omega_m times the lifted harmonic kernels."""
        operators = ZadehBlockOperators(16, self.kernel.ts, self.kernel.f0)
        expected = sum(
            operators.omega(m) @ lift_lti(DtKernel(self.kernel.taps(m), self.kernel.ts), 16).h0
            for m in (-1, 0, 1)
        )
        np.testing.assert_allclose(lifted_lptv(self.kernel, 16, 0).h0, expected, atol=1e-12)
        np.testing.assert_allclose(np.abs(np.diag(operators.omega(1))), np.ones(16))

    def test_compose_tv(self):
        """The composed kernel equals applying the two kernels in turn."""
        first = TvKernel(self.rng.standard_normal((3, 2)))
        second = TvKernel(self.rng.standard_normal((4, 3)))
        composed = compose_tv(first, second)
        self.assertEqual(composed.period, 12)
        self.assertEqual(composed.memory, 3)
        x = self.rng.standard_normal(30)
        np.testing.assert_allclose(composed.apply(x), second.apply(first.apply(x)), atol=1e-12)

    def test_truncation_energy(self):
        """Energy beyond order 0 is the energy of the m = +-1 taps."""
        side = 2 * float(np.sum(np.abs(self.kernel.taps(1)) ** 2))
        self.assertAlmostEqual(truncation_error(self.kernel, 0), side)
        self.assertEqual(truncation_error(self.kernel, 1), 0.0)
        self.assertAlmostEqual(total_energy(self.kernel), side + 1.3125)

    def test_doppler_of_lti_kernel(self):
        """Only the zero Doppler bin carries power for an LTI kernel."""
        lti = LpTvKernel.from_taps({0: np.array([1.0, 0.5])}, 25e3, 1e-6)
        freqs, power = doppler_profile(lti, 16, 8)
        self.assertEqual(freqs[0], 0.0)
        self.assertGreater(power[0], 0.0)
        np.testing.assert_allclose(power[1:], 0.0, atol=1e-20)

    def test_doppler_quantized_at_harmonics(self):
        """A switching kernel puts Doppler power only at multiples of f0."""
        p, ts = 16, 1e-6
        f0 = 1.0 / (4 * p * ts)
        taps = {0: np.array([1.0, 0.5]), 1: np.array([0.2, 0.1j])}
        taps[-1] = np.conj(taps[1])
        kernel = LpTvKernel.from_taps(taps, f0, ts)
        freqs, power = doppler_profile(kernel, p, 16)
        occupied = set(np.flatnonzero(power > 1e-12 * power.max()))
        self.assertEqual(occupied, {0, 4, 12})
        self.assertAlmostEqual(freqs[4], f0)
        self.assertAlmostEqual(freqs[12], -f0)


class TestTvImpedance(unittest.TestCase):
    """Test cases for switching and modulated loads."""

    def setUp(self):
        """Set up a small grid."""
        self.grid = FrequencyGrid(9, 1e4)

    def test_two_state_coefficients(self):
        """Square-wave switching between admittances at half duty."""
        z = TvImpedance.two_state("shunt", 60.0, 100.0, 50.0)
        c = z.coefficients(self.grid, 2)
        np.testing.assert_allclose(c[0], 0.5 * (0.01 + 0.02))
        np.testing.assert_allclose(c[1], (0.01 - 0.02) / (1j * np.pi))
        np.testing.assert_allclose(c[2], 0.0, atol=1e-15)
        np.testing.assert_allclose(c[-1], np.conj(c[1]))

    def test_cosine_coefficients(self):
        """R(t) = r_dc + r_ac cos(...) has three nonzero coefficients."""
        z = TvImpedance.cosine("series", 60.0, 10.0, 4.0, phase=0.3)
        c = z.coefficients(self.grid, 2)
        np.testing.assert_allclose(c[0], 10.0)
        np.testing.assert_allclose(c[1], 2.0 * np.exp(0.3j))
        np.testing.assert_allclose(c[-1], 2.0 * np.exp(-0.3j))
        np.testing.assert_allclose(c[2], 0.0, atol=1e-12)

    def test_invalid_loads(self):
        """Non-passive, degenerate and unknown loads are rejected."""
        with self.assertRaises(ValidationError):
            TvImpedance.cosine("series", 60.0, 1.0, 2.0)
        with self.assertRaises(ValidationError):
            TvImpedance.cosine("shunt", 60.0, 1.0, 1.0)
        with self.assertRaises(ValidationError):
            TvImpedance.two_state("shunt", 60.0, 100.0, 50.0, duty=1.0)
        with self.assertRaises(ValidationError):
            TvImpedance("piecewise", "shunt", 60.0, (ImpedanceSpec("short"),))
        with self.assertRaises(ValidationError):
            TvImpedance("chaotic", "shunt", 60.0)

    def test_harmonic_responses_are_paired(self):
        """Harmonic kernels satisfy h_-m = conj(h_m)."""
        z = TvImpedance.two_state("shunt", 25e3, 100.0, 50.0, duty=0.3)
        grid = FrequencyGrid.for_sampling(1e-6, 256)
        kernel = harmonic_responses(z, grid, FilterPair.nyquist(1e-6), 3)
        self.assertEqual(kernel.order, 3)
        self.assertTrue(kernel.is_conjugate_paired(atol=1e-12))

    def test_default_order_of_constant_load(self):
        """A load without modulation needs no harmonics."""
        z = TvImpedance.cosine("series", 25e3, 50.0, 0.0)
        grid = FrequencyGrid.for_sampling(1e-6, 256)
        full = harmonic_responses(z, grid, FilterPair.nyquist(1e-6), 4)
        self.assertEqual(default_harmonic_order(full), 0)

    def test_default_order_is_capped(self):
        """The energy rule stops at the cap; the cap follows P/L."""
        z = TvImpedance.two_state("shunt", 25e3, 100.0, 1000.0, duty=0.3)
        grid = FrequencyGrid.for_sampling(1e-6, 256)
        full = harmonic_responses(z, grid, FilterPair.nyquist(1e-6), 6)
        self.assertGreater(default_harmonic_order(full), 1)
        with self.assertLogs("src.models.lptv", level="WARNING"):
            self.assertEqual(default_harmonic_order(full, cap=1), 1)
        self.assertEqual(feasible_order(64, 8), 3)
        self.assertEqual(feasible_order(16, 0), 7)
        self.assertEqual(feasible_order(8, 8), 0)


class TestTiming(unittest.TestCase):
    """Test cases for block periods and sample-interval adjustment."""

    def test_block_period(self):
        """P Ts f0 = 4/5 repeats every five blocks."""
        self.assertEqual(block_period(16, 1e-6, 50e3), 5)
        self.assertEqual(block_period(16, 1e-6, 62.5e3), 1)

    def test_commensurate_ts(self):
        """Small adjustments are applied, large ones refused."""
        ts = commensurate_ts(1e-6, 60.0)
        self.assertAlmostEqual(1.0 / (60.0 * ts), round(1.0 / (60.0 * ts)), places=6)
        self.assertLess(abs(ts - 1e-6) / 1e-6, 1e-3)
        with self.assertRaises(ValidationError):
            commensurate_ts(0.4, 1.0)


class TestEstimateHarmonics(unittest.TestCase):
    """Test cases for the least-squares harmonic estimator."""

    def setUp(self):
        """Set up the reference kernel and block geometry."""
        self.kernel = _kernel()
        self.p = 16
        self.taps = 3
        self.width = self.p - self.kernel.memory
        self.rng = np.random.default_rng(21)

    def _truth(self):
        return np.concatenate([self.kernel.taps(m) for m in (-1, 0, 1)])

    def _estimate_vector(self, estimate):
        return np.concatenate([estimate.harmonics[m] for m in (-1, 0, 1)])

    def test_noiseless_round_trip(self):
        """Noiseless blocks recover every harmonic tap."""
        payloads = self.rng.standard_normal((8, self.width))
        outputs = _observe(self.kernel, payloads, self.p, self.kernel.memory, first_block=1)
        estimate = estimate_harmonics(payloads, outputs, self.kernel.f0, 1, self.taps,
                                      self.kernel.ts, first_block=1)
        truth = self._truth()
        error = np.linalg.norm(self._estimate_vector(estimate) - truth) / np.linalg.norm(truth)
        self.assertLess(error, 1e-8)
        self.assertLess(estimate.residual_mse, 1e-20)
        self.assertEqual(estimate.n_blocks, 8)

    def test_whitened_estimate(self):
        """Identity covariance gives the same estimate plus a noise floor."""
        payloads = self.rng.standard_normal((6, self.width))
        outputs = _observe(self.kernel, payloads, self.p, self.kernel.memory)
        estimate = estimate_harmonics(payloads, outputs, self.kernel.f0, 1, self.taps,
                                      self.kernel.ts, noise_cov=np.eye(self.p))
        np.testing.assert_allclose(self._estimate_vector(estimate), self._truth(), atol=1e-9)
        self.assertGreater(estimate.noise_floor_mse, 0.0)

    def test_singular_covariance_whitens_onto_range(self):
        """A rank-deficient PSD covariance still whitens and recovers the taps."""
        u = np.ones(self.p) / np.sqrt(self.p)
        cov = np.eye(self.p) - np.outer(u, u)
        whitener = noise_whitener(cov, self.p)
        self.assertEqual(whitener.shape, (self.p - 1, self.p))
        np.testing.assert_allclose(whitener @ cov @ whitener.conj().T, np.eye(self.p - 1),
                                   atol=1e-10)

        payloads = self.rng.standard_normal((6, self.width))
        outputs = _observe(self.kernel, payloads, self.p, self.kernel.memory)
        estimate = estimate_harmonics(payloads, outputs, self.kernel.f0, 1, self.taps,
                                      self.kernel.ts, noise_cov=cov)
        np.testing.assert_allclose(self._estimate_vector(estimate), self._truth(), atol=1e-9)
        self.assertTrue(np.isfinite(estimate.noise_floor_mse))

    def test_invalid_covariance(self):
        """Indefinite, non-Hermitian or zero covariances are refused."""
        payloads = self.rng.standard_normal((6, self.width))
        outputs = _observe(self.kernel, payloads, self.p, self.kernel.memory)
        indefinite = np.diag(np.r_[-1.0, np.ones(self.p - 1)])
        skewed = np.eye(self.p)
        skewed[0, 1] = 0.5
        for cov in (indefinite, skewed):
            with self.assertRaises(ValidationError):
                estimate_harmonics(payloads, outputs, self.kernel.f0, 1, self.taps,
                                   self.kernel.ts, noise_cov=cov)
        with self.assertRaises(ComputationError):
            noise_whitener(np.zeros((self.p, self.p)), self.p)

    def test_error_shrinks_with_blocks(self):
        """With noise, four times the data cuts the error by at least 1.3x."""
        truth = self._truth()

        def mean_error(n_blocks):
            errors = []
            for seed in range(4):
                rng = np.random.default_rng(100 + seed)
                payloads = rng.standard_normal((n_blocks, self.width))
                clean = _observe(self.kernel, payloads, self.p, self.kernel.memory)
                sigma = np.sqrt(np.mean(np.abs(clean) ** 2) / 10 ** 3.0)
                noisy = clean + sigma * rng.standard_normal(clean.shape)
                estimate = estimate_harmonics(payloads, noisy, self.kernel.f0, 1, self.taps,
                                              self.kernel.ts)
                errors.append(np.linalg.norm(self._estimate_vector(estimate) - truth))
            return np.mean(errors)

        self.assertGreaterEqual(mean_error(16) / mean_error(64), 1.3)

    def test_lti_order_zero(self):
        """M = 0 on an LTI channel reproduces its taps."""
        lti = LpTvKernel.from_taps({0: np.array([0.8, -0.3, 0.1])}, self.kernel.f0, 1e-6)
        payloads = self.rng.standard_normal((4, self.width))
        outputs = _observe(lti, payloads, self.p, 2)
        estimate = estimate_harmonics(payloads, outputs, lti.f0, 0, 3, 1e-6)
        np.testing.assert_allclose(estimate.harmonics[0], [0.8, -0.3, 0.1], atol=1e-10)

    def test_underdetermined_block(self):
        """P = (2M+1)L - 1 cannot identify the harmonics."""
        p = 3 * self.taps - 1
        payloads = self.rng.standard_normal((4, p - self.taps + 1))
        with self.assertRaises(ValidationError):
            estimate_harmonics(payloads, np.zeros((4, p)), self.kernel.f0, 1, self.taps, 1e-6)

    def test_mismatched_blocks(self):
        """Payload and output lists must agree."""
        with self.assertRaises(ValidationError):
            estimate_harmonics(np.ones((2, 14)), np.ones((3, 16)), 25e3, 1, 3, 1e-6)
        with self.assertRaises(ValidationError):
            estimate_harmonics(np.ones((2, 15)), np.ones((2, 16)), 25e3, 1, 3, 1e-6)


if __name__ == '__main__':
    unittest.main()
