"""
Tests for the kernel extraction module.
"""
import unittest
import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import numpy as np

from src.models.kernels import (
    PRECURSOR_SHARE,
    TAIL_LIMIT,
    DtKernel,
    FilterPair,
    FilterSpec,
    abcd_kernels,
    advance_samples,
    alignment_delay,
    alt_kernels,
    channel_kernel,
    choose_fft_size,
    common_delay,
    echo_spacing,
    energy_within,
    fd_to_kernel,
    rms_delay_spread,
    synthesize_taps,
    two_sided_spectrum,
)
from src.models.twoport import (
    CableParams,
    FrequencyGrid,
    ImpedanceSpec,
    Termination,
    TwoPortABCD,
    cable,
    chain_fd,
    propagation_velocity,
    shunt,
)
from src.utils.validation import ComputationError, ValidationError

AWG24 = CableParams(r0=0.0517, l0=1.831e-7, g0=0.0, c0=1.57e-11, skin_freq=250e3, label="AWG24")


class TestFilters(unittest.TestCase):
    """Test cases for the pulse-shaping filters."""

    def setUp(self):
        """Set up a raised-cosine filter at 1 MHz."""
        self.ts = 0.5e-6
        self.spec = FilterSpec("raised_cosine", 0.5, 1e6, self.ts)

    def test_raised_cosine_shape(self):
        """Flat passband, half amplitude mid-ramp, zero from the band edge."""
        flat = 1e6 * 0.5 / 1.5
        middle = 0.5 * (flat + 1e6)
        response = self.spec.response([0.0, flat, middle, 1e6, 2e6])
        np.testing.assert_allclose(response, [1.0, 1.0, 0.5, 0.0, 0.0], atol=1e-12)

    def test_brickwall_and_none(self):
        """Brickwall is one up to its edge, none is one everywhere."""
        brick = FilterSpec("brickwall", 0.0, 1e6, self.ts)
        np.testing.assert_array_equal(brick.response([0.0, 1e6, 1.01e6]), [1.0, 1.0, 0.0])
        none = FilterSpec("none", 0.0, 1e6, self.ts)
        np.testing.assert_array_equal(none.response([0.0, 5e6]), [1.0, 1.0])
        self.assertFalse(none.band_limited)

    def test_repeated_pair(self):
        """N copies multiply the response N times and keep the passband flat."""
        pair = FilterPair.default(1e6, 0.5, self.ts)
        freqs = np.linspace(0, 1e6, 101)
        repeated = pair.repeated(3)
        np.testing.assert_allclose(repeated.response(freqs), pair.response(freqs) ** 3, atol=1e-12)
        flat = freqs[freqs <= 1e6 * 0.5 / 1.5]
        np.testing.assert_array_equal(repeated.response(flat), 1.0)
        self.assertIs(pair.repeated(1), pair)

    def test_nyquist_pair(self):
        """The Nyquist pair is transparent on every DFT bin."""
        pair = FilterPair.nyquist(self.ts)
        np.testing.assert_array_equal(pair.response(np.fft.fftfreq(64, self.ts)), 1.0)
        self.assertTrue(pair.band_limited)

    def test_invalid_filters(self):
        """Unknown kinds, bad rolloff and mismatched sample intervals raise."""
        with self.assertRaises(ValidationError):
            FilterSpec("gaussian", 0.5, 1e6, self.ts)
        with self.assertRaises(ValidationError):
            FilterSpec("raised_cosine", 1.5, 1e6, self.ts)
        with self.assertRaises(ValidationError):
            FilterPair(self.spec, FilterSpec("none", 0.0, 1e6, 2 * self.ts))


class TestSynthesis(unittest.TestCase):
    """Test cases for spectrum-to-kernel conversion."""

    def setUp(self):
        """Set up a 256-point grid at 1 us."""
        self.ts = 1e-6
        self.grid = FrequencyGrid.for_sampling(self.ts, 256)
        self.nyquist = FilterPair.nyquist(self.ts)

    def test_two_sided_placement(self):
        """Negative bins hold the conjugate mirror; Nyquist is shared."""
        spectrum = np.arange(self.grid.n_points) * (1 + 1j)
        full = two_sided_spectrum(spectrum, self.grid, 256)
        self.assertEqual(full[1], spectrum[1])
        self.assertEqual(full[-1], np.conj(spectrum[1]))
        self.assertEqual(full[128], spectrum[128].real)

    def test_flat_spectrum_is_unit_delta(self):
        """A unit spectrum synthesizes a single unit tap."""
        kernel = fd_to_kernel(np.ones(self.grid.n_points), self.grid, self.nyquist)
        self.assertEqual(kernel.memory, 0)
        self.assertAlmostEqual(kernel.taps[0], 1.0)
        self.assertAlmostEqual(kernel.energy_captured, 1.0)

    def test_pure_delay(self):
        """A linear phase of d samples puts the tap at index d."""
        d = 5
        spectrum = np.exp(-2j * np.pi * self.grid.frequencies * d * self.ts)
        kernel = fd_to_kernel(spectrum, self.grid, self.nyquist, delay_samples=0)
        self.assertEqual(kernel.memory, d)
        np.testing.assert_allclose(kernel.taps, np.eye(d + 1)[d], atol=1e-12)

    def test_geometric_kernel_memory(self):
        """Memory of a^n is the first index reaching the energy threshold."""
        a = 0.5
        z = np.exp(-2j * np.pi * self.grid.frequencies * self.ts)
        kernel = fd_to_kernel(1.0 / (1.0 - a * z), self.grid, self.nyquist, 0.9999,
                              delay_samples=0)
        self.assertEqual(kernel.memory, 6)
        np.testing.assert_allclose(kernel.taps, a ** np.arange(7), rtol=1e-9)
        self.assertGreaterEqual(kernel.energy_captured, 0.9999)
        self.assertAlmostEqual(kernel.total_energy, 4.0 / 3.0, places=9)

    def test_raising_threshold_never_shortens(self):
        """Memory is nondecreasing in the energy threshold."""
        tp = cable(AWG24, 1000.0, FrequencyGrid.for_sampling(0.25e-6, 1024))
        filters = FilterPair.default(2e6, 0.5, 0.25e-6)
        memories = [abcd_kernels(tp, filters, t).a.memory for t in (0.99, 0.9999, 0.999999)]
        self.assertEqual(memories, sorted(memories))

    def test_invalid_arguments(self):
        """Thresholds outside (0, 1] and oversized delays are rejected."""
        ones = np.ones(self.grid.n_points)
        with self.assertRaises(ValidationError):
            fd_to_kernel(ones, self.grid, self.nyquist, 0.0)
        with self.assertRaises(ValidationError):
            fd_to_kernel(ones, self.grid, self.nyquist, delay_samples=200)

    def test_aliasing_detected_without_filter(self):
        """A flat spectrum with no band limit is flagged."""
        with self.assertRaises(ComputationError):
            synthesize_taps(np.ones(self.grid.n_points), self.grid,
                            FilterPair.unfiltered(self.ts))

    def test_non_finite_spectrum(self):
        """A NaN bin is reported with its index."""
        spectrum = np.ones(self.grid.n_points)
        spectrum[7] = np.nan
        with self.assertRaises(ComputationError) as caught:
            fd_to_kernel(spectrum, self.grid, self.nyquist)
        self.assertEqual(caught.exception.bin_index, 7)

    def test_zero_spectrum(self):
        """An all-zero spectrum gives a single zero tap."""
        kernel = fd_to_kernel(np.zeros(self.grid.n_points), self.grid, self.nyquist)
        self.assertEqual(kernel.memory, 0)
        self.assertEqual(kernel.taps[0], 0.0)

    def test_advance_samples(self):
        """Advances round up to whole samples."""
        self.assertEqual(advance_samples(0.0, 1e-6), 0)
        self.assertEqual(advance_samples(2e-6, 1e-6), 2)
        self.assertEqual(advance_samples(2.1e-6, 1e-6), 3)


class TestTwoPortKernels(unittest.TestCase):
    """Test cases for ABCD, alternative and channel kernels."""

    def setUp(self):
        """Set up a cable plus shunt cascade."""
        self.ts = 0.25e-6
        self.grid = FrequencyGrid.for_sampling(self.ts, 1024)
        self.filters = FilterPair.default(2e6, 0.5, self.ts)
        self.tp = chain_fd([
            cable(AWG24, 500.0, self.grid),
            shunt(ImpedanceSpec("parallel_rc", r_ohm=1e3, c_f=1e-9), self.grid),
        ])

    def test_identity_kernels(self):
        """The identity two-port has delta a and d, zero b and c."""
        kernels = abcd_kernels(TwoPortABCD.identity(self.grid), FilterPair.nyquist(self.ts))
        self.assertAlmostEqual(kernels.a.taps[0], 1.0)
        self.assertAlmostEqual(kernels.d.taps[0], 1.0)
        self.assertEqual(kernels.b.memory, 0)
        self.assertEqual(kernels.b.taps[0], 0.0)

    def test_common_alignment(self):
        """All four kernels share one shift covering the advance and the precursor budget."""
        kernels = abcd_kernels(self.tp, self.filters)
        minimum = advance_samples(self.tp.advance_s, self.ts)
        raws = [synthesize_taps(self.tp.spectrum(n), self.grid, self.filters) for n in "abcd"]
        expected = common_delay(raws, 0.9999, minimum)
        self.assertEqual({k.delay_samples for k in kernels}, {expected})
        self.assertGreaterEqual(expected, minimum)
        for kernel in kernels:
            self.assertLessEqual(kernel.precursor_energy, 1.0 - 0.9999)
            self.assertGreaterEqual(kernel.energy_captured, 0.9999)

    def test_unterminated_alpha_equals_channel(self):
        """With z_s = 0 and an open load, h equals the alternative kernel alpha."""
        term = Termination.resistive(0.0, np.inf, self.grid)
        h = channel_kernel(self.tp, term, self.filters)
        alpha = alt_kernels(self.tp, self.filters).alpha
        self.assertEqual(h.memory, alpha.memory)
        np.testing.assert_allclose(h.taps, alpha.taps, rtol=1e-12, atol=1e-15)

    def test_alt_kernels_need_nonzero_a(self):
        """A vanishing A is reported with its bin."""
        zeros = np.zeros(self.grid.n_points)
        ones = np.ones(self.grid.n_points)
        with self.assertRaises(ComputationError):
            alt_kernels(TwoPortABCD(self.grid, zeros, ones, ones, ones), self.filters)

    def test_edge_level_flags_short_grids(self):
        """A slow tail still large at the half-span is reported, a fast one is not."""
        z = np.exp(-2j * np.pi * self.grid.frequencies * self.ts)
        nyquist = FilterPair.nyquist(self.ts)
        fast = fd_to_kernel(1.0 / (1.0 - 0.5 * z), self.grid, nyquist, delay_samples=0)
        slow = fd_to_kernel(1.0 / (1.0 - 0.999 * z), self.grid, nyquist, delay_samples=0)
        self.assertLess(fast.edge_level, TAIL_LIMIT)
        self.assertGreater(slow.edge_level, 0.1)


class TestCableKernels(unittest.TestCase):
    """Test cases for kernels of single AWG24 sections, band DC-30 MHz."""

    def setUp(self):
        """Set up a 30 MHz raised-cosine pair on a 4096-point grid."""
        self.filters = FilterPair.default(30e6, 0.5)
        self.ts = self.filters.ts
        self.grid = FrequencyGrid.for_sampling(self.ts, 4096)

    def test_a_is_compact_at_1500_ft(self):
        """a(t) of 1.5 kft keeps at least 95% of its energy within 0.75 us of the onset."""
        kernels = abcd_kernels(cable(AWG24, 1500.0, self.grid), self.filters)
        self.assertGreaterEqual(energy_within(kernels.a, 0.75e-6), 0.95)

    def test_alpha_echo_spacing_is_round_trip(self):
        """Echoes of alpha = IFT(1/A) of 2 kft repeat every round-trip delay."""
        alpha = alt_kernels(cable(AWG24, 2000.0, self.grid), self.filters).alpha
        expected = 2.0 * 2000.0 / propagation_velocity(AWG24)
        spacing = echo_spacing(alpha, min_spacing_s=1e-6)
        self.assertIsNotNone(spacing)
        self.assertLess(abs(spacing - expected) / expected, 0.1)

    def test_alpha_follows_h_before_first_echo(self):
        """Up to the first echo, alpha and the terminated h differ by a scale only."""
        tp = cable(AWG24, 2000.0, self.grid)
        alpha = alt_kernels(tp, self.filters).alpha
        h = channel_kernel(tp, Termination.resistive(100.0, 100.0, self.grid), self.filters,
                           delay_samples=alpha.delay_samples)
        one_way = 2000.0 / propagation_velocity(AWG24)
        n = alpha.delay_samples + int(2.0 * one_way / self.ts)
        x = alpha.truncated(n - 1).taps
        y = h.truncated(n - 1).taps
        correlation = abs(np.dot(x, y)) / (np.linalg.norm(x) * np.linalg.norm(y))
        self.assertGreaterEqual(correlation, 0.99)


class TestAnalyticPairs(unittest.TestCase):
    """Test cases for synthesis against closed-form transform pairs."""

    def setUp(self):
        """Set up a 1024-point grid at 100 ns with a = 1e6 1/s."""
        self.ts = 1e-7
        self.n_fft = 1024
        self.grid = FrequencyGrid.for_sampling(self.ts, self.n_fft)
        self.filters = FilterPair.nyquist(self.ts)
        self.a = 1e6
        n = np.arange(self.n_fft)
        self.t = self.ts * np.where(n < self.n_fft // 2, n, n - self.n_fft)

    def test_sech_pair(self):
        """(pi/a) sech(pi^2 f / a) synthesizes Ts sech(a t)."""
        f = self.grid.frequencies
        spectrum = np.pi / self.a / np.cosh(np.pi ** 2 * f / self.a)
        taps = synthesize_taps(spectrum, self.grid, self.filters)
        expected = self.ts / np.cosh(self.a * self.t)
        error = np.linalg.norm(taps - expected) / np.linalg.norm(expected)
        self.assertLess(error, 1e-4)

    def test_cosech_pair(self):
        """-j (pi/a) tanh(pi^2 f / a) synthesizes Ts cosech(a t) once the 1/t part is split off."""
        # 1/(a t) <-> -j (pi/a) sign(f); its periodic sum is (pi / (a T)) cot(pi t / T)
        f = self.grid.frequencies
        spectrum = -1j * np.pi / self.a * (np.tanh(np.pi ** 2 * f / self.a) - np.sign(f))
        taps = synthesize_taps(spectrum, self.grid, self.filters)
        period = self.n_fft * self.ts
        nonzero = self.t != 0
        t = self.t[nonzero]
        expected = np.zeros(self.n_fft)
        expected[nonzero] = self.ts * (
            1.0 / np.sinh(self.a * t) - np.pi / (self.a * period) / np.tan(np.pi * t / period)
        )
        error = np.linalg.norm(taps - expected) / np.linalg.norm(expected)
        self.assertLess(error, 1e-4)


class TestAlignment(unittest.TestCase):
    """Test cases for the precursor-driven alignment shift."""

    def setUp(self):
        """Set up a 256-tap two-sided kernel with a three-sample precursor."""
        self.raw = np.zeros(256)
        self.raw[0] = 1.0
        self.raw[-3] = 0.5

    def test_shift_covers_precursor(self):
        """The smallest shift moving every precursor tap to causal time is chosen."""
        self.assertEqual(alignment_delay(self.raw, 0.9999), 3)

    def test_minimum_is_respected(self):
        """A larger minimum shift is kept as is."""
        self.assertEqual(alignment_delay(self.raw, 0.9999, minimum=7), 7)
        with self.assertRaises(ValidationError):
            alignment_delay(self.raw, 0.9999, minimum=128)

    def test_budget_allows_small_precursor(self):
        """A precursor within the budget share needs no shift."""
        raw = np.zeros(256)
        raw[0] = 1.0
        raw[-1] = np.sqrt(0.5 * PRECURSOR_SHARE * 1e-2)
        self.assertEqual(alignment_delay(raw, 0.99), 0)
        self.assertEqual(alignment_delay(raw, 0.9999), 1)

    def test_common_delay_is_largest(self):
        """A set of kernels is aligned by the largest individual shift."""
        causal = np.zeros(256)
        causal[0] = 1.0
        self.assertEqual(alignment_delay(causal), 0)
        self.assertEqual(common_delay([causal, self.raw], 0.9999, minimum=1), 3)
        self.assertEqual(common_delay([causal], 0.9999, minimum=2), 2)


class TestKernelMetrics(unittest.TestCase):
    """Test cases for delay spread, windowed energy and echo spacing."""

    def test_rms_delay_spread(self):
        """A delta has no spread; two equal taps two samples apart spread one sample."""
        self.assertEqual(rms_delay_spread(DtKernel.delta(1e-6)), 0.0)
        kernel = DtKernel(np.array([1.0, 0.0, 1.0]), 1e-6)
        self.assertAlmostEqual(rms_delay_spread(kernel), 1e-6)

    def test_energy_within(self):
        """Windowed energy is measured against the pre-truncation energy."""
        kernel = DtKernel(np.array([1.0, 1.0, 1.0, 1.0]), 1e-6, total_energy=8.0)
        self.assertAlmostEqual(energy_within(kernel, 1e-6), 0.25)
        self.assertAlmostEqual(energy_within(kernel, 10e-6), 0.5)

    def test_truncated(self):
        """Truncation keeps the leading taps and reports the captured share."""
        kernel = DtKernel(np.array([2.0, 1.0, 1.0]), 1e-6)
        cut = kernel.truncated(0)
        self.assertEqual(cut.memory, 0)
        self.assertAlmostEqual(cut.energy_captured, 4.0 / 6.0)
        self.assertEqual(kernel.truncated(4).memory, 4)

    def test_echo_spacing(self):
        """Echoes every 20 samples give a spacing of 20 Ts."""
        taps = np.zeros(200)
        taps[::20] = 0.5 ** np.arange(10)
        kernel = DtKernel(taps, 1e-7)
        self.assertAlmostEqual(echo_spacing(kernel, min_spacing_s=1e-6), 2e-6)

    def test_echo_spacing_without_echoes(self):
        """A lone tap has no echo."""
        self.assertIsNone(echo_spacing(DtKernel.delta(1e-7, memory=3), min_spacing_s=1e-6))

    def test_choose_fft_size(self):
        """Power of two covering four durations, at least 256."""
        self.assertEqual(choose_fft_size(1e-6, 0.0), 256)
        self.assertEqual(choose_fft_size(1e-6, 100e-6), 512)


if __name__ == '__main__':
    unittest.main()
