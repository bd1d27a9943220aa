"""
Discrete-time filtering kernels from frequency-domain two-port spectra.

A spectrum on a single-sided grid is extended to the two-sided DFT grid of
the sampling interval, shaped by the transmit/receive filter pair, inverse
transformed and then aligned and truncated to a causal FIR kernel.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np
from scipy.signal import find_peaks

from src.models.twoport import transfer_function
from src.utils.validation import (
    ComputationError,
    ValidationError,
    validate_finite,
    validate_positive,
    validate_range,
)

logger = logging.getLogger(__name__)

FILTER_KINDS = ("raised_cosine", "brickwall", "none")

# Aliasing check: share of spectrum energy tolerated in the top bins
ALIAS_TOP_FRACTION = 0.05
ALIAS_ENERGY_LIMIT = 0.01

MAX_FFT_SIZE = 2 ** 22
# Aligned response at the half-span, relative to its peak, that forces a larger grid
TAIL_LIMIT = 1e-6
# Share of the truncation budget the alignment may leave at negative time
PRECURSOR_SHARE = 0.1


@dataclass(frozen=True)
class FilterSpec:
    """
    Zero-phase transmit or receive filter.

    Attributes:
        kind: raised_cosine, brickwall or none
        rolloff: Raised-cosine excess bandwidth in [0, 1]
        bandwidth: Absolute band edge in Hz (zero at and above it)
        ts: Sample interval in seconds
        power: Exponent on the response; N for the product of N copies
    """

    kind: str = "raised_cosine"
    rolloff: float = 0.5
    bandwidth: float = 30e6
    ts: float = 1.0 / 60e6
    power: float = 1.0

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise ValidationError(f"Unknown filter kind '{self.kind}'")
        validate_range(self.rolloff, "Rolloff", min_val=0.0, max_val=1.0)
        validate_positive(self.bandwidth, "Filter bandwidth")
        validate_positive(self.ts, "Sample interval")
        validate_positive(self.power, "Filter exponent")

    @property
    def band_limited(self):
        return self.kind != "none"

    def response(self, freqs):
        """Real, even magnitude response at the given frequencies."""
        f = np.abs(np.asarray(freqs, dtype=float))
        if self.kind == "none":
            return np.ones_like(f)
        if self.kind == "brickwall":
            return (f <= self.bandwidth * (1.0 + 1e-12)).astype(float)
        if self.power != 1.0:
            return self._raised_cosine(f) ** self.power
        return self._raised_cosine(f)

    def _raised_cosine(self, f):
        edge = self.bandwidth
        flat = edge * (1.0 - self.rolloff) / (1.0 + self.rolloff)
        out = np.zeros_like(f)
        out[f <= flat] = 1.0
        if edge > flat:
            ramp = (f > flat) & (f < edge)
            out[ramp] = 0.5 * (1.0 + np.cos(np.pi * (f[ramp] - flat) / (edge - flat)))
        return out


@dataclass(frozen=True)
class FilterPair:
    """Transmit pulse-shaping filter p and receive filter p'."""

    transmit: FilterSpec
    receive: FilterSpec

    def __post_init__(self):
        if not math.isclose(self.transmit.ts, self.receive.ts, rel_tol=1e-12):
            raise ValidationError("Transmit and receive filters must share Ts")

    @classmethod
    def default(cls, bandwidth=30e6, rolloff=0.5, ts=None, kind="raised_cosine"):
        """Filter once: shaped transmit pulse, transparent receiver."""
        ts = ts if ts is not None else 1.0 / (2.0 * bandwidth)
        return cls(
            FilterSpec(kind, rolloff, bandwidth, ts),
            FilterSpec("none", 0.0, bandwidth, ts),
        )

    @classmethod
    def unfiltered(cls, ts):
        """Transparent pair; synthesis then checks the spectrum for aliasing."""
        return cls(FilterSpec("none", 0.0, 0.5 / ts, ts), FilterSpec("none", 0.0, 0.5 / ts, ts))

    @classmethod
    def nyquist(cls, ts):
        """Brickwall at the Nyquist frequency: unit response on every DFT bin, no delay."""
        edge = FilterSpec("brickwall", 0.0, 0.5 / ts, ts)
        return cls(edge, edge)

    def repeated(self, n_copies):
        """Filter pair equal to the product of n_copies of this one."""
        if n_copies <= 1:
            return self
        return FilterPair(
            replace(self.transmit, power=self.transmit.power * n_copies),
            replace(self.receive, power=self.receive.power * n_copies),
        )

    @property
    def ts(self):
        return self.transmit.ts

    @property
    def band_limited(self):
        return self.transmit.band_limited or self.receive.band_limited

    def response(self, freqs):
        """Product of the transmit and receive responses."""
        return self.transmit.response(freqs) * self.receive.response(freqs)


@dataclass(frozen=True, eq=False)
class DtKernel:
    """
    Causal FIR kernel h[0..L].

    Attributes:
        taps: Real or complex taps
        ts: Sample interval in seconds
        energy_captured: Tap energy over the pre-truncation energy
        total_energy: Pre-truncation energy
        delay_samples: Circular shift applied before truncation
        precursor_energy: Share of the energy zeroed at negative indices
        edge_level: Aligned magnitude around the DFT half-span over the peak;
            large values mean the synthesis grid was too short
    """

    taps: np.ndarray
    ts: float
    energy_captured: float = 1.0
    total_energy: Optional[float] = None
    delay_samples: int = 0
    precursor_energy: float = 0.0
    edge_level: float = 0.0

    def __post_init__(self):
        taps = np.array(self.taps)
        if taps.ndim != 1 or taps.size == 0:
            raise ValidationError("Kernel taps must be a non-empty vector")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)
        validate_positive(self.ts, "Sample interval")
        if self.total_energy is None:
            object.__setattr__(self, "total_energy", float(np.sum(np.abs(taps) ** 2)))

    @classmethod
    def delta(cls, ts, scale=1.0, memory=0):
        """
        Single tap at index 0.

        Args:
            ts: Sample interval in seconds
            scale: Tap value; complex values give a complex kernel
            memory: Zero taps appended after the first

        Returns:
            DtKernel
        """
        taps = np.zeros(memory + 1, dtype=complex if np.iscomplexobj(scale) else float)
        taps[0] = scale
        return cls(taps, ts)

    @property
    def memory(self):
        return self.taps.size - 1

    @property
    def time_s(self):
        return np.arange(self.taps.size) * self.ts

    @property
    def energy(self):
        """Energy of the kept taps."""
        return float(np.sum(np.abs(self.taps) ** 2))

    def truncated(self, memory):
        """Kernel cut (or zero-extended) to the given memory."""
        if memory < 0:
            raise ValidationError("Kernel memory must not be negative")
        taps = np.zeros(memory + 1, dtype=self.taps.dtype)
        n = min(memory + 1, self.taps.size)
        taps[:n] = self.taps[:n]
        kept = float(np.sum(np.abs(taps) ** 2))
        captured = kept / self.total_energy if self.total_energy > 0 else 1.0
        return DtKernel(
            taps, self.ts, captured, self.total_energy, self.delay_samples,
            self.precursor_energy, self.edge_level,
        )

    def scaled(self, factor):
        """Kernel times factor, keeping the truncation record."""
        return DtKernel(
            self.taps * factor, self.ts, self.energy_captured,
            self.total_energy * abs(factor) ** 2, self.delay_samples, self.precursor_energy,
            self.edge_level,
        )


class AbcdKernels(NamedTuple):
    a: DtKernel
    b: DtKernel
    c: DtKernel
    d: DtKernel


class AltKernels(NamedTuple):
    alpha: DtKernel
    beta: DtKernel
    gamma: DtKernel
    zeta: DtKernel


def two_sided_spectrum(spectrum, grid, n_fft, negative=None):
    """
    Place a single-sided spectrum on the n_fft-point DFT grid.

    Args:
        spectrum: Values at k*delta_f, k = 0..n_points-1
        grid: FrequencyGrid of the spectrum
        n_fft: DFT size
        negative: Values at -k*delta_f; the conjugate mirror when omitted

    Returns:
        np.ndarray: DFT-ordered spectrum with zeros beyond the grid
    """
    spectrum = np.asarray(spectrum, dtype=complex)
    if spectrum.shape != (grid.n_points,):
        raise ValidationError("Spectrum does not match the frequency grid")
    if negative is None:
        negative = np.conj(spectrum)
    else:
        negative = np.asarray(negative, dtype=complex)
        if negative.shape != spectrum.shape:
            raise ValidationError("Negative-frequency spectrum does not match the grid")

    full = np.zeros(n_fft, dtype=complex)
    top = grid.n_points - 1
    full[: top + 1] = spectrum
    full[n_fft - top:] = negative[top:0:-1]
    if 2 * top == n_fft:
        # positive and negative Nyquist share one bin
        full[top] = 0.5 * (spectrum[top] + negative[top])
    return full


def synthesize_taps(spectrum, grid, filters, negative=None):
    """
    Un-truncated two-sided kernel: IDFT of the filtered two-sided spectrum.

    Index n of the result is time n*Ts for n < N/2 and (n - N)*Ts otherwise.
    The result is real when no negative-frequency spectrum is given.

    Raises:
        ComputationError: If an unfiltered spectrum is not band-limited on the
            grid, or is not finite
    """
    spectrum = validate_finite(spectrum, "Spectrum")
    if negative is not None:
        negative = validate_finite(negative, "Negative-frequency spectrum")
    n_fft = grid.fft_size(filters.ts)
    if not filters.band_limited:
        _check_aliasing(spectrum)
    full = two_sided_spectrum(spectrum, grid, n_fft, negative)
    full = full * filters.response(np.fft.fftfreq(n_fft, filters.ts))
    taps = np.fft.ifft(full)
    if negative is None:
        return taps.real
    return taps


def _check_aliasing(spectrum):
    power = np.abs(np.asarray(spectrum)) ** 2
    total = power.sum()
    if total == 0:
        return
    n_top = max(1, int(math.ceil(ALIAS_TOP_FRACTION * power.size)))
    share = power[-n_top:].sum() / total
    if share > ALIAS_ENERGY_LIMIT:
        raise ComputationError(
            f"{share:.1%} of the spectrum energy sits in the top {n_top} bins; "
            "the unfiltered kernel would alias",
            bin_index=int(power.size - n_top),
        )


def alignment_delay(raw, energy_threshold=0.9999, minimum=0):
    """
    Smallest circular shift, not below minimum, that leaves at most
    PRECURSOR_SHARE * (1 - energy_threshold) of the energy at negative indices.

    When no shift meets the budget the one with the least precursor is used.

    Args:
        raw: Un-truncated two-sided kernel (synthesize_taps output)
        energy_threshold: Truncation threshold in (0, 1]
        minimum: Lower bound on the shift, e.g. an anti-causal advance

    Returns:
        int: Shift in samples, below half the DFT span
    """
    power = np.abs(np.asarray(raw)) ** 2
    n_fft = power.size
    half = n_fft // 2
    if not 0 <= minimum < half:
        raise ValidationError(f"Alignment delay {minimum} exceeds half the DFT span")
    total = power.sum()
    if total == 0:
        return int(minimum)
    cumulative = np.concatenate([[0.0], np.cumsum(power)])
    # shift d moves raw indices half - d .. n_fft - d - 1 to negative time
    shifts = np.arange(minimum, half)
    precursor = (cumulative[n_fft - shifts] - cumulative[half - shifts]) / total
    budget = PRECURSOR_SHARE * (1.0 - energy_threshold)
    within = np.flatnonzero(precursor <= budget)
    if within.size:
        return int(shifts[within[0]])
    return int(shifts[np.argmin(precursor)])


def common_delay(raws, energy_threshold=0.9999, minimum=0):
    """One shift that aligns every kernel of a set (the largest individual shift)."""
    return max([int(minimum)] + [alignment_delay(r, energy_threshold, minimum) for r in raws])


def fd_to_kernel(spectrum, grid, filters, energy_threshold=0.9999, negative=None,
                 delay_samples=None, advance_s=0.0):
    """
    Convert a sampled spectrum into a causal, truncated DT kernel.

    Args:
        spectrum: Single-sided spectrum on grid
        grid: FrequencyGrid, compatible with filters.ts
        filters: FilterPair
        energy_threshold: Fraction of pre-truncation energy to keep, in (0, 1]
        negative: Optional negative-frequency spectrum (lowpass-equivalent kernels)
        delay_samples: Circular alignment shift; by default the smallest shift
            of at least ceil(advance_s / Ts) that meets the precursor budget
        advance_s: Anti-causal advance contained in the spectrum

    Returns:
        DtKernel with energy_captured >= energy_threshold whenever the
        precursor leaves room for it
    """
    if not (0 < energy_threshold <= 1):
        raise ValidationError("Energy threshold must be in (0, 1]")
    raw = synthesize_taps(spectrum, grid, filters, negative)
    total = float(np.sum(np.abs(raw) ** 2))

    n_fft = raw.size
    if delay_samples is None:
        delay_samples = alignment_delay(raw, energy_threshold,
                                        advance_samples(advance_s, filters.ts))
    if not 0 <= delay_samples < n_fft // 2:
        raise ValidationError(f"Alignment delay {delay_samples} exceeds half the DFT span")
    aligned = np.roll(raw, delay_samples)
    causal = aligned[: n_fft // 2]

    if total == 0:
        return DtKernel(np.zeros(1, dtype=raw.dtype), filters.ts, 1.0, 0.0, delay_samples, 0.0)

    precursor = float(np.sum(np.abs(aligned[n_fft // 2:]) ** 2)) / total
    if precursor > 1.0 - energy_threshold:
        logger.warning(
            f"Precursor energy {precursor:.3e} exceeds the truncation budget "
            f"{1.0 - energy_threshold:.3e}; zeroed"
        )
    magnitude = np.abs(aligned)
    edge = magnitude[int(0.45 * n_fft): int(0.55 * n_fft) + 1].max() / magnitude.max()

    cumulative = np.cumsum(np.abs(causal) ** 2) / total
    reached = np.flatnonzero(cumulative >= energy_threshold * (1.0 - 1e-12))
    if reached.size:
        memory = int(reached[0])
    else:
        memory = int(np.flatnonzero(causal)[-1]) if np.any(causal) else 0
        logger.warning(
            f"Threshold {energy_threshold} unreachable after alignment; "
            f"keeping {memory + 1} taps ({cumulative[memory]:.6f} of the energy)"
        )
    return DtKernel(
        causal[: memory + 1].copy(), filters.ts, float(cumulative[memory]),
        total, int(delay_samples), precursor, float(edge),
    )


def advance_samples(advance_s, ts):
    """Whole samples needed to cover an anti-causal advance."""
    if advance_s <= 0:
        return 0
    return int(math.ceil(advance_s / ts - 1e-9))


def abcd_kernels(tp, filters, energy_threshold=0.9999, delay_samples=None):
    """
    The four ABCD kernels a, b, c, d, aligned by one common shift.
    """
    if delay_samples is None:
        raws = [synthesize_taps(tp.spectrum(name), tp.grid, filters) for name in "abcd"]
        delay_samples = common_delay(raws, energy_threshold,
                                     advance_samples(tp.advance_s, filters.ts))
    kernels = AbcdKernels(*(
        fd_to_kernel(tp.spectrum(name), tp.grid, filters, energy_threshold,
                     delay_samples=delay_samples)
        for name in ("a", "b", "c", "d")
    ))
    logger.info(
        f"ABCD kernels of {tp.label or 'two-port'}: memories "
        f"{[k.memory for k in kernels]}, delay {delay_samples}"
    )
    return kernels


def alt_kernels(tp, filters, energy_threshold=0.9999, delay_samples=None):
    """
    Alternative kernels alpha, beta, gamma, zeta: IFT of 1/A, -B/A, 1/D, -C/D.

    Raises:
        ComputationError: If |A| or |D| falls below 1e-12 at some bin
    """
    for name in ("a", "d"):
        small = np.flatnonzero(np.abs(tp.spectrum(name)) < 1e-12)
        if small.size:
            raise ComputationError(
                f"|{name.upper()}| vanishes at bin {small[0]}", bin_index=int(small[0])
            )
    spectra = (1.0 / tp.a, -tp.b / tp.a, 1.0 / tp.d, -tp.c / tp.d)
    return AltKernels(*(
        fd_to_kernel(s, tp.grid, filters, energy_threshold, delay_samples=delay_samples)
        for s in spectra
    ))


def channel_kernel(tp, term, filters, energy_threshold=0.9999, delay_samples=None):
    """End-to-end kernel h[l] of the terminated link."""
    h = transfer_function(tp, term)
    return fd_to_kernel(h, tp.grid, filters, energy_threshold, delay_samples=delay_samples)


def choose_fft_size(ts, duration_s, minimum=256):
    """Power-of-two DFT size spanning at least four kernel durations."""
    validate_positive(ts, "Sample interval")
    needed = max(minimum, int(math.ceil(4.0 * duration_s / ts)))
    n_fft = 1 << (needed - 1).bit_length()
    return min(n_fft, MAX_FFT_SIZE)


def rms_delay_spread(kernel):
    """RMS delay spread of a kernel in seconds."""
    power = np.abs(kernel.taps) ** 2
    total = power.sum()
    if total == 0:
        return 0.0
    t = kernel.time_s
    mean = np.sum(power * t) / total
    return float(np.sqrt(np.sum(power * (t - mean) ** 2) / total))


def energy_within(kernel, duration_s):
    """Share of the pre-truncation energy within duration_s of the kernel onset."""
    if kernel.total_energy == 0:
        return 1.0
    n = int(math.floor(duration_s / kernel.ts + 1e-9)) + 1
    return float(np.sum(np.abs(kernel.taps[:n]) ** 2) / kernel.total_energy)


def echo_spacing(kernel, min_spacing_s=1e-6, floor_db=-60.0):
    """
    Echo spacing of a kernel from the dominant peak of its real cepstrum.

    Echoes spaced tau apart ripple the log-magnitude spectrum with period
    1/tau, which shows up as a cepstral peak at quefrency tau.

    Returns:
        float or None: Spacing in seconds, None when no peak lies past min_spacing_s
    """
    n_fft = 1 << (4 * kernel.taps.size - 1).bit_length()
    magnitude = np.abs(np.fft.fft(kernel.taps, n_fft))
    peak = magnitude.max()
    if peak == 0:
        return None
    floor = peak * 10 ** (floor_db / 20.0)
    cepstrum = np.abs(np.fft.ifft(np.log(np.maximum(magnitude, floor))).real)
    first = int(math.ceil(min_spacing_s / kernel.ts))
    last = n_fft // 2
    if first >= last:
        return None
    peaks, _ = find_peaks(cepstrum[first:last])
    if peaks.size == 0:
        return None
    best = peaks[np.argmax(cepstrum[first:last][peaks])]
    return float((best + first) * kernel.ts)
