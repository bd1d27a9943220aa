"""
Linear periodically time-varying (LPTV) channels in Zadeh harmonic form.

h(t, tau) = sum_m h_m(tau) exp(j 2 pi m f0 t): a bank of LTI harmonic
responses whose outputs are modulated by the harmonics of the mains
frequency f0.
"""
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np
from scipy.linalg import eigh, qr, solve_triangular

from src.models.kernels import DtKernel, common_delay, fd_to_kernel, synthesize_taps
from src.models.lifting import LiftedPair, least_squares, lift_lti
from src.models.twoport import ImpedanceSpec
from src.utils.validation import (
    ComputationError,
    ValidationError,
    validate_block_size,
    validate_positive,
)

logger = logging.getLogger(__name__)

TV_MODELS = ("two_state", "cosine", "piecewise")
PLACEMENTS = ("shunt", "series")


def _phase(m, f0, ts, k):
    """exp(j 2 pi m f0 k Ts) with the argument reduced modulo one turn."""
    turns = np.mod(m * f0 * ts * np.asarray(k, dtype=float), 1.0)
    return np.exp(2j * np.pi * turns)


@dataclass(frozen=True, eq=False)
class LpTvKernel:
    """
    Harmonic impulse responses h_m[l], m in [-M, M].

    Attributes:
        harmonics: Map m -> DtKernel
        f0: Fundamental frequency in Hz
        ts: Sample interval in seconds
    """

    harmonics: Dict[int, DtKernel]
    f0: float
    ts: float

    def __post_init__(self):
        validate_positive(self.f0, "Fundamental frequency")
        validate_positive(self.ts, "Sample interval")
        if 0 not in self.harmonics:
            raise ValidationError("Harmonic set must contain m = 0")
        for m, kernel in self.harmonics.items():
            if not math.isclose(kernel.ts, self.ts, rel_tol=1e-12):
                raise ValidationError(f"Harmonic {m} has a different sample interval")
        object.__setattr__(self, "harmonics", dict(sorted(self.harmonics.items())))

    @classmethod
    def from_taps(cls, taps, f0, ts):
        """Build from a map m -> tap vector."""
        return cls({m: DtKernel(np.asarray(t), ts) for m, t in taps.items()}, f0, ts)

    @property
    def order(self):
        return max(abs(m) for m in self.harmonics)

    @property
    def memory(self):
        return max(k.memory for k in self.harmonics.values())

    @property
    def period_s(self):
        return 1.0 / self.f0

    def taps(self, m):
        """
        Taps of harmonic m, zero-padded to the kernel memory.

        Args:
            m: Harmonic index; absent harmonics give zeros

        Returns:
            np.ndarray: Complex vector of length L+1
        """
        kernel = self.harmonics.get(m)
        if kernel is None:
            return np.zeros(self.memory + 1, dtype=complex)
        out = np.zeros(self.memory + 1, dtype=complex)
        out[: kernel.taps.size] = kernel.taps
        return out

    def tap_matrix(self):
        """Taps as a (2M+1, L+1) array ordered m = -M..M."""
        return np.array([self.taps(m) for m in range(-self.order, self.order + 1)])

    def truncated_order(self, order):
        """Kernel keeping the harmonics with |m| <= order."""
        return LpTvKernel(
            {m: k for m, k in self.harmonics.items() if abs(m) <= order}, self.f0, self.ts
        )

    def is_conjugate_paired(self, atol=1e-12):
        """True when h_{-m} = conj(h_m) for every m, i.e. the kernel maps real to real."""
        return all(
            np.allclose(self.taps(-m), np.conj(self.taps(m)), atol=atol)
            for m in self.harmonics
        )


@dataclass(frozen=True, eq=False)
class TvKernel:
    """
    Explicit time-indexed taps h[k, l], shape (K, L+1).

    When periodic, row k mod K serves every time index k.
    """

    taps: np.ndarray
    ts: float = 1.0
    periodic: bool = True

    def __post_init__(self):
        taps = np.atleast_2d(np.array(self.taps))
        if taps.ndim != 2:
            raise ValidationError("TV taps must be a (K, L+1) array")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @property
    def memory(self):
        return self.taps.shape[1] - 1

    @property
    def period(self):
        return self.taps.shape[0] if self.periodic else None

    def taps_at(self, k):
        """
        Taps h[k, :] at time index k.

        Raises:
            ValidationError: If a non-periodic kernel has no row k
        """
        if self.periodic:
            return self.taps[k % self.taps.shape[0]]
        if not 0 <= k < self.taps.shape[0]:
            raise ValidationError(f"Time index {k} outside the kernel's {self.taps.shape[0]} rows")
        return self.taps[k]

    @classmethod
    def from_lti(cls, kernel):
        """One-row periodic kernel of a DtKernel."""
        return cls(np.asarray(kernel.taps)[None, :], kernel.ts)

    @classmethod
    def from_lptv(cls, kernel):
        """Rows h[k, l] = sum_m h_m[l] exp(j 2 pi m f0 k Ts) over one period."""
        period = 1.0 / (kernel.f0 * kernel.ts)
        rows = int(round(period))
        if abs(period - rows) > 1e-9 * period:
            raise ValidationError("T0/Ts must be an integer to tabulate an LPTV kernel")
        k = np.arange(rows)
        taps = sum(
            np.outer(_phase(m, kernel.f0, kernel.ts, k), kernel.taps(m))
            for m in kernel.harmonics
        )
        return cls(taps, kernel.ts)

    def apply(self, x):
        """y[k] = sum_l h[k, l] x[k - l] for k = 0..len(x)-1 (at rest before)."""
        x = np.asarray(x)
        y = np.zeros(x.size, dtype=np.result_type(x, self.taps))
        for k in range(x.size):
            row = self.taps_at(k)
            n = min(row.size, k + 1)
            y[k] = np.dot(row[:n], x[k::-1][:n])
        return y


def compose_tv(first, second):
    """
    Kernel of 'second applied after first':
    h[k, l] = sum_j h2[k, j] h1[k - j, l - j].
    """
    if not (first.periodic and second.periodic):
        raise ValidationError("compose_tv needs periodic kernels")
    k1, k2 = first.taps.shape[0], second.taps.shape[0]
    period = k1 * k2 // math.gcd(k1, k2)
    l1, l2 = first.memory, second.memory
    out = np.zeros((period, l1 + l2 + 1), dtype=np.result_type(first.taps, second.taps))
    for k in range(period):
        h2 = second.taps_at(k)
        for j in range(l2 + 1):
            if h2[j] == 0:
                continue
            out[k, j: j + l1 + 1] += h2[j] * first.taps_at(k - j)
    return TvKernel(out, first.ts)


@dataclass(frozen=True, eq=False)
class TvImpedance:
    """
    Periodically switching or modulated load Z(t, f), period 1/f0.

    Attributes:
        model: two_state, cosine or piecewise
        placement: shunt or series
        f0: Fundamental frequency in Hz
        states: Impedances per sub-interval (two_state: two states; piecewise:
            equal sub-intervals of the period)
        duty: Share of the period spent in the first state (two_state)
        r_dc, r_ac, phase: R(t) = r_dc + r_ac cos(2 pi f0 t + phase) (cosine)
    """

    model: str
    placement: str
    f0: float
    states: Tuple[ImpedanceSpec, ...] = ()
    duty: float = 0.5
    r_dc: float = 0.0
    r_ac: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if self.model not in TV_MODELS:
            raise ValidationError(f"Unknown TV impedance model '{self.model}'")
        if self.placement not in PLACEMENTS:
            raise ValidationError(f"Unknown placement '{self.placement}'")
        validate_positive(self.f0, "Fundamental frequency")
        object.__setattr__(self, "states", tuple(self.states))
        if self.model == "two_state":
            if len(self.states) != 2:
                raise ValidationError("A two-state load needs exactly two states")
            if not 0 < self.duty < 1:
                raise ValidationError("Duty cycle must lie strictly between 0 and 1")
        if self.model == "piecewise" and not self.states:
            raise ValidationError("A piecewise load needs at least one state")
        if self.model == "cosine":
            if self.r_dc < abs(self.r_ac):
                raise ValidationError("Cosine load is not passive: r_dc < |r_ac|")
            if self.placement == "shunt" and self.r_dc == abs(self.r_ac):
                raise ValidationError("Cosine shunt load reaches zero ohm")
        for state in self.states:
            if self.placement == "shunt" and state.kind == "short":
                raise ValidationError("Shunt load state cannot be a short")
            if self.placement == "series" and state.kind == "open":
                raise ValidationError("Series load state cannot be open")

    @classmethod
    def two_state(cls, placement, f0, r1, r2, duty=0.5):
        """Resistance r1 for the first duty share of each period, r2 for the rest."""
        return cls("two_state", placement, f0,
                   (ImpedanceSpec.resistor(r1), ImpedanceSpec.resistor(r2)), duty)

    @classmethod
    def cosine(cls, placement, f0, r_dc, r_ac, phase=0.0):
        """Resistance r_dc + r_ac cos(2 pi f0 t + phase)."""
        return cls("cosine", placement, f0, r_dc=r_dc, r_ac=r_ac, phase=phase)

    def _boundaries(self):
        if self.model == "two_state":
            return np.array([0.0, self.duty, 1.0])
        return np.linspace(0.0, 1.0, len(self.states) + 1)

    def _state_values(self, state, grid):
        if self.placement == "shunt":
            values = state.admittance(grid)
        else:
            values = state.impedance(grid)
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            what = "1/Z" if self.placement == "shunt" else "Z"
            raise ComputationError(
                f"{what} of the time-varying load is singular at bin {bad[0]}",
                bin_index=int(bad[0]),
            )
        return values

    def coefficients(self, grid, order):
        """
        Fourier coefficients over one period of Z(t, f) (series) or 1/Z(t, f)
        (shunt), for m = -order..order.

        Returns:
            dict: m -> complex spectrum on grid
        """
        if order < 0:
            raise ValidationError("Harmonic order must not be negative")
        if self.model == "cosine":
            return self._sampled_coefficients(grid, order)

        edges = self._boundaries()
        values = [self._state_values(s, grid) for s in self.states]
        out = {}
        for m in range(-order, order + 1):
            if m == 0:
                weights = np.diff(edges)
            else:
                e = np.exp(-2j * np.pi * m * edges)
                weights = (e[:-1] - e[1:]) / (2j * np.pi * m)
            out[m] = sum(w * v for w, v in zip(weights, values))
        return out

    def _sampled_coefficients(self, grid, order):
        q = max(64, 8 * (2 * order + 1))
        t = np.arange(q) / q
        r = self.r_dc + self.r_ac * np.cos(2 * np.pi * t + self.phase)
        if self.placement == "shunt":
            if np.any(r == 0):
                raise ComputationError("Cosine shunt load reaches zero ohm")
            samples = 1.0 / r
        else:
            samples = r
        spectrum = np.fft.fft(samples) / q
        ones = np.ones(grid.n_points, dtype=complex)
        return {m: spectrum[m % q] * ones for m in range(-order, order + 1)}


class ZadehBlockOperators:
    """Diagonal modulation matrices Omega_m with entries exp(j 2 pi m f0 k Ts)."""

    def __init__(self, p, ts, f0):
        self.p = int(p)
        self.ts = ts
        self.f0 = f0

    def phases(self, m, start_sample=0):
        """
        Diagonal of Omega_m for the block starting at start_sample.

        Args:
            m: Harmonic index
            start_sample: Absolute index of the block's first sample

        Returns:
            np.ndarray: P complex phases
        """
        return _phase(m, self.f0, self.ts, start_sample + np.arange(self.p))

    def omega(self, m):
        return np.diag(self.phases(m))


def harmonic_responses(z, grid, filters, order, energy_threshold=0.9999, delay_samples=None,
                       minimum_delay=0):
    """
    Harmonic kernels b_m (series placement) or c_m (shunt placement).

    The negative-frequency side of harmonic m is conj(Z_{-m}(f)), so the set
    satisfies h_{-m} = conj(h_m). Every harmonic carries one common alignment
    shift, the smallest that meets the precursor budget of all of them unless
    delay_samples fixes it.

    Returns:
        LpTvKernel
    """
    coefficients = z.coefficients(grid, order)
    negatives = {m: np.conj(coefficients[-m]) for m in range(-order, order + 1)}
    if delay_samples is None:
        raws = [synthesize_taps(coefficients[m], grid, filters, negatives[m]) for m in negatives]
        delay_samples = common_delay(raws, energy_threshold, minimum_delay)
    harmonics = {
        m: fd_to_kernel(coefficients[m], grid, filters, energy_threshold,
                        negative=negatives[m], delay_samples=delay_samples)
        for m in negatives
    }
    logger.info(
        f"{z.placement} {z.model} load: {2 * order + 1} harmonics, "
        f"memory {max(k.memory for k in harmonics.values())}, delay {delay_samples}"
    )
    return LpTvKernel(harmonics, z.f0, filters.ts)


def zadeh_apply(kernel, x, p, start_sample=0):
    """
    Filterbank output y[k] = sum_m exp(j 2 pi m f0 k Ts) (h_m * x)[k],
    evaluated blockwise with the lifted harmonic matrices.

    Args:
        kernel: LpTvKernel
        x: Input samples (at rest before the first one)
        p: Block size, P > L
        start_sample: Absolute time index of x[0]

    Returns:
        np.ndarray: Complex output of the same length as x
    """
    validate_block_size(p, kernel.memory)
    x = np.asarray(x)
    n_blocks = max(1, -(-x.size // p))
    padded = np.zeros(n_blocks * p, dtype=complex)
    padded[: x.size] = x
    blocks = padded.reshape(n_blocks, p)
    operators = ZadehBlockOperators(p, kernel.ts, kernel.f0)

    y = np.zeros_like(blocks)
    previous = np.zeros(p, dtype=complex)
    pairs = {m: lift_lti(DtKernel(kernel.taps(m), kernel.ts), p) for m in kernel.harmonics}
    for i, block in enumerate(blocks):
        for m in kernel.harmonics:
            pair = pairs[m]
            branch = pair.h0 @ block + pair.h1 @ previous
            y[i] += operators.phases(m, start_sample + i * p) * branch
        previous = block
    return y.reshape(-1)[: x.size]


def lifted_lptv(kernel, p, i):
    """
    H_{i,l}[k, n] = sum_m h_m[lP + k - n] exp(j 2 pi m f0 (iP + k) Ts).
    """
    validate_block_size(p, kernel.memory)
    operators = ZadehBlockOperators(p, kernel.ts, kernel.f0)
    h0 = np.zeros((p, p), dtype=complex)
    h1 = np.zeros((p, p), dtype=complex)
    for m in kernel.harmonics:
        pair = lift_lti(DtKernel(kernel.taps(m), kernel.ts), p)
        phases = operators.phases(m, i * p)[:, None]
        h0 += phases * pair.h0
        h1 += phases * pair.h1
    return LiftedPair(h0, h1, p, kernel.memory, i)


def block_period(p, ts, f0, max_denominator=10 ** 9):
    """
    Smallest N0 with N0 * P * Ts * f0 an integer.

    Raises:
        ValidationError: If P * Ts * f0 is not rational within the denominator bound
    """
    ratio = p * ts * f0
    approx = Fraction(ratio).limit_denominator(max_denominator)
    if abs(float(approx) - ratio) > 1e-9 * max(ratio, 1.0):
        raise ValidationError(f"P*Ts*f0 = {ratio} has no exact block period")
    return approx.denominator


def commensurate_ts(ts, f0, tolerance=1e-3):
    """
    Nearest Ts making T0/Ts an integer.

    Raises:
        ValidationError: If the adjustment exceeds the relative tolerance
    """
    validate_positive(ts, "Sample interval")
    validate_positive(f0, "Fundamental frequency")
    n = max(1, int(round(1.0 / (f0 * ts))))
    adjusted = 1.0 / (f0 * n)
    change = abs(adjusted - ts) / ts
    if change > tolerance:
        raise ValidationError(
            f"Ts={ts} needs a {change:.2%} change to fit {n} samples per period"
        )
    if change > 0:
        logger.warning(f"Sample interval adjusted from {ts} s to {adjusted} s ({n} per period)")
    return adjusted


def truncation_error(full, order):
    """Energy of the harmonics with |m| > order."""
    if order < 0:
        raise ValidationError("Harmonic order must not be negative")
    return max(0.0, total_energy(full) - total_energy(full.truncated_order(order)))


def total_energy(kernel):
    """Tap energy summed over every harmonic of an LpTvKernel."""
    return float(sum(np.sum(np.abs(k.taps) ** 2) for k in kernel.harmonics.values()))


def feasible_order(p, memory):
    """Largest harmonic order the estimator can separate: floor((P/L - 1)/2)."""
    return max(0, int((p / max(memory, 1) - 1) // 2))


def default_harmonic_order(full, relative_error=1e-4, cap=None):
    """
    Smallest M with E^(M)/E_total <= relative_error.

    Args:
        full: LpTvKernel holding every harmonic that may matter
        relative_error: Allowed share of neglected harmonic energy
        cap: Upper bound on M (the kernel's own order when None)

    Returns:
        int: Harmonic order
    """
    cap = full.order if cap is None else cap
    total = total_energy(full)
    for order in range(cap + 1):
        if total == 0 or truncation_error(full, order) <= relative_error * total:
            return order
    logger.warning(f"Harmonic order capped at {cap}")
    return cap


def doppler_profile(kernel, p, n_blocks):
    """
    Power of the DFT of H_{i,0} across i = 0..n_blocks-1.

    Returns:
        tuple: (Doppler frequencies in Hz, power per Doppler bin)
    """
    stack = np.array([lifted_lptv(kernel, p, i).h0 for i in range(n_blocks)])
    spectrum = np.fft.fft(stack, axis=0)
    power = np.sum(np.abs(spectrum) ** 2, axis=(1, 2))
    freqs = np.fft.fftfreq(n_blocks, p * kernel.ts)
    return freqs, power


class HarmonicEstimate(NamedTuple):
    harmonics: Dict[int, np.ndarray]
    residual_mse: float
    noise_floor_mse: Optional[float]
    condition: float
    n_blocks: int

    def to_kernel(self, f0, ts):
        """LpTvKernel of the estimated harmonics."""
        return LpTvKernel.from_taps(self.harmonics, f0, ts)


def regressor(payload, p, taps):
    """
    P x L Toeplitz regressor: first column (payload, zeros), first row
    (payload[0], 0, ..., 0).
    """
    column = np.zeros(p, dtype=complex)
    column[: payload.size] = payload
    k = np.arange(p)[:, None] - np.arange(taps)[None, :]
    return np.where(k >= 0, column[np.clip(k, 0, p - 1)], 0)


def noise_whitener(noise_cov, p, rtol=1e-12):
    """
    Whitening map of a noise covariance from its eigendecomposition.

    Eigenvalues below rtol times the largest are treated as zero, so a
    singular covariance whitens onto its range (pseudo-inverse square root).

    Args:
        noise_cov: P x P Hermitian positive semi-definite covariance
        p: Block size P
        rtol: Relative eigenvalue floor

    Returns:
        np.ndarray: r x P matrix W with W R W^H = I, r the numerical rank

    Raises:
        ValidationError: If the covariance is not P x P, not Hermitian or has
            a clearly negative eigenvalue
        ComputationError: If the covariance is numerically zero
    """
    noise_cov = np.asarray(noise_cov)
    if noise_cov.shape != (p, p):
        raise ValidationError("Noise covariance must be P x P")
    scale = float(np.max(np.abs(noise_cov))) if noise_cov.size else 0.0
    if not np.allclose(noise_cov, noise_cov.conj().T, rtol=0.0, atol=1e-12 * max(scale, 1e-300)):
        raise ValidationError("Noise covariance must be Hermitian")
    w, v = eigh(noise_cov)
    top = float(w[-1]) if w.size else 0.0
    if top <= 0.0:
        raise ComputationError("Noise covariance is numerically zero", condition=float("inf"))
    if w[0] < -1e-9 * top:
        raise ValidationError(
            f"Noise covariance is not positive semi-definite (eigenvalue {w[0]:.3e})"
        )
    keep = w > rtol * top
    if not keep.all():
        logger.warning(
            f"Noise covariance has rank {int(keep.sum())} of {p}; whitening onto its range"
        )
    return (v[:, keep] / np.sqrt(w[keep])).conj().T


def estimate_harmonics(payloads, outputs, f0, order, taps, ts, noise_cov=None,
                       first_block=0):
    """
    Least-squares estimate of the harmonic responses from trailing-zeros blocks.

    Args:
        payloads: Sequence of trailing-zeros payloads, (P-L)-vectors (up to P-L+1
            samples, so that the convolution still fits the block)
        outputs: Sequence of observed P-vectors
        f0: Fundamental frequency in Hz
        order: Harmonic order M
        taps: Taps per harmonic L
        ts: Sample interval in seconds
        noise_cov: Optional P x P noise covariance; whitened least squares when given
        first_block: Block index of the first pair (sets the absolute time origin)

    Returns:
        HarmonicEstimate

    Raises:
        ValidationError: If P < (2M+1)L or the block lists disagree
        ComputationError: If the stacked regressor is rank deficient
    """
    outputs = np.atleast_2d(np.asarray(outputs, dtype=complex))
    payloads = [np.asarray(v, dtype=complex) for v in payloads]
    if len(payloads) != outputs.shape[0] or not payloads:
        raise ValidationError("Need matching, non-empty input and output block lists")
    p = outputs.shape[1]
    n_cols = (2 * order + 1) * taps
    if p < n_cols:
        raise ValidationError(
            f"Block size P={p} is below (2M+1)L={n_cols}; the estimate is not unique"
        )
    for v in payloads:
        if not 0 < v.size <= p - taps + 1:
            raise ValidationError(f"Payloads must hold at most P-L+1={p - taps + 1} samples")

    whitener = None if noise_cov is None else noise_whitener(noise_cov, p)

    operators = ZadehBlockOperators(p, ts, f0)
    rows, rhs = [], []
    for i, (payload, out) in enumerate(zip(payloads, outputs)):
        phi = regressor(payload, p, taps)
        start = (first_block + i) * p
        psi = np.hstack([operators.phases(m, start)[:, None] * phi
                         for m in range(-order, order + 1)])
        if whitener is not None:
            psi = whitener @ psi
            out = whitener @ out
        rows.append(psi)
        rhs.append(out)
    psi = np.vstack(rows)
    y = np.concatenate(rhs)

    h, condition, residual = least_squares(
        psi, y, "Stacked harmonic regressor (add blocks or use richer excitation)"
    )
    noise_floor = None
    if whitener is not None:
        r = qr(psi, mode="r")[0][:n_cols]
        r_inv = solve_triangular(r, np.eye(n_cols))
        noise_floor = float(np.sum(np.abs(r_inv) ** 2))

    harmonics = {m: h[(m + order) * taps:(m + order + 1) * taps]
                 for m in range(-order, order + 1)}
    logger.info(
        f"Estimated {2 * order + 1} harmonics x {taps} taps from {len(payloads)} blocks "
        f"(condition {condition:.3e})"
    )
    return HarmonicEstimate(harmonics, residual ** 2 / y.size, noise_floor, condition,
                            len(payloads))
