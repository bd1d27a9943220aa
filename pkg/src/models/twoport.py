"""
Frequency-domain two-port networks: cable sections, lumped shunt/series
impedances and bridged taps described by their ABCD (transmission) matrices.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.utils.validation import (
    ComputationError,
    ValidationError,
    validate_nonnegative,
    validate_positive,
    validate_same_grid,
)

logger = logging.getLogger(__name__)

IMPEDANCE_KINDS = (
    "resistor", "capacitor", "inductor", "open", "short",
    "series_rlc", "parallel_rc", "table",
)


def _frozen(values):
    """Return a read-only complex copy of an array."""
    out = np.array(values, dtype=complex)
    out.setflags(write=False)
    return out


def _reciprocal(values):
    """Elementwise 1/x with 1/0 = inf and 1/inf = 0."""
    values = np.asarray(values, dtype=complex)
    out = np.full(values.shape, complex(np.inf, 0.0))
    finite = np.isfinite(values)
    out[~finite] = 0.0
    nonzero = finite & (values != 0)
    out[nonzero] = 1.0 / values[nonzero]
    return out


@dataclass(frozen=True)
class FrequencyGrid:
    """Single-sided uniform frequency grid with a DC bin at index 0."""

    n_points: int
    delta_f: float

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise ValidationError("Frequency grid needs at least 2 points")
        validate_positive(self.delta_f, "Frequency spacing")

    @classmethod
    def for_sampling(cls, ts, n_fft):
        """
        Build the grid whose bins are the non-negative DFT bins of an
        n_fft-point transform at sample interval ts.
        """
        validate_positive(ts, "Sample interval")
        if int(n_fft) != n_fft or n_fft < 2 or n_fft % 2:
            raise ValidationError("FFT size must be an even integer >= 2")
        return cls(n_points=int(n_fft) // 2 + 1, delta_f=1.0 / (n_fft * ts))

    @property
    def frequencies(self):
        """Bin frequencies k * delta_f in Hz, k = 0..n_points-1."""
        return np.arange(self.n_points) * self.delta_f

    @property
    def f_max(self):
        return (self.n_points - 1) * self.delta_f

    def fft_size(self, ts):
        """
        FFT size N = 1/(Ts * delta_f) implied by a sample interval.

        Raises:
            ValidationError: If N is not an integer or the grid reaches past
                the Nyquist frequency of ts
        """
        validate_positive(ts, "Sample interval")
        exact = 1.0 / (ts * self.delta_f)
        n_fft = int(round(exact))
        if abs(exact - n_fft) > 1e-6 * exact:
            raise ValidationError(
                f"Sample interval {ts} s is not commensurate with grid spacing "
                f"{self.delta_f} Hz"
            )
        if n_fft < 2 * (self.n_points - 1):
            raise ValidationError(
                f"Grid maximum {self.f_max} Hz exceeds the Nyquist frequency "
                f"{0.5 / ts} Hz of Ts={ts} s"
            )
        return n_fft


@dataclass(frozen=True)
class CableParams:
    """Per-unit-length primary parameters of a uniform two-wire line (per foot)."""

    r0: float
    l0: float
    g0: float
    c0: float
    skin_freq: float
    label: str = ""

    def __post_init__(self):
        validate_nonnegative(self.r0, "r0")
        validate_nonnegative(self.g0, "g0")
        validate_positive(self.l0, "l0")
        validate_positive(self.c0, "c0")
        validate_positive(self.skin_freq, "Skin-effect corner frequency")


def propagation_velocity(params):
    """Lossless propagation velocity 1/sqrt(l0*c0) in ft/s."""
    return 1.0 / np.sqrt(params.l0 * params.c0)


@dataclass(frozen=True, eq=False)
class ImpedanceSpec:
    """
    Lumped impedance description.

    Attributes:
        kind: One of IMPEDANCE_KINDS
        r_ohm: Resistance (resistor, series_rlc, parallel_rc)
        c_f: Capacitance (capacitor, series_rlc, parallel_rc)
        l_h: Inductance (inductor, series_rlc)
        table: Explicit complex impedance spectrum (table)
    """

    kind: str
    r_ohm: float = 0.0
    c_f: float = 0.0
    l_h: float = 0.0
    table: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in IMPEDANCE_KINDS:
            raise ValidationError(f"Unknown impedance kind '{self.kind}'")
        validate_nonnegative(self.r_ohm, "Resistance")
        validate_nonnegative(self.c_f, "Capacitance")
        validate_nonnegative(self.l_h, "Inductance")
        if self.kind == "capacitor":
            validate_positive(self.c_f, "Capacitance")
        if self.kind == "inductor":
            validate_positive(self.l_h, "Inductance")
        if self.kind == "parallel_rc":
            validate_positive(self.r_ohm, "Resistance")
        if self.kind == "table":
            if self.table is None:
                raise ValidationError("Table impedance needs an explicit spectrum")
            object.__setattr__(self, "table", _frozen(self.table))

    @classmethod
    def resistor(cls, r_ohm):
        """
        Frequency-flat resistance.

        Args:
            r_ohm: Resistance in ohm, >= 0

        Returns:
            ImpedanceSpec of kind resistor
        """
        return cls("resistor", r_ohm=r_ohm)

    def impedance(self, grid):
        """Complex impedance per bin; open evaluates to inf."""
        w = 2 * np.pi * grid.frequencies
        if self.kind == "resistor":
            return np.full(grid.n_points, complex(self.r_ohm))
        if self.kind == "open":
            return np.full(grid.n_points, complex(np.inf, 0.0))
        if self.kind == "short":
            return np.zeros(grid.n_points, dtype=complex)
        if self.kind == "inductor":
            return 1j * w * self.l_h
        if self.kind == "table":
            return self._table_on(grid)
        return _reciprocal(self.admittance(grid))

    def admittance(self, grid):
        """Complex admittance per bin; short evaluates to inf."""
        w = 2 * np.pi * grid.frequencies
        if self.kind == "capacitor":
            return 1j * w * self.c_f
        if self.kind == "parallel_rc":
            return 1.0 / self.r_ohm + 1j * w * self.c_f
        if self.kind == "open":
            return np.zeros(grid.n_points, dtype=complex)
        if self.kind == "series_rlc":
            z = self.r_ohm + 1j * w * self.l_h
            if self.c_f > 0:
                z = z + _reciprocal(1j * w * self.c_f)
            return _reciprocal(z)
        return _reciprocal(self.impedance(grid))

    def _table_on(self, grid):
        if self.table.shape != (grid.n_points,):
            raise ValidationError(
                f"Impedance table has {self.table.size} points, grid has {grid.n_points}"
            )
        return np.array(self.table)

    def describe(self):
        """
        Short label for element and log names.

        Returns:
            str: The resistance for resistors, the kind otherwise
        """
        if self.kind == "resistor":
            return f"{self.r_ohm:g} ohm"
        return self.kind


@dataclass(frozen=True, eq=False)
class TwoPortABCD:
    """
    ABCD spectra of one network element or of a cascade.

    Attributes:
        grid: Frequency grid shared by the four spectra
        a, b, c, d: Complex spectra of length grid.n_points
        advance_s: Largest anti-causal advance contained in the ABCD kernels
            (electrical length of the cable sections), in seconds
        label: Free-form description
    """

    grid: FrequencyGrid
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    advance_s: float = 0.0
    label: str = ""

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            values = _frozen(getattr(self, name))
            if values.shape != (self.grid.n_points,):
                raise ValidationError(
                    f"Spectrum {name.upper()} has shape {values.shape}, "
                    f"expected ({self.grid.n_points},)"
                )
            object.__setattr__(self, name, values)
        validate_nonnegative(self.advance_s, "Kernel advance")

    @classmethod
    def identity(cls, grid, label="identity"):
        """A = D = 1, B = C = 0 on every bin of grid."""
        ones = np.ones(grid.n_points, dtype=complex)
        zeros = np.zeros(grid.n_points, dtype=complex)
        return cls(grid, ones, zeros, zeros, ones, label=label)

    def matrices(self):
        """Per-bin 2x2 matrices, shape (n_points, 2, 2)."""
        return np.stack(
            [np.stack([self.a, self.b], axis=-1), np.stack([self.c, self.d], axis=-1)],
            axis=-2,
        )

    def determinant(self):
        """AD - BC per bin; one for reciprocal two-ports."""
        return self.a * self.d - self.b * self.c

    def is_reciprocal(self, rtol=1e-9):
        """
        Check AD - BC = 1 on every bin.

        Args:
            rtol: Tolerance relative to 1 + |AD|

        Returns:
            bool: True when every bin is within tolerance
        """
        det = self.determinant()
        return bool(np.all(np.abs(det - 1.0) <= rtol * (1.0 + np.abs(self.a * self.d))))

    def spectrum(self, name):
        """Spectrum of one entry by name: a, b, c or d."""
        return getattr(self, name)


@dataclass(frozen=True, eq=False)
class Termination:
    """Source and load impedance spectra; inf marks an open port."""

    grid: FrequencyGrid
    z_source: np.ndarray
    z_load: np.ndarray

    def __post_init__(self):
        for name in ("z_source", "z_load"):
            values = _frozen(getattr(self, name))
            if values.shape != (self.grid.n_points,):
                raise ValidationError(f"{name} does not match the frequency grid")
            finite = np.isfinite(values)
            if np.any(values[finite].real < 0):
                raise ValidationError(f"{name} must be passive (Re(z) >= 0)")
            object.__setattr__(self, name, values)

    @classmethod
    def from_specs(cls, source, load, grid):
        """
        Evaluate source and load impedance specs on a grid.

        Args:
            source: ImpedanceSpec of the source
            load: ImpedanceSpec of the load
            grid: FrequencyGrid

        Returns:
            Termination
        """
        return cls(grid, source.impedance(grid), load.impedance(grid))

    @classmethod
    def resistive(cls, r_source, r_load, grid):
        """Resistive ends; an infinite resistance becomes an open port."""
        return cls.from_specs(
            ImpedanceSpec.resistor(r_source) if np.isfinite(r_source) else ImpedanceSpec("open"),
            ImpedanceSpec.resistor(r_load) if np.isfinite(r_load) else ImpedanceSpec("open"),
            grid,
        )


def gamma_z0(params, grid):
    """
    Secondary line parameters from the RLGC model with skin-effect resistance.

    Args:
        params: CableParams
        grid: FrequencyGrid

    Returns:
        tuple: (gamma per foot, characteristic impedance in ohm)

    Raises:
        ComputationError: If the shunt admittance vanishes at a nonzero bin
    """
    f = grid.frequencies
    w = 2 * np.pi * f
    resistance = params.r0 * (1.0 + (f / params.skin_freq) ** 2) ** 0.25
    z_series = resistance + 1j * w * params.l0
    y_shunt = params.g0 + 1j * w * params.c0
    zero = np.flatnonzero(y_shunt[1:] == 0)
    if zero.size:
        raise ComputationError(
            f"Shunt admittance is zero at bin {zero[0] + 1}; z0 undefined",
            bin_index=int(zero[0] + 1),
        )

    gamma = np.sqrt(z_series * y_shunt)
    z0 = np.empty(grid.n_points, dtype=complex)
    z0[1:] = np.sqrt(z_series[1:] / y_shunt[1:])
    if y_shunt[0] == 0:
        # Zero-frequency limit: no propagation, impedance continued from bin 1
        gamma[0] = 0.0
        z0[0] = z0[1]
    else:
        z0[0] = np.sqrt(z_series[0] / y_shunt[0])
    return gamma, z0


def cable(params, length, grid):
    """
    ABCD spectra of a uniform cable section.

    Args:
        params: CableParams
        length: Section length in feet
        grid: FrequencyGrid

    Returns:
        TwoPortABCD: A = D = cosh(gl), B = Z0 sinh(gl), C = sinh(gl)/Z0

    Raises:
        ComputationError: If cosh overflows at some bin
    """
    validate_nonnegative(length, "Cable length")
    gamma, z0 = gamma_z0(params, grid)
    gl = gamma * length
    with np.errstate(over="ignore", invalid="ignore"):
        ch = np.cosh(gl)
        sh = np.sinh(gl)
    bad = np.flatnonzero(~(np.isfinite(ch) & np.isfinite(sh)))
    if bad.size:
        raise ComputationError(
            f"cosh(gamma*l) overflows at bin {bad[0]} "
            f"({bad[0] * grid.delta_f:g} Hz) for {length} ft of {params.label}",
            bin_index=int(bad[0]),
        )
    advance = length / propagation_velocity(params)
    return TwoPortABCD(
        grid, ch, z0 * sh, sh / z0, ch,
        advance_s=advance, label=f"cable {params.label} {length:g} ft",
    )


def shunt(z, grid):
    """
    ABCD spectra of a shunt impedance: A = D = 1, B = 0, C = 1/Z.

    Raises:
        ValidationError: For a short (infinite C)
        ComputationError: If 1/Z is infinite at some bin
    """
    if z.kind == "short":
        raise ValidationError("A shorted shunt element has infinite C and cannot be modelled")
    if z.kind == "open":
        return TwoPortABCD.identity(grid, label="shunt open")
    admittance = z.admittance(grid)
    bad = np.flatnonzero(~np.isfinite(admittance))
    if bad.size:
        raise ComputationError(
            f"Shunt admittance is infinite at bin {bad[0]}", bin_index=int(bad[0])
        )
    ones = np.ones(grid.n_points, dtype=complex)
    zeros = np.zeros(grid.n_points, dtype=complex)
    return TwoPortABCD(grid, ones, zeros, admittance, ones, label=f"shunt {z.describe()}")


def series(z, grid):
    """
    ABCD spectra of a series impedance: A = D = 1, B = Z, C = 0.

    Raises:
        ValidationError: For an open (infinite B)
        ComputationError: If Z is infinite at some bin
    """
    if z.kind == "open":
        raise ValidationError("An open series element has infinite B and cannot be modelled")
    if z.kind == "short":
        return TwoPortABCD.identity(grid, label="series short")
    impedance = z.impedance(grid)
    bad = np.flatnonzero(~np.isfinite(impedance))
    if bad.size:
        raise ComputationError(
            f"Series impedance is infinite at bin {bad[0]}", bin_index=int(bad[0])
        )
    ones = np.ones(grid.n_points, dtype=complex)
    zeros = np.zeros(grid.n_points, dtype=complex)
    return TwoPortABCD(grid, ones, impedance, zeros, ones, label=f"series {z.describe()}")


def input_admittance(tp, z_term):
    """
    Admittance looking into port 1 of tp when port 2 is terminated on z_term,
    (C*Zt + D)/(A*Zt + B).

    Raises:
        ComputationError: If the input impedance is zero at some bin
    """
    zt = z_term.impedance(tp.grid)
    y = np.empty(tp.grid.n_points, dtype=complex)
    open_bins = ~np.isfinite(zt)
    with np.errstate(divide="ignore", invalid="ignore"):
        y[open_bins] = tp.c[open_bins] / tp.a[open_bins]
        closed = ~open_bins
        num = tp.c[closed] * zt[closed] + tp.d[closed]
        den = tp.a[closed] * zt[closed] + tp.b[closed]
        y[closed] = num / den
    bad = np.flatnonzero(~np.isfinite(y))
    if bad.size:
        raise ComputationError(
            f"Input impedance is zero at bin {bad[0]}", bin_index=int(bad[0])
        )
    return y


def input_impedance(tp, z_term):
    """Input impedance (A*Zt + B)/(C*Zt + D) of a terminated two-port."""
    return _reciprocal(input_admittance(tp, z_term))


def bridged_tap(params, length, z_term, grid):
    """
    Shunt two-port of a cable stub of the given length terminated on z_term.

    Returns:
        TwoPortABCD: shunt form with C = 1/Z_in
    """
    validate_nonnegative(length, "Tap length")
    stub = cable(params, length, grid)
    y_in = input_admittance(stub, z_term)
    ones = np.ones(grid.n_points, dtype=complex)
    zeros = np.zeros(grid.n_points, dtype=complex)
    return TwoPortABCD(
        grid, ones, zeros, y_in, ones,
        label=f"bridged tap {params.label} {length:g} ft on {z_term.describe()}",
    )


def chain_fd(elements):
    """
    Chain rule: per-bin product of ABCD matrices in network order.

    Args:
        elements: Sequence of TwoPortABCD, source side first

    Returns:
        TwoPortABCD of the cascade
    """
    elements = list(elements)
    if not elements:
        raise ValidationError("Chain rule needs at least one element")
    grid = validate_same_grid(*(e.grid for e in elements))
    if len(elements) == 1:
        return elements[0]
    product = elements[0].matrices()
    for element in elements[1:]:
        product = np.matmul(product, element.matrices())
    return TwoPortABCD(
        grid,
        product[:, 0, 0], product[:, 0, 1], product[:, 1, 0], product[:, 1, 1],
        advance_s=sum(e.advance_s for e in elements),
        label=" -> ".join(e.label for e in elements),
    )


def transfer_function(tp, term):
    """
    Voltage transfer function H = zL / (A zL + B + C zL zs + D zs).

    An infinite load evaluates the open-load limit 1/(A + C zs).

    Raises:
        ComputationError: If the denominator vanishes at some bin
    """
    validate_same_grid(tp.grid, term.grid)
    zs = term.z_source
    zl = term.z_load
    h = np.zeros(tp.grid.n_points, dtype=complex)
    open_load = ~np.isfinite(zl)
    open_source = ~np.isfinite(zs)

    # finite load and source
    both = ~open_load & ~open_source
    a, b, c, d = tp.a[both], tp.b[both], tp.c[both], tp.d[both]
    den = a * zl[both] + b + c * zl[both] * zs[both] + d * zs[both]
    _check_denominator(den, np.flatnonzero(both))
    h[both] = zl[both] / den

    # open load, finite source
    mask = open_load & ~open_source
    den = tp.a[mask] + tp.c[mask] * zs[mask]
    _check_denominator(den, np.flatnonzero(mask))
    h[mask] = 1.0 / den
    # an open source drives no current: H stays 0
    return h


def _check_denominator(den, bins):
    zero = np.flatnonzero(den == 0)
    if zero.size:
        raise ComputationError(
            f"Transfer function denominator is zero at bin {bins[zero[0]]}",
            bin_index=int(bins[zero[0]]),
        )


def backward(tp):
    """
    Backward transmission matrix T_b = T_f^-1 per bin.

    Raises:
        ComputationError: If some bin is singular
    """
    det = tp.determinant()
    singular = np.flatnonzero(det == 0)
    if singular.size:
        raise ComputationError(
            f"Transmission matrix is singular at bin {singular[0]}",
            bin_index=int(singular[0]),
        )
    return TwoPortABCD(
        tp.grid, tp.d / det, -tp.b / det, -tp.c / det, tp.a / det,
        advance_s=tp.advance_s, label=f"backward({tp.label})",
    )


