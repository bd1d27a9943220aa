"""
Assembly of a terminated link from a topology document: the frequency-domain
element chain, per-element DT kernels and their lifted two-ports, and the
LinkModel consumed by the simulators.

Every frequency-dependent element carries the whole pulse-shaping filter, so
a cascade of N such elements reproduces the link shaped by the N-th power of
the filter, which is still flat over the filter passband. Memoryless elements
(resistive loads, constant admittances) are lifted exactly as scaled
identities.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache, partial
from typing import Dict, List, NamedTuple, Optional

import numpy as np

from src.models.chainrule import LiftedTwoPort
from src.models.kernels import (
    MAX_FFT_SIZE,
    TAIL_LIMIT,
    AbcdKernels,
    DtKernel,
    FilterPair,
    advance_samples,
    choose_fft_size,
    common_delay,
    fd_to_kernel,
    synthesize_taps,
)
from src.models.lifting import LiftedPair, default_block_size, lift_lti
from src.models.lptv import (
    LpTvKernel,
    block_period,
    commensurate_ts,
    default_harmonic_order,
    harmonic_responses,
    lifted_lptv,
)
from src.models.simulate import LinkModel, fd_reference
from src.models.twoport import (
    FrequencyGrid,
    TwoPortABCD,
    Termination,
    bridged_tap,
    cable,
    chain_fd,
    gamma_z0,
    propagation_velocity,
    series,
    shunt,
    transfer_function,
)
from src.utils.validation import ValidationError

logger = logging.getLogger(__name__)

FLAT_TOLERANCE = 1e-12
MAX_HARMONIC_ORDER = 32
HARMONIC_RELATIVE_ERROR = 1e-4
# Factor on sqrt(n_filtered * (1 - threshold)) bounding relative errors from truncation
TRUNCATION_FACTOR = 3.0


@dataclass(frozen=True, eq=False)
class ElementModel:
    """
    One network element in both domains.

    Attributes:
        record: Topology element record
        two_port: Frequency-domain ABCD spectra (m = 0 average when time-varying)
        kernels: ABCD kernels of an LTI element
        harmonics: Harmonic kernels of the varying entry (c for shunt, b for series)
        exact: Memoryless element lifted without filtering
        delay_samples: Alignment shift carried by the element's kernels
        memory: Common memory of the element's kernels
        edge_level: Largest half-span level among the synthesized kernels
    """

    record: object
    two_port: TwoPortABCD
    kernels: Optional[AbcdKernels]
    harmonics: Optional[LpTvKernel]
    exact: bool
    delay_samples: int
    memory: int
    edge_level: float = 0.0

    def aligned_kernels(self):
        """ABCD kernels cut to the element memory."""
        return AbcdKernels(*(k.truncated(self.memory) for k in self.kernels))

    def lifted(self, p):
        """Callable i -> LiftedTwoPort; an LTI element is lifted once, on first use."""
        if self.harmonics is None:
            lift = lru_cache(maxsize=1)(
                partial(LiftedTwoPort.from_kernels, self.kernels, p, self.memory))
            return lambda i: lift()

        placement = self.record.placement
        if self.exact:
            build = LiftedTwoPort.shunt if placement == "shunt" else LiftedTwoPort.series
            return lambda i: build(lifted_lptv(self.harmonics, p, i))

        through = lift_lti(self.kernels.a.truncated(self.memory), p)
        zero = LiftedPair(np.zeros((p, p)), np.zeros((p, p)), p, self.memory)
        varying = self.harmonics

        def at(i):
            pair = lifted_lptv(varying, p, i)
            pair = LiftedPair(pair.h0, pair.h1, p, self.memory, i)
            pairs = {"a": through, "d": through, "b": zero, "c": zero}
            pairs["c" if placement == "shunt" else "b"] = pair
            return LiftedTwoPort.from_pairs(pairs, self.memory, i)

        return at


@dataclass(frozen=True, eq=False)
class Link:
    """
    A built link.

    Attributes:
        doc: Source TopologyDoc
        filters: Link filter pair
        reference_filters: Filter pair the lifted simulation reproduces
            (the link filters to the power of the filtered-element count, or a
            transparent pair for memoryless links)
        grid: Baseband frequency grid
        elements: ElementModel per element
        term: Frequency-domain termination
        spectrum: Baseband transfer function (m = 0 average when time-varying)
        channel: End-to-end kernel aligned like the lifted simulation output
        model: LinkModel
        threshold: Energy threshold used for every kernel
        f0: Mains frequency of time-varying links
    """

    doc: object
    filters: FilterPair
    reference_filters: FilterPair
    grid: FrequencyGrid
    elements: List[ElementModel]
    term: Termination
    spectrum: np.ndarray
    channel: DtKernel
    model: LinkModel
    threshold: float
    spectra: "_Spectra"
    f0: Optional[float] = None

    @property
    def time_varying(self):
        return self.doc.time_varying

    @property
    def ts(self):
        return self.filters.ts

    def fd_reference(self):
        """Frequency-domain reference H(f) of the terminated cascade."""
        return fd_reference([e.two_port for e in self.elements], self.term, self.time_varying)

    def harmonic_kernels(self) -> Dict[int, LpTvKernel]:
        """
        Harmonic kernels of the switching elements.

        Returns:
            dict: Element index -> LpTvKernel, empty for an LTI link
        """
        return {k: e.harmonics for k, e in enumerate(self.elements) if e.harmonics is not None}

    @property
    def n_filtered(self):
        """Elements whose kernels were synthesized and truncated."""
        return sum(not e.exact for e in self.elements)

    @property
    def truncation_bound(self):
        """
        Relative error that kernel truncation may leave in any cross-model
        comparison; zero for links with no filtered element.
        """
        return TRUNCATION_FACTOR * float(np.sqrt(self.n_filtered * (1.0 - self.threshold)))

    @property
    def carrier_hz(self):
        return self.spectra.shift * self.grid.delta_f

    def kernel(self, spectrum, filters=None, delay_samples=None):
        """Kernel of a spectrum on the evaluation grid, shifted to baseband."""
        return self.spectra.kernel(spectrum, filters or self.filters, delay_samples)


class _Spectra:
    """Evaluation grid and kernel synthesis, with an optional carrier shift."""

    def __init__(self, grid, carrier_hz, threshold):
        self.grid = grid
        self.threshold = threshold
        shift = carrier_hz / grid.delta_f
        self.shift = int(round(shift))
        if abs(shift - self.shift) > 1e-6:
            logger.warning(
                f"Carrier {carrier_hz} Hz moved to the nearest grid bin "
                f"{self.shift * grid.delta_f} Hz"
            )
        self.eval_grid = FrequencyGrid(grid.n_points + self.shift, grid.delta_f)

    @property
    def complex(self):
        return self.shift > 0

    def baseband(self, spectrum):
        """(positive, negative) sides of S(f + f_c) on the output grid."""
        spectrum = np.asarray(spectrum, dtype=complex)
        if not self.complex:
            return spectrum, None
        k = np.arange(self.grid.n_points)
        positive = spectrum[self.shift + k]
        idx = self.shift - k
        negative = np.where(idx >= 0, spectrum[np.abs(idx)], np.conj(spectrum[np.abs(idx)]))
        return positive, negative

    def delay(self, spectra, filters, minimum=0):
        """Common alignment shift of a set of spectra."""
        raws = []
        for spectrum in spectra:
            positive, negative = self.baseband(spectrum)
            raws.append(synthesize_taps(positive, self.grid, filters, negative))
        return common_delay(raws, self.threshold, minimum)

    def kernel(self, spectrum, filters, delay_samples=None):
        """Truncated kernel of a spectrum, shifted to baseband when a carrier is set."""
        positive, negative = self.baseband(spectrum)
        return fd_to_kernel(
            positive, self.grid, filters, self.threshold,
            negative=negative, delay_samples=delay_samples,
        )

    def window(self, spectrum, filters, delay_samples, n_taps):
        """First n_taps taps of the aligned kernel, without energy truncation."""
        positive, negative = self.baseband(spectrum)
        raw = synthesize_taps(positive, self.grid, filters, negative)
        if not 0 < n_taps <= raw.size // 2:
            raise ValidationError(f"Window of {n_taps} taps exceeds half the DFT span")
        taps = np.roll(raw, delay_samples)[:n_taps]
        total = float(np.sum(np.abs(raw) ** 2))
        captured = float(np.sum(np.abs(taps) ** 2)) / total if total else 1.0
        return DtKernel(taps, filters.ts, captured, total, int(delay_samples))

    def is_flat(self, spectrum):
        """True when the spectrum is constant up to FLAT_TOLERANCE."""
        spectrum = np.asarray(spectrum)
        scale = max(1.0, float(np.abs(spectrum).max()))
        return bool(np.all(np.abs(spectrum - spectrum[0]) <= FLAT_TOLERANCE * scale))


def duration_estimate(doc, cables, ts):
    """Expected kernel duration: echoes plus the diffusive RC tail of every section."""
    total = 64.0 * ts
    for record in doc.elements:
        if record.cable is None:
            continue
        params = cables[record.cable]
        length = record.length_ft
        total += 8.0 * length / propagation_velocity(params)
        total += params.r0 * params.c0 * length ** 2
    return total


def element_two_port(record, grid, cables, f0=None):
    """Frequency-domain two-port of a topology element (m = 0 average when time-varying)."""
    if record.kind == "cable":
        return cable(cables[record.cable], record.length_ft, grid)
    if record.kind == "bridged_tap":
        return bridged_tap(cables[record.cable], record.length_ft, record.impedance(), grid)
    if record.kind == "shunt":
        return shunt(record.impedance(), grid)
    if record.kind == "series":
        return series(record.impedance(), grid)

    mean = record.tv_impedance(f0).coefficients(grid, 0)[0]
    ones = np.ones(grid.n_points, dtype=complex)
    zeros = np.zeros(grid.n_points, dtype=complex)
    if record.placement == "shunt":
        return TwoPortABCD(grid, ones, zeros, mean, ones, label=f"{record.kind} (mean)")
    return TwoPortABCD(grid, ones, mean, zeros, ones, label=f"{record.kind} (mean)")


def harmonic_order(z, grid, requested=None):
    """Requested order, or the smallest M whose neglected harmonic energy is below 1e-4."""
    if requested is not None:
        return requested
    coefficients = z.coefficients(grid, MAX_HARMONIC_ORDER)
    full = LpTvKernel(
        {m: DtKernel(np.array([c[0]]), 1.0) for m, c in coefficients.items()}, z.f0, 1.0
    )
    return default_harmonic_order(full, HARMONIC_RELATIVE_ERROR, MAX_HARMONIC_ORDER)


def _flat_kernels(tp, ts):
    return AbcdKernels(*(DtKernel.delta(ts, _scalar(tp.spectrum(n)[0])) for n in "abcd"))


def _scalar(value):
    value = complex(value)
    return value.real if value.imag == 0 else value


def _is_flat(record, tp, spectra, f0):
    if record.time_varying:
        coefficients = record.tv_impedance(f0).coefficients(spectra.eval_grid, 1)
        return all(spectra.is_flat(c) for c in coefficients.values())
    return tp.advance_s == 0 and all(spectra.is_flat(tp.spectrum(n)) for n in "abcd")


def _lti_element(record, tp, spectra, filters, cables, ts):
    if _is_flat(record, tp, spectra, None):
        return ElementModel(record, tp, _flat_kernels(tp, ts), None, True, 0, 0)

    shaped = [tp.spectrum(n) for n in "abcd"]
    if record.kind == "cable":
        # the delayed e^{-gl} halves must survive truncation for det = 1
        gamma, _ = gamma_z0(cables[record.cable], spectra.eval_grid)
        shaped.append(np.exp(-gamma * record.length_ft))
    delay = spectra.delay(shaped, filters, advance_samples(tp.advance_s, ts))
    synthesized = [spectra.kernel(s, filters, delay_samples=delay) for s in shaped]
    kernels = AbcdKernels(*synthesized[:4])
    memory = max(k.memory for k in synthesized)
    edge = max(k.edge_level for k in synthesized)
    logger.info(f"{tp.label}: memory {memory}, delay {delay}")
    return ElementModel(record, tp, kernels, None, False, delay, memory, edge)


def _tv_element(record, tp, spectra, filters, ts, f0, requested_order):
    z = record.tv_impedance(f0)
    order = harmonic_order(z, spectra.eval_grid, requested_order)
    coefficients = z.coefficients(spectra.eval_grid, order)
    if all(spectra.is_flat(c) for c in coefficients.values()):
        harmonics = LpTvKernel.from_taps(
            {m: np.array([complex(c[0])]) for m, c in coefficients.items()}, z.f0, ts
        )
        kernels = _flat_kernels(tp, ts)
        logger.info(f"{record.kind} {record.model}: {2 * order + 1} memoryless harmonics")
        return ElementModel(record, tp, kernels, harmonics, True, 0, 0)

    if spectra.complex:
        raise ValidationError("Frequency-dependent time-varying loads need a baseband link")
    ones = np.ones(spectra.eval_grid.n_points)
    harmonics = harmonic_responses(z, spectra.grid, filters, order, spectra.threshold,
                                   minimum_delay=spectra.delay([ones], filters))
    delay = harmonics.harmonics[0].delay_samples
    through = spectra.kernel(ones, filters, delay_samples=delay)
    kernels = AbcdKernels(through, DtKernel.delta(ts, 0.0), DtKernel.delta(ts, 0.0), through)
    memory = max(harmonics.memory, through.memory)
    edge = max([through.edge_level] + [k.edge_level for k in harmonics.harmonics.values()])
    return ElementModel(record, tp, kernels, harmonics, False, delay, memory, edge)


def _lifted_termination(spec, spectra, ts, p, side):
    if spec.kind == "resistor":
        return float(spec.r_ohm)
    if spec.kind == "short":
        return 0.0
    if spec.kind == "open":
        if side == "source":
            raise ValidationError("The source cannot be open")
        return np.inf
    values = spec.impedance(spectra.eval_grid)
    if not np.all(np.isfinite(values)):
        raise ValidationError(
            f"{side} impedance '{spec.kind}' is unbounded on the grid; "
            "the lifted simulation needs a finite kernel"
        )
    kernel = spectra.kernel(values, FilterPair.unfiltered(ts), delay_samples=0)
    return lift_lti(kernel, p)


class _Assembly(NamedTuple):
    grid: FrequencyGrid
    spectra: _Spectra
    two_ports: list
    elements: list
    term: Termination
    h: np.ndarray
    reference_filters: FilterPair
    channel: DtKernel
    n_filtered: int

    @property
    def edge_level(self):
        return max([self.channel.edge_level] + [e.edge_level for e in self.elements])


def _assemble(doc, cables, filters, n_fft, threshold, f0, order):
    """Every frequency-domain quantity and kernel of the link on one DFT grid."""
    ts = filters.ts
    grid = FrequencyGrid.for_sampling(ts, n_fft)
    spectra = _Spectra(grid, doc.signal.carrier_hz, threshold)
    two_ports = [element_two_port(e, spectra.eval_grid, cables, f0) for e in doc.elements]
    n_filtered = sum(not _is_flat(r, tp, spectra, f0) for r, tp in zip(doc.elements, two_ports))

    elements = []
    for record, tp in zip(doc.elements, two_ports):
        if record.time_varying:
            elements.append(_tv_element(record, tp, spectra, filters, ts, f0, order))
        else:
            elements.append(_lti_element(record, tp, spectra, filters, cables, ts))

    term = Termination.from_specs(
        doc.termination.spec("source"), doc.termination.spec("load"), spectra.eval_grid
    )
    h = transfer_function(chain_fd(two_ports), term)
    # each filtered element carries the whole filter
    reference_filters = filters.repeated(n_filtered) if n_filtered else FilterPair.nyquist(ts)
    delay = sum(e.delay_samples for e in elements)
    channel = spectra.kernel(h, reference_filters, delay_samples=delay)
    return _Assembly(grid, spectra, two_ports, elements, term, h, reference_filters, channel,
                     n_filtered)


def build_link(doc, cables, energy_threshold=None, p=None, order=None):
    """
    Build every representation of the link described by a topology document.

    The DFT grid starts at four expected kernel durations and doubles, up to
    MAX_FFT_SIZE, while any aligned kernel still reaches the half-span.

    Args:
        doc: TopologyDoc
        cables: Cable library (label -> CableParams)
        energy_threshold: Overrides the document's truncation threshold
        p: Overrides the block size
        order: Overrides the harmonic order of time-varying loads

    Returns:
        Link

    Raises:
        ValidationError: If the block size cannot hold the link memory, or on
            unsupported element/termination combinations
    """
    signal = doc.signal
    threshold = energy_threshold if energy_threshold is not None else signal.energy_threshold
    if not 0 < threshold <= 1:
        raise ValidationError("Energy threshold must be in (0, 1]")
    missing = [label for label in doc.cable_labels if label not in cables]
    if missing:
        raise ValidationError(f"Unknown cable labels {missing}")

    ts = signal.sample_interval
    f0 = None
    if doc.time_varying:
        rates = {e.f0_hz or doc.lptv.f0_hz for e in doc.elements if e.time_varying}
        if len(rates) > 1:
            raise ValidationError("Time-varying loads must share one mains frequency")
        f0 = rates.pop()
        ts = commensurate_ts(ts, f0)
    if order is None and doc.lptv is not None:
        order = doc.lptv.harmonic_order

    filters = FilterPair.default(signal.bandwidth_hz, signal.rolloff, ts, signal.filter)
    n_fft = choose_fft_size(ts, duration_estimate(doc, cables, ts))
    while True:
        built = _assemble(doc, cables, filters, n_fft, threshold, f0, order)
        if built.edge_level <= TAIL_LIMIT or n_fft >= MAX_FFT_SIZE:
            break
        logger.warning(
            f"Kernel tail reaches the DFT half-span at N={n_fft} "
            f"(level {built.edge_level:.2e}); doubling"
        )
        n_fft *= 2
    grid, spectra, elements = built.grid, built.spectra, built.elements
    logger.info(f"Link grid: {grid.n_points} bins of {grid.delta_f:g} Hz, Ts={ts:g} s")

    channel = built.channel
    cascade_memory = sum(e.memory for e in elements)
    memory = max(cascade_memory, channel.memory)
    current_memory = min(memory, _current_memory(built.two_ports, built.term, spectra,
                                                 built.reference_filters))
    p = p or signal.block_p or default_block_size(memory)
    if p <= memory:
        raise ValidationError(
            f"Block size P={p} does not exceed the link memory L={memory}; "
            f"use P >= {default_block_size(memory)}"
        )

    model = LinkModel(
        elements=[e.lifted(p) for e in elements],
        z_source=_lifted_termination(doc.termination.spec("source"), spectra, ts, p, "source"),
        z_load=_lifted_termination(doc.termination.spec("load"), spectra, ts, p, "load"),
        p=p,
        memory=memory,
        ts=ts,
        current_memory=current_memory,
        delay_samples=channel.delay_samples,
        period_blocks=block_period(p, ts, f0) if f0 is not None else None,
        kernels=None if doc.time_varying else [e.aligned_kernels() for e in elements],
    )
    positive, _ = spectra.baseband(built.h)
    logger.info(
        f"Built link: {len(elements)} elements ({built.n_filtered} filtered), "
        f"P={p}, L={memory}, delay {channel.delay_samples}"
    )
    return Link(doc, filters, built.reference_filters, grid, elements, built.term, positive,
                channel, model, threshold, spectra, f0)


def _current_memory(two_ports, term, spectra, filters):
    """Memory of the input-admittance kernel: how far i_in spills past the payload."""
    tp = chain_fd(two_ports)
    zs, zl = term.z_source, term.z_load
    with np.errstate(divide="ignore", invalid="ignore"):
        if np.all(np.isinf(zl)):
            y = tp.c / (tp.a + tp.c * zs)
        else:
            y = (tp.d + zl * tp.c) / (tp.d * zs + tp.b + zl * tp.c * zs + zl * tp.a)
    if not np.all(np.isfinite(y)):
        return 0
    kernel = spectra.kernel(y, filters)
    return max(0, kernel.memory - kernel.delay_samples)
