"""
Terminated-link simulation in lifted form.

Per block the backward relations of the cascade,
    v_out = D v_in - B i_in,    i_out = -C v_in + A i_in,
close on the Kirchhoff terminations v_in = v_s - Zs i_in and v_out = ZL i_out.
With trailing zeros only the intra-block matrices take part and the input
current follows from Xi i_in = (D + ZL C) v_s with
    Xi = D Zs + B + ZL C Zs + ZL A.
Full blocks keep the inter-block halves of the same operators and solve for
the current of the whole stream at once.
"""
import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.linalg import eigh, qr, solve_triangular
from scipy.signal import lfilter

from src.models.chainrule import LiftedTwoPort, cascade_chain, cascade_kernels, cascade_tz
from src.models.lifting import LiftedPair, least_squares
from src.models.twoport import chain_fd, transfer_function
from src.utils.validation import (
    ComputationError,
    ValidationError,
    validate_block_size,
    validate_nonnegative,
    validate_range,
)

logger = logging.getLogger(__name__)

NOISE_KINDS = ("white", "ar1", "covariance_table")

Impedance = Union[float, LiftedPair]


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """
    Additive observation noise.

    Attributes:
        kind: white, ar1 or covariance_table
        variance: Per-sample variance (white, ar1)
        rho: Lag-one correlation coefficient (ar1)
        covariance: Explicit P x P covariance R_n (covariance_table)
        seed: Random seed
    """

    kind: str = "white"
    variance: float = 0.0
    rho: float = 0.0
    covariance: Optional[np.ndarray] = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValidationError(f"Unknown noise kind '{self.kind}'")
        validate_nonnegative(self.variance, "Noise variance")
        validate_range(self.rho, "AR(1) coefficient", min_val=-0.999999, max_val=0.999999)
        if self.kind == "covariance_table":
            if self.covariance is None:
                raise ValidationError("A covariance-table noise spec needs R_n")
            r = np.asarray(self.covariance, dtype=float)
            if r.ndim != 2 or r.shape[0] != r.shape[1]:
                raise ValidationError("Noise covariance must be square")
            if not np.allclose(r, r.T, atol=1e-12 * max(1.0, np.abs(r).max())):
                raise ValidationError("Noise covariance must be symmetric")
            if np.linalg.eigvalsh(r).min() < -1e-10 * max(1.0, np.abs(r).max()):
                raise ValidationError("Noise covariance must be positive semidefinite")
            object.__setattr__(self, "covariance", r)

    def covariance_matrix(self, p):
        """R_n of one block of P samples."""
        if self.kind == "white":
            return self.variance * np.eye(p)
        if self.kind == "ar1":
            lag = np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
            return self.variance * self.rho ** lag
        if self.covariance.shape != (p, p):
            raise ValidationError(f"Noise covariance is not {p}x{p}")
        return self.covariance


def make_noise(spec, p, n_blocks):
    """
    Noise blocks of shape (n_blocks, P) drawn from spec.seed.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "white":
        return np.sqrt(spec.variance) * rng.standard_normal((n_blocks, p))
    if spec.kind == "ar1":
        drive = np.sqrt(spec.variance * (1.0 - spec.rho ** 2)) * rng.standard_normal(n_blocks * p)
        # stationary start
        initial = np.sqrt(spec.variance) * rng.standard_normal()
        stream, _ = lfilter([1.0], [1.0, -spec.rho], drive, zi=[spec.rho * initial])
        return stream.reshape(n_blocks, p)
    values, vectors = eigh(spec.covariance_matrix(p))
    factor = vectors * np.sqrt(np.clip(values, 0.0, None))
    return rng.standard_normal((n_blocks, p)) @ factor.T


def snr_noise_spec(clean_blocks, snr_db, seed=0):
    """White noise spec at the given SNR relative to the noiseless output power."""
    power = float(np.mean(np.abs(np.asarray(clean_blocks)) ** 2))
    return NoiseSpec("white", variance=power / 10 ** (snr_db / 10.0), seed=seed)


@dataclass(eq=False)
class LinkModel:
    """
    Lifted cascade plus terminations.

    Attributes:
        elements: Per-element LiftedTwoPort, or callables i -> LiftedTwoPort
            for time-varying elements, source side first
        z_source: Scalar source resistance or lifted source-impedance kernel
        z_load: Scalar load resistance, np.inf for an open load, or lifted kernel
        p: Block size
        memory: Declared link memory L (trailing zeros per block)
        ts: Sample interval in seconds
        current_memory: Samples the input current may spill past the payload
        delay_samples: Alignment delay carried by the output
        period_blocks: Block period N0 of a time-varying link, None when LTI
        kernels: AbcdKernels per element, each cut to its memory, when every
            element is LTI; the cascade is then chained on kernels and lifted once
    """

    elements: Sequence
    z_source: Impedance
    z_load: Impedance
    p: int
    memory: int
    ts: float
    current_memory: int = 0
    delay_samples: int = 0
    period_blocks: Optional[int] = None
    kernels: Optional[Sequence] = None
    _tz_cache: dict = field(default_factory=dict, repr=False)
    _ibi_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        validate_block_size(self.p, self.memory)
        if not 0 <= self.current_memory <= self.memory:
            raise ValidationError("Input-current spill must lie within the trailing zeros")
        if self.kernels is not None:
            if len(self.kernels) != len(self.elements):
                raise ValidationError("One kernel set per element is required")
            if self.period_blocks is not None:
                raise ValidationError("Kernel-chained cascades must be time-invariant")
            cascade = sum(k.a.memory for k in self.kernels)
        else:
            cascade = sum(_element_at(e, 0).memory for e in self.elements)
        if cascade >= self.p:
            raise ValidationError(
                f"Block size P={self.p} must exceed the cascade memory {cascade}"
            )
        for name in ("z_source", "z_load"):
            z = getattr(self, name)
            if isinstance(z, LiftedPair):
                if z.p != self.p:
                    raise ValidationError(f"{name} kernel is lifted at a different block size")
            elif name == "z_source" and not np.isfinite(z):
                raise ValidationError("Source impedance must be finite")
            elif z < 0:
                raise ValidationError(f"{name} must be passive")

    @property
    def time_varying(self):
        return self.period_blocks is not None

    @property
    def open_load(self):
        return not isinstance(self.z_load, LiftedPair) and np.isinf(self.z_load)

    def _key(self, i):
        return i % self.period_blocks if self.time_varying else 0

    def tz_at(self, i):
        """Trailing-zeros cascade at block index i."""
        key = self._key(i)
        if key not in self._tz_cache:
            if self.kernels is not None:
                self._tz_cache[key] = self.ibi_at(i).trailing_zeros()
            else:
                self._tz_cache[key] = cascade_tz([_element_at(e, i) for e in self.elements])
        return self._tz_cache[key]

    def ibi_at(self, i):
        """Full cascade (intra- and inter-block matrices) at block index i."""
        key = self._key(i)
        if key not in self._ibi_cache:
            if self.kernels is not None:
                self._ibi_cache[key] = LiftedTwoPort.from_kernels(
                    cascade_kernels(self.kernels), self.p)
            else:
                self._ibi_cache[key] = cascade_chain(list(self.elements), i)
        return self._ibi_cache[key]

    def termination(self, name):
        """(Z0, Z1) block matrices of a finite termination."""
        z = getattr(self, name)
        if isinstance(z, LiftedPair):
            return z.h0, z.h1
        return z * np.eye(self.p), np.zeros((self.p, self.p))


def _element_at(element, i):
    return element(i) if callable(element) else element


class SimulationResult(NamedTuple):
    outputs: np.ndarray
    input_currents: np.ndarray
    condition: float


def block_operators(link, two_port):
    """
    Intra-block operators of the trailing-zeros solve at one block index.

    Returns:
        tuple: (Xi, drive D + ZL C, D, source drop D Zs + B); for an open load
        Xi = A + C Zs and the drive is C
    """
    zs0, _ = link.termination("z_source")
    a0, b0, c0, d0 = two_port.a0, two_port.b0, two_port.c0, two_port.d0
    if link.open_load:
        xi = a0 + c0 @ zs0
        drive = c0
    else:
        zl0, _ = link.termination("z_load")
        xi = d0 @ zs0 + b0 + zl0 @ c0 @ zs0 + zl0 @ a0
        drive = d0 + zl0 @ c0
    return xi, drive, d0, d0 @ zs0 + b0


def simulate_tz(link, payloads, noise=None, first_block=1):
    """
    Output blocks for trailing-zeros payloads.

    The input current is solved by least squares against the tall Xi
    (first P - L + current_memory columns); the dagger matrix is never formed.

    Args:
        link: LinkModel
        payloads: Sequence of (P-L)-vectors
        noise: Optional NoiseSpec added to the outputs
        first_block: Block index of the first payload

    Returns:
        SimulationResult with outputs (n, P), input currents and the worst
        condition estimate

    Raises:
        ComputationError: If Xi is rank deficient
    """
    p, memory = link.p, link.memory
    payloads = np.atleast_2d(np.asarray(payloads))
    if payloads.shape[1] != p - memory:
        raise ValidationError(f"Payloads must hold P-L={p - memory} samples")
    support = p - memory + link.current_memory
    outputs, currents = [], []
    worst = 1.0
    for j, payload in enumerate(payloads):
        i = first_block + j
        xi, drive, d0, source_drop = block_operators(link, link.tz_at(i))
        rhs = drive[:, : p - memory] @ payload
        current, condition, _ = least_squares(xi[:, :support], rhs, f"Xi at block {i}")
        worst = max(worst, condition)
        v_out = d0[:, : p - memory] @ payload - source_drop[:, :support] @ current
        outputs.append(v_out)
        currents.append(current)
    outputs = np.array(outputs)
    if noise is not None:
        outputs = outputs + make_noise(noise, p, len(outputs))
    logger.info(f"Simulated {len(outputs)} trailing-zeros blocks (condition {worst:.3e})")
    return SimulationResult(outputs, np.array(currents), worst)


def _after(x, y, y_prev0):
    """(x y) as an (intra, inter) pair; y_prev0 is y's intra matrix one block earlier."""
    return x[0] @ y[0], x[1] @ y_prev0 + x[0] @ y[1]


def _plus(*pairs):
    return sum(p[0] for p in pairs), sum(p[1] for p in pairs)


def stream_operators(link, i):
    """
    Xi, drive and source drop D Zs + B of the stream form at block index i,
    each as an (intra, inter) pair of P x P matrices.

    Returns:
        tuple: (Xi, drive, D, source drop)
    """
    m, prev = link.ibi_at(i), link.ibi_at(i - 1)
    zs = link.termination("z_source")
    a, b, c, d = (m.a0, m.a1), (m.b0, m.b1), (m.c0, m.c1), (m.d0, m.d1)
    c_zs = _after(c, zs, zs[0])
    drop = _plus(_after(d, zs, zs[0]), b)
    if link.open_load:
        return _plus(a, c_zs), c, d, drop
    zl = link.termination("z_load")
    xi = _plus(
        drop,
        _after(zl, c_zs, prev.c0 @ zs[0]),
        _after(zl, a, prev.a0),
    )
    drive = _plus(d, _after(zl, c, prev.c0))
    return xi, drive, d, drop


def _check_ibi_memory(link, first_block):
    cascade = link.ibi_at(first_block).memory
    extra = sum(z.memory for z in (link.z_source, link.z_load) if isinstance(z, LiftedPair))
    if cascade + extra >= link.p:
        raise ValidationError(
            f"Block size P={link.p} must exceed the cascade plus termination memory "
            f"{cascade + extra} for full-block simulation"
        )


def simulate_ibi(link, blocks, noise=None, first_block=1):
    """
    Output blocks for arbitrary full blocks with inter-block interference.

    The input current of the whole stream solves
        Xi_{i,0} i_in[i] + Xi_{i,1} i_in[i-1] = drive_{i,0} v_s[i] + drive_{i,1} v_s[i-1]
    in the least-squares sense over every block, one zero-input block past
    the stream and the inter-block rows of the block after it. The system is
    block bidiagonal and is reduced by one 2P x P QR per block, so delayed
    kernels, whose intra-block Xi has a vanishing leading diagonal, stay
    solvable. The system is at rest before first_block.

    Raises:
        ValidationError: On block width, or when P does not exceed the cascade
            plus termination memory
        ComputationError: If the stacked system is rank deficient
    """
    p = link.p
    blocks = np.atleast_2d(np.asarray(blocks))
    if blocks.shape[1] != p:
        raise ValidationError(f"Blocks must hold P={p} samples")
    _check_ibi_memory(link, first_block)

    n = blocks.shape[0]
    operators = [stream_operators(link, first_block + r) for r in range(n + 2)]
    complex_valued = np.iscomplexobj(blocks) or any(
        np.iscomplexobj(x) for op in operators for pair in op for x in pair
    )
    dtype = complex if complex_valued else float
    sources = np.zeros((n + 2, p), dtype=dtype)
    sources[:n] = blocks

    def rhs(r):
        _, drive, _, _ = operators[r]
        return drive[0] @ sources[r] + (drive[1] @ sources[r - 1] if r > 0 else 0)

    top, top_rhs = operators[0][0][0], rhs(0)
    reduced, worst = [], 1.0
    for r in range(n + 1):
        below = operators[r + 1][0][1]
        q, upper = qr(np.vstack([top, below]))
        diag = np.abs(np.diag(upper))
        scale = diag.max()
        if scale == 0 or diag.min() <= 2 * p * np.finfo(float).eps * scale:
            raise ComputationError(
                f"Stream system is rank deficient at block {first_block + r}",
                condition=np.inf,
            )
        worst = max(worst, float(scale / diag.min()))
        qh = q.conj().T
        rotated_rhs = qh @ np.concatenate([top_rhs, rhs(r + 1)])
        if r < n:
            fill = qh @ np.vstack([np.zeros((p, p), dtype=dtype), operators[r + 1][0][0]])
            top, top_rhs = fill[p:], rotated_rhs[p:]
            coupling = fill[:p]
        else:
            coupling = None
        reduced.append((upper[:p], coupling, rotated_rhs[:p]))

    currents = [None] * (n + 1)
    for r in range(n, -1, -1):
        upper, coupling, g = reduced[r]
        if coupling is not None:
            g = g - coupling @ currents[r + 1]
        currents[r] = solve_triangular(upper, g)

    outputs = []
    for r in range(n):
        _, _, d, drop = operators[r]
        v_out = d[0] @ sources[r] - drop[0] @ currents[r]
        if r > 0:
            v_out = v_out + d[1] @ sources[r - 1] - drop[1] @ currents[r - 1]
        outputs.append(v_out)
    outputs = np.array(outputs)
    if noise is not None:
        outputs = outputs + make_noise(noise, p, len(outputs))
    logger.info(
        f"Simulated {n} blocks with inter-block interference (condition {worst:.3e})"
    )
    return SimulationResult(outputs, np.array(currents[:n]), worst)


class FdReference(NamedTuple):
    spectrum: np.ndarray
    approximate: bool


def fd_reference(two_ports: List, term, time_varying=False):
    """
    Frequency-domain transfer function of the same cascade.

    For time-varying links the elements carry their time-averaged (m = 0)
    spectra and the result is flagged approximate.
    """
    h = transfer_function(chain_fd(two_ports), term)
    if time_varying:
        logger.warning("Frequency-domain reference of a time-varying link is the m = 0 average")
    return FdReference(h, bool(time_varying))


def impulse_response(link, first_block=1):
    """Output block for a unit impulse at the start of the payload."""
    payload = np.zeros(link.p - link.memory)
    payload[0] = 1.0
    return simulate_tz(link, payload[None, :], first_block=first_block).outputs[0]
