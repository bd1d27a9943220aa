"""
Discrete-time lifted chain rule for cascades of two-ports.

Each element k is held in backward form
    M^(k) = [[D, -B], [-C, A]]
and the partial cascade is M^(1..k) = M^(k) M^(1..k-1). With inter-block
interference every entry is a pair (X_{i,0}, X_{i,1}) and a product of two
entries composes as
    (XY)_{i,0} = X_{i,0} Y_{i,0}
    (XY)_{i,1} = X_{i,1} Y_{i-1,0} + X_{i,0} Y_{i,1}
which needs X_{i,1} Y_{i-1,1} = 0.
"""
import logging
from dataclasses import dataclass, replace
from typing import Callable, Sequence, Union

import numpy as np
from scipy.signal import convolve

from src.models.kernels import AbcdKernels, DtKernel
from src.models.lifting import LiftedPair, band_mask, corner_mask, lift_lti, lift_ltv
from src.utils.validation import ComputationError, ValidationError, validate_block_size

logger = logging.getLogger(__name__)

NAMES = ("a", "b", "c", "d")
ZERO_FLOOR = 1e-14


@dataclass(frozen=True, eq=False)
class LiftedTwoPort:
    """
    Lifted ABCD kernel matrices (x0 intra-block, x1 inter-block) at block index i.
    """

    a0: np.ndarray
    a1: np.ndarray
    b0: np.ndarray
    b1: np.ndarray
    c0: np.ndarray
    c1: np.ndarray
    d0: np.ndarray
    d1: np.ndarray
    p: int
    memory: int
    block_index: int = 0

    def __post_init__(self):
        validate_block_size(self.p, self.memory)
        for name in NAMES:
            for level in "01":
                m = np.asarray(getattr(self, name + level))
                if m.shape != (self.p, self.p):
                    raise ValidationError(f"{name}{level} must be {self.p}x{self.p}")
                m.setflags(write=False)
                object.__setattr__(self, name + level, m)

    def pair(self, name):
        """
        Intra/inter-block matrices of one entry.

        Args:
            name: One of a, b, c, d

        Returns:
            LiftedPair
        """
        return LiftedPair(
            getattr(self, name + "0"), getattr(self, name + "1"),
            self.p, self.memory, self.block_index,
        )

    @classmethod
    def from_pairs(cls, pairs, memory=None, block_index=0):
        """Build from a map name -> LiftedPair."""
        p = pairs["a"].p
        memory = max(pr.memory for pr in pairs.values()) if memory is None else memory
        kwargs = {}
        for name in NAMES:
            kwargs[name + "0"] = pairs[name].h0
            kwargs[name + "1"] = pairs[name].h1
        return cls(p=p, memory=memory, block_index=block_index, **kwargs)

    @classmethod
    def from_kernels(cls, kernels, p, memory=None):
        """
        Lift LTI ABCD kernels; all four are cut to one common memory.
        """
        memory = max(k.memory for k in kernels) if memory is None else memory
        validate_block_size(p, memory)
        pairs = {
            name: lift_lti(k.truncated(memory), p)
            for name, k in zip(NAMES, kernels)
        }
        return cls.from_pairs(pairs, memory)

    @classmethod
    def from_tv_kernels(cls, kernels, p, i):
        """Lift time-indexed ABCD kernels (objects with taps_at) at block index i."""
        pairs = {name: lift_ltv(k, p, i) for name, k in zip(NAMES, kernels)}
        return cls.from_pairs(pairs, block_index=i)

    @classmethod
    def identity(cls, p, memory=0, block_index=0):
        """Lifted identity two-port of block size p."""
        eye = np.eye(p)
        zero = np.zeros((p, p))
        return cls(eye, zero, zero, zero, zero, zero, eye, zero, p, memory, block_index)

    @classmethod
    def shunt(cls, c_pair):
        """Shunt element: a0 = d0 = I, b = 0, c from the admittance kernel."""
        p = c_pair.p
        eye = np.eye(p)
        zero = np.zeros((p, p))
        return cls(eye, zero, zero, zero, c_pair.h0, c_pair.h1, eye, zero,
                   p, c_pair.memory, c_pair.block_index)

    @classmethod
    def series(cls, b_pair):
        """Series element: a0 = d0 = I, c = 0, b from the impedance kernel."""
        p = b_pair.p
        eye = np.eye(p)
        zero = np.zeros((p, p))
        return cls(eye, zero, b_pair.h0, b_pair.h1, zero, zero, eye, zero,
                   p, b_pair.memory, b_pair.block_index)

    def trailing_zeros(self):
        """The same intra-block matrices with the inter-block ones dropped."""
        zero = {name + "1": np.zeros_like(getattr(self, name + "1")) for name in NAMES}
        return replace(self, **zero)

    def backward_blocks(self):
        """2P x 2P intra-block backward matrix [[D0, -B0], [-C0, A0]]."""
        return np.block([[self.d0, -self.b0], [-self.c0, self.a0]])

    def has_structure(self):
        """True when every entry has the band and corner zero pattern of its memory."""
        return all(self.pair(name).has_structure() for name in NAMES)


Element = Union[LiftedTwoPort, Callable[[int], LiftedTwoPort]]


def _at(element, i):
    return element(i) if callable(element) else element


def _zero_outside(matrix, mask):
    out = np.array(matrix)
    outside = ~mask
    scale = np.abs(out).max() if out.size else 0.0
    stray = np.abs(out[outside]).max() if np.any(outside) else 0.0
    if stray > ZERO_FLOOR * max(scale, 1.0):
        logger.debug(f"Zeroing structure residue {stray:.3e}")
    out[outside] = 0
    return out


def _compose(x0, x1, y0, y1, y0_prev, y1_prev):
    if np.any(x1 @ y1_prev):
        raise ComputationError(
            "Corner blocks of consecutive operands overlap; "
            "the block size is too small for the combined memory"
        )
    return x0 @ y0, x1 @ y0_prev + x0 @ y1


def cascade_ibi(left, left_prev, right):
    """
    Append element k (right, at block index i) to the partial cascade 1..k-1
    (left at index i, left_prev at index i-1).

    Returns:
        LiftedTwoPort of the cascade 1..k at index i, with memory L_left + L_right

    Raises:
        ValidationError: On size mismatch or P <= combined memory
        ComputationError: If the corner-product identity fails
    """
    p = left.p
    if right.p != p or left_prev.p != p:
        raise ValidationError("Cascade operands must share the block size")
    memory = left.memory + right.memory
    validate_block_size(p, memory)

    def entry(x_name, y_name):
        x0, x1 = getattr(right, x_name + "0"), getattr(right, x_name + "1")
        return _compose(
            x0, x1,
            getattr(left, y_name + "0"), getattr(left, y_name + "1"),
            getattr(left_prev, y_name + "0"), getattr(left_prev, y_name + "1"),
        )

    def plus(first, second):
        return first[0] + second[0], first[1] + second[1]

    # backward product entries: D = Dk D' + Bk C', B = Dk B' + Bk A',
    # C = Ck D' + Ak C', A = Ck B' + Ak A'
    blocks = {
        "d": plus(entry("d", "d"), entry("b", "c")),
        "b": plus(entry("d", "b"), entry("b", "a")),
        "c": plus(entry("c", "d"), entry("a", "c")),
        "a": plus(entry("c", "b"), entry("a", "a")),
    }
    band = band_mask(p, memory)
    corner = corner_mask(p, memory)
    kwargs = {}
    for name, (x0, x1) in blocks.items():
        kwargs[name + "0"] = _zero_outside(x0, band)
        kwargs[name + "1"] = _zero_outside(x1, corner)
    return LiftedTwoPort(p=p, memory=memory, block_index=left.block_index, **kwargs)


def cascade_chain(elements: Sequence[Element], i):
    """
    Fold cascade_ibi over elements (source side first) at block index i.

    Elements are LiftedTwoPort (time-invariant) or callables i -> LiftedTwoPort.
    Partial cascades at earlier indices are cached per call.
    """
    if not elements:
        raise ValidationError("Cascade needs at least one element")
    cache = {}

    def state(k, index):
        key = (k, index)
        if key not in cache:
            if k == 0:
                cache[key] = _at(elements[0], index)
            else:
                cache[key] = cascade_ibi(
                    state(k - 1, index), state(k - 1, index - 1), _at(elements[k], index)
                )
        return cache[key]

    return state(len(elements) - 1, i)


def cascade_tz(elements, recursive=False):
    """
    Trailing-zeros chain rule on the intra-block matrices at one block index.

    The default path multiplies the 2P x 2P backward matrices from element N
    down to element 1; recursive=True folds the four block recursions instead.

    Args:
        elements: LiftedTwoPort per element, source side first

    Returns:
        LiftedTwoPort with zero inter-block matrices
    """
    elements = list(elements)
    if not elements:
        raise ValidationError("Cascade needs at least one element")
    p = elements[0].p
    if any(e.p != p for e in elements):
        raise ValidationError("Cascade operands must share the block size")
    memory = sum(e.memory for e in elements)
    validate_block_size(p, memory)
    if len(elements) == 1:
        return _tz_result(elements[0].a0, elements[0].b0, elements[0].c0, elements[0].d0,
                          p, elements[0].memory, elements[0].block_index)

    if recursive:
        a, b, c, d = elements[0].a0, elements[0].b0, elements[0].c0, elements[0].d0
        for e in elements[1:]:
            a, b, c, d = (
                e.c0 @ b + e.a0 @ a,
                e.d0 @ b + e.b0 @ a,
                e.c0 @ d + e.a0 @ c,
                e.d0 @ d + e.b0 @ c,
            )
    else:
        product = np.eye(2 * p)
        for e in elements:
            product = e.backward_blocks() @ product
        d, b = product[:p, :p], -product[:p, p:]
        c, a = -product[p:, :p], product[p:, p:]

    band = band_mask(p, memory)
    return _tz_result(*(_zero_outside(x, band) for x in (a, b, c, d)),
                      p, memory, elements[0].block_index)


def _tz_result(a, b, c, d, p, memory, block_index):
    zero = np.zeros((p, p), dtype=np.result_type(a, b, c, d))
    return LiftedTwoPort(a, zero, b, zero, c, zero, d, zero, p, memory, block_index)


def cascade_kernels(elements):
    """
    Chain rule on the DT kernels of LTI elements.

    Lifting the result gives the same matrices as cascade_ibi or cascade_tz on
    the lifted elements while P exceeds the summed memory, since products of
    banded Toeplitz blocks are the blocks of the convolved kernels.

    Args:
        elements: AbcdKernels per element, source side first; the four
            kernels of an element share one memory

    Returns:
        AbcdKernels of the cascade, memory equal to the summed element memories

    Raises:
        ValidationError: On an empty cascade or unequal memories within an element
    """
    if not elements:
        raise ValidationError("Cascade needs at least one element")
    for k, element in enumerate(elements):
        if len({kernel.memory for kernel in element}) != 1:
            raise ValidationError(f"Element {k} kernels must share one memory")
    ts = elements[0].a.ts
    a, b, c, d = (kernel.taps for kernel in elements[0])
    for element in elements[1:]:
        ea, eb, ec, ed = (kernel.taps for kernel in element)
        a, b, c, d = (
            convolve(ec, b) + convolve(ea, a),
            convolve(ed, b) + convolve(eb, a),
            convolve(ec, d) + convolve(ea, c),
            convolve(ed, d) + convolve(eb, c),
        )
    return AbcdKernels(*(DtKernel(x, ts) for x in (a, b, c, d)))
