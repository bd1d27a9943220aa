"""
Lifted block channel matrices.

A kernel h[k, l] with memory L is re-indexed into blocks of P samples so that
v_out[i] = H_{i,0} v_s[i] + H_{i,1} v_s[i-1]. With L trailing zeros per block
only the tall P x (P-L) part of H_{i,0} is needed.
"""
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import qr, solve_triangular, toeplitz

from src.utils.validation import ComputationError, ValidationError, validate_block_size

logger = logging.getLogger(__name__)


def _padded(taps, length):
    out = np.zeros(length, dtype=np.result_type(taps, float))
    n = min(length, len(taps))
    out[:n] = taps[:n]
    return out


def band_mask(p, memory):
    """True where a lower-banded P x P matrix of order L may be nonzero."""
    lag = np.subtract.outer(np.arange(p), np.arange(p))
    return (lag >= 0) & (lag <= memory)


def corner_mask(p, memory):
    """True where the top-right L x L corner matrix may be nonzero."""
    lag = p + np.subtract.outer(np.arange(p), np.arange(p))
    return lag <= memory


@dataclass(frozen=True, eq=False)
class TallChannel:
    """H_{i,0} with its last L columns removed."""

    matrix: np.ndarray
    p: int
    memory: int


@dataclass(frozen=True, eq=False)
class LiftedPair:
    """
    Intra-block matrix h0 and inter-block matrix h1 of block index i.
    """

    h0: np.ndarray
    h1: np.ndarray
    p: int
    memory: int
    block_index: int = 0

    def __post_init__(self):
        validate_block_size(self.p, self.memory)
        for name in ("h0", "h1"):
            m = np.asarray(getattr(self, name))
            if m.shape != (self.p, self.p):
                raise ValidationError(f"{name} must be {self.p}x{self.p}, got {m.shape}")
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @property
    def tall(self):
        return TallChannel(self.h0[:, : self.p - self.memory], self.p, self.memory)

    def has_structure(self):
        """Exact band and corner zero patterns of order L."""
        return (
            not np.any(self.h0[~band_mask(self.p, self.memory)])
            and not np.any(self.h1[~corner_mask(self.p, self.memory)])
        )


def lift_lti(kernel, p):
    """
    Toeplitz block matrices of an LTI kernel.

    Args:
        kernel: DtKernel with memory L
        p: Block size, P > L

    Returns:
        LiftedPair, independent of the block index
    """
    validate_block_size(p, kernel.memory)
    taps = _padded(kernel.taps, p + 1)
    zeros = np.zeros(p, dtype=taps.dtype)
    h0 = toeplitz(taps[:p], zeros)
    # h1[k, n] = h[P + k - n]: first row reads h[P], h[P-1], ..., h[1]
    h1 = toeplitz(zeros, np.concatenate([[0], taps[p - 1:0:-1]]))
    return LiftedPair(h0, h1, p, kernel.memory)


def lift_ltv(kernel, p, i):
    """
    Block matrices of a time-varying kernel at block index i.

    Args:
        kernel: Object with .memory and .taps_at(k) giving h[k, 0..L]
        p: Block size
        i: Block index

    Returns:
        LiftedPair with entries h0[k, n] = h[iP+k, k-n], h1[k, n] = h[iP+k, P+k-n]
    """
    memory = kernel.memory
    validate_block_size(p, memory)
    rows = np.array([_padded(kernel.taps_at(i * p + k), 2 * p) for k in range(p)])
    k = np.arange(p)[:, None]
    n = np.arange(p)[None, :]
    lag0 = np.clip(k - n, 0, 2 * p - 1)
    lag1 = np.clip(p + k - n, 0, 2 * p - 1)
    h0 = np.where(band_mask(p, memory), np.take_along_axis(rows, lag0, axis=1), 0)
    h1 = np.where(corner_mask(p, memory), np.take_along_axis(rows, lag1, axis=1), 0)
    return LiftedPair(h0, h1, p, memory, i)


def _pair_for(pairs, i):
    if isinstance(pairs, LiftedPair):
        return pairs
    if callable(pairs):
        return pairs(i)
    return pairs[i]


def apply_blocks(pairs, blocks):
    """
    Blockwise recursion v_out[i] = H_{i,0} v_s[i] + H_{i,1} v_s[i-1].

    Args:
        pairs: One LiftedPair (LTI), a sequence indexed by block, or a
            callable i -> LiftedPair
        blocks: Input blocks, shape (n_blocks, P); the system is at rest before

    Returns:
        np.ndarray: Output blocks, shape (n_blocks, P)
    """
    blocks = np.atleast_2d(np.asarray(blocks))
    previous = np.zeros(blocks.shape[1], dtype=blocks.dtype)
    out = []
    for i, block in enumerate(blocks):
        pair = _pair_for(pairs, i)
        if block.size != pair.p:
            raise ValidationError(f"Block {i} has {block.size} samples, expected {pair.p}")
        out.append(pair.h0 @ block + pair.h1 @ previous)
        previous = block
    return np.array(out)


def apply_tz(pair, payload):
    """Output block of a trailing-zeros payload: tall channel times payload."""
    tall = pair.tall if isinstance(pair, LiftedPair) else pair
    payload = np.asarray(payload)
    if payload.size != tall.p - tall.memory:
        raise ValidationError(
            f"Payload has {payload.size} samples, expected {tall.p - tall.memory}"
        )
    return tall.matrix @ payload


class TzSolution(NamedTuple):
    payload: np.ndarray
    condition: float
    residual_norm: float


def condition_estimate(matrix):
    """Cheap condition estimate from the diagonal of the QR triangular factor."""
    r = qr(matrix, mode="r")[0]
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag.min() == 0:
        return np.inf
    return float(diag.max() / diag.min())


def least_squares(matrix, rhs, what="system"):
    """
    Least-squares solve through an economic QR factorization.

    Returns:
        tuple: (solution, condition estimate, residual norm)

    Raises:
        ComputationError: If the numerical rank is below the column count
    """
    q, r = qr(matrix, mode="economic")
    diag = np.abs(np.diag(r))
    scale = diag.max() if diag.size else 0.0
    tol = max(matrix.shape) * np.finfo(float).eps * scale
    condition = float(scale / diag.min()) if diag.size and diag.min() > 0 else np.inf
    if scale == 0 or diag.min() <= tol:
        raise ComputationError(
            f"{what} is rank deficient (condition estimate {condition:.3e})",
            condition=condition,
        )
    qh_rhs = q.conj().T @ rhs
    solution = solve_triangular(r, qh_rhs)
    residual = float(np.linalg.norm(rhs - matrix @ solution))
    logger.debug(f"{what}: condition estimate {condition:.3e}, residual {residual:.3e}")
    return solution, condition, residual


def solve_tz(pair, observed):
    """
    Recover a trailing-zeros payload from an observed block by least squares
    against the tall channel.

    Returns:
        TzSolution with the payload, condition estimate and residual norm
    """
    tall = pair.tall if isinstance(pair, LiftedPair) else pair
    observed = np.asarray(observed)
    if observed.size != tall.p:
        raise ValidationError(f"Observed block has {observed.size} samples, expected {tall.p}")
    payload, condition, residual = least_squares(tall.matrix, observed, "Tall channel")
    return TzSolution(payload, condition, residual)


def default_block_size(memory):
    """4L rounded up to a power of two (at least 2)."""
    target = max(2, 4 * int(memory))
    return 1 << (target - 1).bit_length()


def block_stream(samples, size):
    """
    Split a sample stream into blocks, zero-padding the final partial block.

    Returns:
        tuple: (blocks of shape (n_blocks, size), padded flag)
    """
    samples = np.asarray(samples)
    if size < 1:
        raise ValidationError("Block size must be positive")
    n_blocks = max(1, -(-samples.size // size))
    padded = n_blocks * size != samples.size
    buffer = np.zeros(n_blocks * size, dtype=samples.dtype)
    buffer[: samples.size] = samples
    if padded:
        logger.debug(f"Final block zero-padded by {n_blocks * size - samples.size} samples")
    return buffer.reshape(n_blocks, size), padded


def unblock_stream(blocks):
    """Concatenate blocks back into one sample stream."""
    return np.asarray(blocks).reshape(-1)


def tz_blocks(payloads, memory):
    """Append L trailing zeros to each payload."""
    payloads = np.atleast_2d(np.asarray(payloads))
    zeros = np.zeros((payloads.shape[0], memory), dtype=payloads.dtype)
    return np.hstack([payloads, zeros])
