"""
Validation utilities and exception types for the transmission-line channel toolkit.
"""
import numpy as np


class ValidationError(Exception):
    """Custom exception for invalid arguments and violated preconditions."""
    pass


class ComputationError(ValidationError):
    """
    Raised when a numerical step cannot be carried out.

    Attributes:
        bin_index: Offending frequency bin, when the failure is per-bin
        condition: Condition estimate, when the failure is a rank problem
    """

    def __init__(self, message, bin_index=None, condition=None):
        super().__init__(message)
        self.bin_index = bin_index
        self.condition = condition


def validate_positive(value, name):
    """
    Validate that a value is positive.

    Args:
        value: The value to check
        name: Name of the value for error message

    Raises:
        ValidationError: If the value is not positive
    """
    if not np.isfinite(value) or value <= 0:
        raise ValidationError(f"{name} must be greater than zero")
    return value


def validate_nonnegative(value, name):
    """Validate that a value is finite and not negative."""
    if not np.isfinite(value) or value < 0:
        raise ValidationError(f"{name} must not be negative")
    return value


def validate_range(value, name, min_val=None, max_val=None):
    """
    Validate that a value is within a specified range.

    Args:
        value: The value to check
        name: Name of the value for error message
        min_val: Minimum allowed value (inclusive)
        max_val: Maximum allowed value (inclusive)

    Raises:
        ValidationError: If the value is outside the specified range
    """
    if not np.isfinite(value):
        raise ValidationError(f"{name} must be a finite number")
    if min_val is not None and value < min_val:
        raise ValidationError(f"{name} must be at least {min_val}")
    if max_val is not None and value > max_val:
        raise ValidationError(f"{name} must be at most {max_val}")
    return value


def validate_block_size(p, memory):
    """
    Validate that a block of P samples can hold a kernel of memory L.

    Args:
        p: Block size P
        memory: Kernel memory L

    Raises:
        ValidationError: If P <= L or either value is not an integer
    """
    if int(p) != p or int(memory) != memory:
        raise ValidationError("Block size and memory must be integers")
    if memory < 0:
        raise ValidationError("Kernel memory must not be negative")
    if p <= memory:
        raise ValidationError(
            f"Block size P={p} must exceed the channel memory L={memory}"
        )
    return int(p)


def validate_same_grid(*grids):
    """
    Validate that all spectra live on the same frequency grid.

    Raises:
        ValidationError: If any two grids differ
    """
    first = grids[0]
    for grid in grids[1:]:
        if grid != first:
            raise ValidationError(
                f"Frequency grid mismatch: {first} versus {grid}"
            )
    return first


def validate_finite(values, name):
    """
    Validate that an array holds only finite values.

    Raises:
        ComputationError: Naming the first non-finite index
    """
    values = np.asarray(values)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise ComputationError(
            f"{name} is not finite at bin {int(bad[0])}", bin_index=int(bad[0])
        )
    return values
