"""
CSV and JSON writers (and readers) for kernels, spectra, lifted matrices,
block streams and reports.
"""
import json
import logging
import os

import numpy as np
import pandas as pd

from src.models.kernels import DtKernel
from src.utils.validation import ValidationError

logger = logging.getLogger(__name__)


def _metadata_line(**items):
    return "# " + " ".join(f"{k}={v}" for k, v in items.items()) + "\n"


def _read_metadata(path):
    with open(path, "r", encoding="utf-8") as handle:
        first = handle.readline()
    if not first.startswith("#"):
        raise ValidationError(f"{path} lacks its metadata line")
    items = {}
    for token in first[1:].split():
        key, _, value = token.partition("=")
        items[key] = value
    return items


def _write(frame, path, metadata=None):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        if metadata:
            handle.write(_metadata_line(**metadata))
        frame.to_csv(handle, index=False, float_format="%.17g")
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def kernel_frame(kernel):
    """
    Tabulate a kernel's taps.

    Args:
        kernel: DtKernel

    Returns:
        pd.DataFrame: Columns index, time_s, tap_re, tap_im
    """
    taps = np.asarray(kernel.taps)
    return pd.DataFrame({
        "index": np.arange(taps.size),
        "time_s": kernel.time_s,
        "tap_re": taps.real,
        "tap_im": taps.imag if np.iscomplexobj(taps) else np.zeros(taps.size),
    })


def write_kernel_csv(kernel, path, name="h"):
    """Kernel taps with a `#` metadata line carrying Ts, L and the captured energy."""
    metadata = {
        "name": name,
        "ts_s": repr(float(kernel.ts)),
        "memory": kernel.memory,
        "energy_captured": repr(float(kernel.energy_captured)),
        "delay_samples": kernel.delay_samples,
    }
    return _write(kernel_frame(kernel), path, metadata)


def read_kernel_csv(path):
    """
    Load a kernel written by write_kernel_csv.

    Args:
        path: CSV file with a `#` metadata line

    Returns:
        DtKernel: Real taps when every imaginary part is zero
    """
    metadata = _read_metadata(path)
    frame = pd.read_csv(path, comment="#")
    taps = frame["tap_re"].to_numpy() + 1j * frame["tap_im"].to_numpy()
    if not np.any(frame["tap_im"].to_numpy()):
        taps = taps.real
    return DtKernel(
        taps, float(metadata["ts_s"]),
        energy_captured=float(metadata.get("energy_captured", 1.0)),
        delay_samples=int(metadata.get("delay_samples", 0)),
    )


def transfer_frame(grid, h):
    """
    Tabulate a transfer function on its grid.

    Args:
        grid: FrequencyGrid
        h: Complex values per bin

    Returns:
        pd.DataFrame: Columns freq_hz, h_re, h_im, h_mag_db (-inf at zeros)
    """
    h = np.asarray(h)
    magnitude = np.abs(h)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(magnitude)
    return pd.DataFrame({
        "freq_hz": grid.frequencies,
        "h_re": h.real,
        "h_im": h.imag,
        "h_mag_db": db,
    })


def write_transfer_csv(grid, h, path):
    """Write transfer_frame(grid, h) to path and return the path."""
    return _write(transfer_frame(grid, h), path)


def matrix_frame(matrix):
    """
    Tabulate a matrix column by column.

    Args:
        matrix: 2-D array

    Returns:
        pd.DataFrame: Columns c{n}_re, c{n}_im interleaved per matrix column
    """
    matrix = np.asarray(matrix)
    data = {}
    for n in range(matrix.shape[1]):
        data[f"c{n}_re"] = matrix[:, n].real
        data[f"c{n}_im"] = matrix[:, n].imag if np.iscomplexobj(matrix) else 0.0
    return pd.DataFrame(data)


def write_matrix_csv(matrix, path, p, memory, block_index, name="H"):
    """
    Write a lifted matrix with its P, L and block index in the metadata line.

    Args:
        matrix: 2-D array
        path: Output CSV path
        p: Block size
        memory: Kernel memory L
        block_index: Block index i of the matrix
        name: Matrix label

    Returns:
        str: path
    """
    metadata = {"name": name, "P": p, "L": memory, "i": block_index}
    return _write(matrix_frame(matrix), path, metadata)


def read_matrix_csv(path):
    """
    Load a matrix written by write_matrix_csv.

    Returns:
        tuple: (complex matrix, dict with the P, L and i metadata present)
    """
    metadata = _read_metadata(path)
    frame = pd.read_csv(path, comment="#")
    values = frame.to_numpy()
    matrix = values[:, 0::2] + 1j * values[:, 1::2]
    return matrix, {k: metadata[k] for k in ("P", "L", "i") if k in metadata}


def write_blocks_csv(blocks, path, p, memory, ts):
    """Block stream in long form: block, sample, re, im."""
    blocks = np.atleast_2d(np.asarray(blocks))
    n_blocks, size = blocks.shape
    frame = pd.DataFrame({
        "block": np.repeat(np.arange(n_blocks), size),
        "sample": np.tile(np.arange(size), n_blocks),
        "re": blocks.real.reshape(-1),
        "im": blocks.imag.reshape(-1) if np.iscomplexobj(blocks) else 0.0,
    })
    metadata = {"P": p, "L": memory, "ts_s": repr(float(ts)), "blocks": n_blocks}
    return _write(frame, path, metadata)


def read_blocks_csv(path):
    """
    Load a block stream written by write_blocks_csv.

    Returns:
        tuple: (blocks of shape (n_blocks, width), metadata dict with P, L, ts_s, blocks)
    """
    metadata = _read_metadata(path)
    try:
        meta = {
            "P": int(metadata["P"]),
            "L": int(metadata["L"]),
            "ts_s": float(metadata["ts_s"]),
            "blocks": int(metadata["blocks"]),
        }
    except (KeyError, ValueError) as e:
        raise ValidationError(f"{path}: malformed block-stream header ({e})") from e
    frame = pd.read_csv(path, comment="#")
    for column in ("block", "sample", "re", "im"):
        if column not in frame:
            raise ValidationError(f"{path}: missing column '{column}'")
    frame = frame.sort_values(["block", "sample"])
    n_blocks = meta["blocks"]
    if len(frame) % max(n_blocks, 1):
        raise ValidationError(f"{path}: rows do not split into {n_blocks} blocks")
    values = frame["re"].to_numpy() + 1j * frame["im"].to_numpy()
    if not np.any(frame["im"].to_numpy()):
        values = values.real
    return values.reshape(n_blocks, -1), meta


def write_report_json(report, path):
    """
    Write a report dict as indented, key-sorted JSON.

    Args:
        report: JSON-serializable dict; numpy scalars are written as floats
        path: Output path, parent directories created as needed

    Returns:
        str: path
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(report, handle, indent=2, sort_keys=True, default=float)
        handle.write("\n")
    logger.debug(f"Wrote report {path}")
    return path


def write_table_csv(rows, path):
    """Generic report table from a list of dicts."""
    return _write(pd.DataFrame(rows), path)
