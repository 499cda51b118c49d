"""Binary field/checkpoint formats and CSV traces.

All binary numbers are little-endian.

Field file (``PFF1``)::

    b"PFF1" | u8 d | d x u32 dims | f64 epsilon | f64 delta_t | f64 L | prod(dims) x f64 (row-major)

Checkpoint file (``DRN1`` / ``DRN2``)::

    magic | u32 parameter count | count x f64 | u64 epoch | f64 train_loss | f64 validation_score
"""
from __future__ import annotations

import csv
import io
import os
import struct
import tempfile
from dataclasses import astuple, dataclass
from pathlib import Path

import numpy as np

from .grid import Grid
from .network import FormatError, net_deserialize_prefix, net_serialize
from .training import Checkpoint

FIELD_MAGIC = b"PFF1"
METRICS_HEADER = ("iter", "time", "volume", "volume_error", "l2_error", "energy", "radius_estimate")
TRAIN_HEADER = ("epoch", "train_loss", "validation_score")


def atomic_write(path, data: bytes) -> None:
    """Write to a temporary sibling then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def field_header_size(d: int) -> int:
    return 4 + 1 + 4 * d + 24


def field_to_bytes(u: np.ndarray, grid: Grid) -> bytes:
    grid.check_field(u)
    if u.shape != grid.shape:
        raise ValueError(f"expected a single field of shape {grid.shape}, got {u.shape}")
    header = FIELD_MAGIC + struct.pack("<B", grid.d) + struct.pack(f"<{grid.d}I", *u.shape)
    header += struct.pack("<3d", grid.epsilon, grid.delta_t, grid.L)
    return header + np.ascontiguousarray(u, dtype="<f8").tobytes()


def field_from_bytes(buf: bytes):
    """Parse a ``PFF1`` buffer; returns ``(values, grid)``."""
    if len(buf) < 5 or buf[:4] != FIELD_MAGIC:
        raise FormatError(f"bad field magic {bytes(buf[:4])!r}")
    d = buf[4]
    if d not in (1, 2, 3):
        raise FormatError(f"unsupported field dimension {d}")
    head = field_header_size(d)
    if len(buf) < head:
        raise FormatError("truncated field header")
    dims = struct.unpack(f"<{d}I", buf[5:5 + 4 * d])
    eps, dt, L = struct.unpack("<3d", buf[5 + 4 * d:head])
    if len(set(dims)) != 1:
        raise FormatError(f"non-square field dims {dims}")
    count = int(np.prod(dims))
    if len(buf) != head + 8 * count:
        raise FormatError(f"payload of {len(buf) - head} bytes does not match dims {dims}")
    values = np.frombuffer(buf[head:], dtype="<f8").astype(float).reshape(dims)
    return values, Grid(d, dims[0], L, eps, dt)


def field_write(u: np.ndarray, grid: Grid, path) -> None:
    atomic_write(path, field_to_bytes(u, grid))


def field_read(path):
    return field_from_bytes(Path(path).read_bytes())


def checkpoint_to_bytes(ck: Checkpoint) -> bytes:
    return net_serialize(ck.net) + struct.pack("<Qdd", ck.epoch, ck.train_loss, ck.validation_score)


def checkpoint_from_bytes(buf: bytes) -> Checkpoint:
    net, used = net_deserialize_prefix(buf)
    if len(buf) != used + 24:
        raise FormatError(f"checkpoint trailer has {len(buf) - used} bytes, expected 24")
    epoch, loss, score = struct.unpack("<Qdd", buf[used:])
    return Checkpoint(epoch, net, loss, score)


def checkpoint_write(ck: Checkpoint, path) -> None:
    atomic_write(path, checkpoint_to_bytes(ck))


def checkpoint_read(path) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())


@dataclass
class MetricRow:
    iter: int
    time: float
    volume: float
    volume_error: float
    l2_error: float
    energy: float
    radius_estimate: float


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in (astuple(row) if isinstance(row, MetricRow) else row)])
    return buf.getvalue().encode()


def metrics_write(rows, path) -> None:
    atomic_write(path, csv_bytes(METRICS_HEADER, rows))


def train_trace_write(trace, path) -> None:
    atomic_write(path, csv_bytes(TRAIN_HEADER, trace))


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
