"""Readers and writers for the .fvecs/.bvecs/.ivecs record layout.

Every record is a little-endian int32 dimension followed by `dim` components
of the element type (float32, uint8, or int32). All records in a file must
share one dimension; parse errors report the offending record index and byte
offset.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import FormatError, InvalidArgument

KINDS = {
    "f32": (np.dtype("<f4"), ".fvecs"),
    "u8": (np.dtype("u1"), ".bvecs"),
    "i32": (np.dtype("<i4"), ".ivecs"),
}


def _read_vecs_scan(path, dtype, max_rows):
    """Record-by-record parse with precise error positions."""
    rows = []
    dim = None
    with open(path, "rb") as f:
        record = 0
        while max_rows is None or record < max_rows:
            offset = f.tell()
            head = f.read(4)
            if not head:
                break
            if len(head) < 4:
                raise FormatError(
                    f"record {record} at byte {offset}: truncated dimension header"
                )
            d = int(np.frombuffer(head, dtype="<i4")[0])
            if d <= 0:
                raise FormatError(
                    f"record {record} at byte {offset}: non-positive dim {d}"
                )
            if dim is None:
                dim = d
            elif d != dim:
                raise FormatError(
                    f"record {record} at byte {offset}: dim {d} differs from {dim}"
                )
            payload = f.read(d * dtype.itemsize)
            if len(payload) < d * dtype.itemsize:
                raise FormatError(
                    f"record {record} at byte {offset}: truncated payload "
                    f"({len(payload)} of {d * dtype.itemsize} bytes)"
                )
            rows.append(np.frombuffer(payload, dtype=dtype))
            record += 1
    if not rows:
        return np.zeros((0, 0), dtype=dtype)
    return np.vstack(rows)


def read_vecs(path, kind: str, max_rows: int | None = None) -> np.ndarray:
    """Parse a vecs file into an (N, dim) array of the element type.

    `max_rows` caps the number of records read; the rest of the file is
    ignored. Raises FormatError on truncated records or inconsistent dims.
    """
    if kind not in KINDS:
        raise InvalidArgument(f"kind must be one of {sorted(KINDS)}, got {kind!r}")
    dtype, _ = KINDS[kind]
    size = os.path.getsize(path)
    if size == 0:
        return np.zeros((0, 0), dtype=dtype)
    with open(path, "rb") as f:
        head = f.read(4)
    if len(head) < 4:
        raise FormatError("record 0 at byte 0: truncated dimension header")
    dim = int(np.frombuffer(head, dtype="<i4")[0])
    record_bytes = 4 + dim * dtype.itemsize
    if dim > 0 and size % record_bytes == 0:
        # uniform fast path: one bulk read, header check vectorized
        nrec = size // record_bytes
        if max_rows is not None:
            nrec = min(nrec, max_rows)
        raw = np.fromfile(path, dtype=np.uint8, count=nrec * record_bytes)
        raw = raw.reshape(nrec, record_bytes)
        dims = raw[:, :4].copy().view("<i4")[:, 0]
        if (dims == dim).all():
            return raw[:, 4:].copy().view(dtype)
    return _read_vecs_scan(path, dtype, max_rows)


def write_vecs(path, data: np.ndarray, kind: str) -> None:
    """Write an (N, dim) array in the vecs layout; inverse of read_vecs."""
    if kind not in KINDS:
        raise InvalidArgument(f"kind must be one of {sorted(KINDS)}, got {kind!r}")
    dtype, _ = KINDS[kind]
    data = np.asarray(data)
    if data.ndim != 2:
        raise InvalidArgument(f"data must be 2-D, got shape {data.shape}")
    n, dim = data.shape
    body = data.astype(dtype, copy=False)
    heads = np.full(n, dim, dtype="<i4")
    interleaved = np.empty(n * (4 + dim * dtype.itemsize), dtype=np.uint8)
    rec = interleaved.reshape(n, 4 + dim * dtype.itemsize)
    rec[:, :4] = heads.view(np.uint8).reshape(n, 4)
    rec[:, 4:] = np.ascontiguousarray(body).view(np.uint8).reshape(n, -1)
    with open(path, "wb") as f:
        f.write(interleaved.tobytes())


def default_extension(kind: str) -> str:
    return KINDS[kind][1]
