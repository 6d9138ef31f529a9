"""Tensor-container checkpoint format.

Layout: a magic line, a count line, one `name rows cols` line per tensor (in
order), an `end` line, then the raw little-endian float64 payloads
concatenated in header order. Round-trips are bit-exact.
"""

from __future__ import annotations

import numpy as np

from .errors import CheckpointError

MAGIC = b"GCLREC-CKPT-1\n"


def save_checkpoint(path: str, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(f"{len(tensors)}\n".encode("ascii"))
        arrays = []
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            if arr.ndim != 2:
                raise CheckpointError(f"tensor {name!r} must be 2-D, got {arr.shape}")
            if any(ch.isspace() for ch in name):
                raise CheckpointError(f"tensor name {name!r} contains whitespace")
            fh.write(f"{name} {arr.shape[0]} {arr.shape[1]}\n".encode("ascii"))
            arrays.append(arr)
        fh.write(b"end\n")
        for arr in arrays:
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}")
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    rest = blob[len(MAGIC):]
    head, _, rest = rest.partition(b"\n")
    try:
        count = int(head)
    except ValueError:
        raise CheckpointError(f"{path}: malformed tensor count {head!r}")
    entries = []
    for k in range(count):
        line, _, rest = rest.partition(b"\n")
        parts = line.decode("ascii", errors="replace").split()
        if len(parts) != 3:
            raise CheckpointError(f"{path}: malformed header entry {k}: {line!r}")
        name, rows, cols = parts[0], parts[1], parts[2]
        try:
            entries.append((name, int(rows), int(cols)))
        except ValueError:
            raise CheckpointError(f"{path}: non-integer shape in header entry {k}")
    terminator, _, payload = rest.partition(b"\n")
    if terminator != b"end":
        raise CheckpointError(f"{path}: header not terminated (got {terminator!r})")
    out: dict[str, np.ndarray] = {}
    offset = 0
    for name, rows, cols in entries:
        nbytes = rows * cols * 8
        chunk = payload[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(
                f"{path}: truncated payload for {name!r} "
                f"(header says {rows}x{cols}, {nbytes} bytes; got {len(chunk)})"
            )
        out[name] = np.frombuffer(chunk, dtype="<f8").reshape(rows, cols).copy()
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} trailing bytes after payload")
    return out
