"""Checkpoint files: an ASCII manifest followed by little-endian float32 blobs.

Layout::

    DPN-CHECKPOINT 1
    <name> <dim0>x<dim1>... <byte offset>
    ...
    END
    <blob bytes>

Offsets are relative to the first blob byte. Scalars use the shape token ``-``.
"""
from pathlib import Path

import numpy as np

MAGIC = "DPN-CHECKPOINT 1"


def save_checkpoint(path, arrays: dict) -> None:
    lines = [MAGIC]
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        if any(c.isspace() for c in name):
            raise ValueError(f"parameter name contains whitespace: {name!r}")
        data = np.ascontiguousarray(arr, dtype="<f4")
        shape = "x".join(str(n) for n in data.shape) or "-"
        lines.append(f"{name} {shape} {offset}")
        blobs.append(data.tobytes())
        offset += data.nbytes
    lines.append("END")
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii") + b"".join(blobs))


def load_checkpoint(path) -> dict:
    raw = Path(path).read_bytes()
    head, sep, body = raw.partition(b"\nEND\n")
    if not sep:
        raise ValueError(f"{path}: missing END marker")
    lines = head.decode("ascii").split("\n")
    if lines[0] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (header {lines[0]!r})")
    out = {}
    for line in lines[1:]:
        name, shape_tok, off = line.split(" ")
        shape = () if shape_tok == "-" else tuple(int(n) for n in shape_tok.split("x"))
        count = int(np.prod(shape)) if shape else 1
        start = int(off)
        out[name] = np.frombuffer(body, dtype="<f4", count=count, offset=start).reshape(shape).copy()
    return out
