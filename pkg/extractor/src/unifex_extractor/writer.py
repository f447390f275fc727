"""Writers for the EMB1 and manifest formats consumed by the probing toolkit.

EMB1: magic ``EMB1``, u32 LE rows, u32 LE dim, dtype byte 0x01 (float32),
three reserved zero bytes, then row-major float32 LE values. Manifest:
UTF-8 lines ``sample_id <TAB> class_id <TAB> split <TAB> domain``, record i
describing row i of the paired EMB1 file.
"""

from __future__ import annotations

import struct

import numpy as np

_HEADER = struct.Struct("<4sIIB3s")
EMB1_MAGIC = b"EMB1"
DTYPE_FLOAT32 = 0x01


def write_emb1(values: np.ndarray, path) -> None:
    arr = np.ascontiguousarray(values, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"embeddings must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("embeddings contain non-finite values")
    n, d = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(EMB1_MAGIC, n, d, DTYPE_FLOAT32, b"\x00\x00\x00"))
        fh.write(arr.tobytes())


def write_manifest(rows, path) -> None:
    """rows: iterable of (sample_id, class_id, split, domain)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sample_id, class_id, split, domain in rows:
            fh.write(f"{sample_id}\t{class_id}\t{split}\t{domain}\n")
