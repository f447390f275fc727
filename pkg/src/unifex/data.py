"""Embedding matrices, dataset manifests, and their on-disk formats.

Two file formats are defined here and consumed everywhere else:

EMB1 (binary, little-endian)
    bytes 0-3    magic ``EMB1``
    bytes 4-7    u32 row count N
    bytes 8-11   u32 dimension D
    byte  12     dtype code (0x01 = float32)
    bytes 13-15  reserved, zero
    then         N*D float32 values, row-major

Manifest (text)
    UTF-8, one record per non-empty line, tab-separated:
    ``sample_id <TAB> class_id <TAB> split <TAB> domain`` with
    split in {train, index, query}. Record i describes row i of the
    paired EMB1 file; pairing is positional, never keyed.

All types are immutable after construction and safe to share across
concurrent readers.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import DataError, FormatError, IoError

logger = logging.getLogger(__name__)

EMB1_MAGIC = b"EMB1"
DTYPE_FLOAT32 = 0x01
_HEADER = struct.Struct("<4sIIB3s")

SPLITS = ("train", "index", "query")


class EmbeddingMatrix:
    """Dense N x D float32 matrix, one row per sample."""

    def __init__(self, values) -> None:
        arr = np.asarray(values, dtype=np.float32)
        if arr.ndim != 2:
            raise DataError(f"embedding matrix must be 2-D, got {arr.ndim}-D")
        if arr.shape[1] < 1:
            raise DataError("embedding dimension must be >= 1")
        if not np.all(np.isfinite(arr)):
            raise DataError("embedding matrix contains non-finite values")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        self._values = arr

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def rows(self) -> int:
        return self._values.shape[0]

    @property
    def dim(self) -> int:
        return self._values.shape[1]

    def __len__(self) -> int:
        return self.rows

    def __repr__(self) -> str:
        return f"EmbeddingMatrix(rows={self.rows}, dim={self.dim})"


def save_embeddings(matrix: EmbeddingMatrix, path) -> None:
    """Write an EMB1 file; load_embeddings round-trips it bit-exactly."""
    n, d = matrix.rows, matrix.dim
    if n > 0xFFFFFFFF or d > 0xFFFFFFFF:
        raise FormatError("matrix exceeds the u32 range of the EMB1 header")
    header = _HEADER.pack(EMB1_MAGIC, n, d, DTYPE_FLOAT32, b"\x00\x00\x00")
    payload = np.ascontiguousarray(matrix.values, dtype="<f4").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise IoError(f"cannot write embeddings to {path}: {exc}") from exc


def load_embeddings(path) -> EmbeddingMatrix:
    """Read an EMB1 file written by save_embeddings."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read embeddings from {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, n, d, dtype_code, reserved = _HEADER.unpack_from(raw)
    if magic != EMB1_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {EMB1_MAGIC!r}")
    if dtype_code != DTYPE_FLOAT32:
        raise FormatError(f"{path}: unknown dtype code 0x{dtype_code:02x}")
    if reserved != b"\x00\x00\x00":
        raise FormatError(f"{path}: reserved header bytes are not zero")
    expected = _HEADER.size + n * d * 4
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload holds {len(raw) - _HEADER.size} bytes, "
            f"header declares {n}x{d} float32 ({expected - _HEADER.size} bytes)"
        )
    values = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n, d)
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: embedding payload contains non-finite values")
    return EmbeddingMatrix(values)


def l2_normalize_rows(matrix: EmbeddingMatrix) -> tuple[EmbeddingMatrix, np.ndarray]:
    """Scale every row to unit Euclidean norm.

    Zero rows are preserved as zeros and reported via the returned index
    array (curation decides what to do with them; ingestion never drops).
    """
    vals = matrix.values.astype(np.float64)
    norms = np.linalg.norm(vals, axis=1)
    zero_rows = np.flatnonzero(norms == 0.0)
    safe = np.where(norms == 0.0, 1.0, norms)
    out = vals / safe[:, None]
    if zero_rows.size:
        logger.warning("l2_normalize_rows: %d zero-norm row(s) left as zeros", zero_rows.size)
    return EmbeddingMatrix(out), zero_rows


@dataclass(frozen=True)
class ManifestRecord:
    sample_id: str
    class_id: int
    split: str
    domain: str


class DatasetManifest:
    """Per-sample records aligned positionally with an EmbeddingMatrix."""

    def __init__(self, records: Iterable[ManifestRecord]) -> None:
        recs = list(records)
        sample_ids = np.empty(len(recs), dtype=object)
        class_ids = np.empty(len(recs), dtype=np.int64)
        splits = np.empty(len(recs), dtype=object)
        domains = np.empty(len(recs), dtype=object)
        for i, r in enumerate(recs):
            sample_ids[i] = r.sample_id
            class_ids[i] = r.class_id
            splits[i] = r.split
            domains[i] = r.domain
        self._init_columns(sample_ids, class_ids, splits, domains)

    @classmethod
    def from_columns(cls, sample_ids, class_ids, splits, domains) -> "DatasetManifest":
        self = cls.__new__(cls)
        self._init_columns(
            np.asarray(sample_ids, dtype=object),
            np.asarray(class_ids, dtype=np.int64),
            np.asarray(splits, dtype=object),
            np.asarray(domains, dtype=object),
        )
        return self

    def _init_columns(self, sample_ids, class_ids, splits, domains) -> None:
        n = len(sample_ids)
        if not (len(class_ids) == len(splits) == len(domains) == n):
            raise DataError("manifest columns have mismatched lengths")
        if n and class_ids.min() < 0:
            raise DataError("class_id must be >= 0")
        bad = set(np.unique(splits)) - set(SPLITS) if n else set()
        if bad:
            raise DataError(f"unknown split value(s): {sorted(bad)}")
        class_ids = np.ascontiguousarray(class_ids)
        for col in (sample_ids, class_ids, splits, domains):
            col.setflags(write=False)
        self._sample_ids = sample_ids
        self._class_ids = class_ids
        self._splits = splits
        self._domains = domains

    def __len__(self) -> int:
        return len(self._class_ids)

    def __iter__(self) -> Iterator[ManifestRecord]:
        return iter(self.records)

    def __getitem__(self, i: int) -> ManifestRecord:
        return ManifestRecord(
            self._sample_ids[i], int(self._class_ids[i]), self._splits[i], self._domains[i]
        )

    @property
    def records(self) -> tuple[ManifestRecord, ...]:
        return tuple(self[i] for i in range(len(self)))

    @property
    def sample_ids(self) -> np.ndarray:
        return self._sample_ids

    @property
    def class_ids(self) -> np.ndarray:
        return self._class_ids

    @property
    def splits(self) -> np.ndarray:
        return self._splits

    @property
    def domains(self) -> np.ndarray:
        return self._domains

    @property
    def num_classes(self) -> int:
        return int(np.unique(self._class_ids).size)

    def take(self, indices) -> "DatasetManifest":
        """New manifest with the rows at `indices`, in the given order."""
        idx = np.asarray(indices)
        return DatasetManifest.from_columns(
            self._sample_ids[idx], self._class_ids[idx], self._splits[idx], self._domains[idx]
        )

    def __repr__(self) -> str:
        return f"DatasetManifest(records={len(self)}, classes={self.num_classes})"


@dataclass(frozen=True)
class ClassStats:
    """Per-class sample counts with the min/max over non-empty classes."""

    counts: Mapping[int, int]
    n_min: int
    n_max: int

    def __post_init__(self) -> None:
        if self.n_min > self.n_max:
            raise DataError("ClassStats requires n_min <= n_max")

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest) -> "ClassStats":
        if len(manifest) == 0:
            raise DataError("cannot compute class stats of an empty manifest")
        uniq, cnt = np.unique(manifest.class_ids, return_counts=True)
        counts = {int(c): int(n) for c, n in zip(uniq, cnt)}
        return cls(counts=counts, n_min=int(cnt.min()), n_max=int(cnt.max()))

    @classmethod
    def from_counts(cls, counts: Mapping[int, int]) -> "ClassStats":
        nonzero = [n for n in counts.values() if n > 0]
        if not nonzero:
            raise DataError("cannot compute class stats without non-empty classes")
        return cls(counts=dict(counts), n_min=min(nonzero), n_max=max(counts.values()))


def save_manifest(manifest: DatasetManifest, path) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for i in range(len(manifest)):
                fh.write(
                    f"{manifest.sample_ids[i]}\t{manifest.class_ids[i]}\t"
                    f"{manifest.splits[i]}\t{manifest.domains[i]}\n"
                )
    except OSError as exc:
        raise IoError(f"cannot write manifest to {path}: {exc}") from exc


def load_manifest(path) -> DatasetManifest:
    """Parse a tab-separated manifest file, preserving record order.

    Duplicate sample ids are accepted with a warning; they only matter
    for reporting, never for pairing (which is positional).
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().split("\n")
    except OSError as exc:
        raise IoError(f"cannot read manifest from {path}: {exc}") from exc

    sample_ids: list[str] = []
    class_ids: list[int] = []
    splits: list[str] = []
    domains: list[str] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise FormatError(
                f"{path}: line {lineno}: expected 4 tab-separated fields, got {len(fields)}"
            )
        sid, cid_str, split, domain = fields
        try:
            cid = int(cid_str)
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: class_id {cid_str!r} is not an integer")
        if cid < 0:
            raise DataError(f"{path}: line {lineno}: class_id must be >= 0, got {cid}")
        if split not in SPLITS:
            raise FormatError(
                f"{path}: line {lineno}: split {split!r} not in {'/'.join(SPLITS)}"
            )
        sample_ids.append(sid)
        class_ids.append(cid)
        splits.append(split)
        domains.append(domain)

    n_dup = len(sample_ids) - len(set(sample_ids))
    if n_dup:
        logger.warning("load_manifest: %s: %d duplicate sample_id value(s)", path, n_dup)
    return DatasetManifest.from_columns(sample_ids, class_ids, splits, domains)
