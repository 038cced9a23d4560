"""Embedding data model and bit-exact binary persistence.

Two little-endian container formats share the same envelope style:

Embedding set (magic ``REID``)::

    magic      4 bytes  b"REID"
    version    u16      currently 1
    dimension  u32      vector length, >= 1
    count      u64      number of records
    tag_len    u16      byte length of the UTF-8 dataset tag
    tag        tag_len bytes
    records    count * (record_id u32, person_label u32, camera_id u16,
                        vector dimension * f32)

Metric matrix (magic ``REIM``)::

    magic      4 bytes  b"REIM"
    version    u16      currently 1
    side       u32      matrix side length, >= 1
    payload    side * side * f64, row major

Vectors are stored as 32-bit floats and round-trip bit exactly; computation
modules widen to 64-bit on entry.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FormatError, InvalidSetError

SET_MAGIC = b"REID"
MATRIX_MAGIC = b"REIM"
FORMAT_VERSION = 1

_SET_HEADER = struct.Struct("<4sHIQ")
_TAG_LEN = struct.Struct("<H")
_RECORD_FIXED = struct.Struct("<IIH")
_MATRIX_HEADER = struct.Struct("<4sHI")


@dataclass(frozen=True, eq=False)
class EmbeddingRecord:
    """One image's feature vector plus identity and camera provenance."""

    record_id: int
    person_label: int
    camera_id: int
    vector: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype="<f4").reshape(-1)
        object.__setattr__(self, "vector", vec)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingRecord):
            return NotImplemented
        return (
            self.record_id == other.record_id
            and self.person_label == other.person_label
            and self.camera_id == other.camera_id
            and self.vector.shape == other.vector.shape
            and self.vector.tobytes() == other.vector.tobytes()
        )


@dataclass(eq=False)
class EmbeddingSet:
    """An ordered collection of records sharing one vector dimension."""

    dataset_tag: str
    dimension: int
    records: list[EmbeddingRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return (
            self.dataset_tag == other.dataset_tag
            and self.dimension == other.dimension
            and self.records == other.records
        )

    @classmethod
    def from_arrays(
        cls,
        dataset_tag: str,
        vectors,
        person_labels=None,
        camera_ids=None,
        record_ids=None,
    ) -> "EmbeddingSet":
        """Build a set from an (n, dim) matrix plus optional metadata arrays.

        Missing record ids default to 0..n-1; missing labels and cameras
        default to zeros.
        """
        matrix = np.asarray(vectors, dtype="<f4")
        if matrix.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got shape {matrix.shape}")
        n = matrix.shape[0]
        record_ids = range(n) if record_ids is None else record_ids
        person_labels = [0] * n if person_labels is None else person_labels
        camera_ids = [0] * n if camera_ids is None else camera_ids
        records = [
            EmbeddingRecord(int(rid), int(label), int(camera), row)
            for rid, label, camera, row in zip(record_ids, person_labels, camera_ids, matrix)
        ]
        return cls(dataset_tag=dataset_tag, dimension=matrix.shape[1], records=records)

    def vectors(self, dtype=np.float64) -> np.ndarray:
        """All vectors stacked into an (n, dimension) matrix."""
        if not self.records:
            return np.empty((0, self.dimension), dtype=dtype)
        return np.stack([r.vector for r in self.records]).astype(dtype)

    def record_ids(self) -> np.ndarray:
        return np.array([r.record_id for r in self.records], dtype=np.int64)

    def person_labels(self) -> np.ndarray:
        return np.array([r.person_label for r in self.records], dtype=np.int64)

    def camera_ids(self) -> np.ndarray:
        return np.array([r.camera_id for r in self.records], dtype=np.int64)


@dataclass(frozen=True)
class Violation:
    """One invariant breach; ``record_id`` is None for set-level rules."""

    record_id: int | None
    rule: str
    message: str

    def __str__(self) -> str:
        where = "set" if self.record_id is None else f"record {self.record_id}"
        return f"[{self.rule}] {where}: {self.message}"


def validate_set(eset: EmbeddingSet) -> list[Violation]:
    """Check every invariant; an empty list means the set is valid."""
    violations: list[Violation] = []
    if eset.dimension < 1:
        violations.append(
            Violation(None, "dimension-positive", f"dimension is {eset.dimension}")
        )
    seen: set[int] = set()
    duplicates: set[int] = set()
    for rec in eset.records:
        if rec.record_id in seen:
            duplicates.add(rec.record_id)
        seen.add(rec.record_id)
        if rec.vector.shape != (eset.dimension,):
            violations.append(
                Violation(
                    rec.record_id,
                    "vector-length",
                    f"length {rec.vector.shape[0]} != declared dimension {eset.dimension}",
                )
            )
        if not np.isfinite(rec.vector).all():
            violations.append(
                Violation(rec.record_id, "finite-values", "vector has NaN or Inf entries")
            )
    for dup in sorted(duplicates):
        violations.append(
            Violation(dup, "unique-record-id", "record_id appears more than once")
        )
    return violations


def write_set(eset: EmbeddingSet, sink) -> int:
    """Serialize a valid set to a binary sink; returns the byte count."""
    violations = validate_set(eset)
    if violations:
        raise InvalidSetError(violations)
    tag_bytes = eset.dataset_tag.encode("utf-8")
    if len(tag_bytes) > 0xFFFF:
        raise ValueError("dataset_tag longer than 65535 UTF-8 bytes")
    written = 0
    written += sink.write(
        _SET_HEADER.pack(SET_MAGIC, FORMAT_VERSION, eset.dimension, len(eset.records))
    )
    written += sink.write(_TAG_LEN.pack(len(tag_bytes)))
    written += sink.write(tag_bytes)
    for rec in eset.records:
        written += sink.write(
            _RECORD_FIXED.pack(rec.record_id, rec.person_label, rec.camera_id)
        )
        written += sink.write(rec.vector.astype("<f4", copy=False).tobytes())
    return written


def _read_exact(stream, n: int, what: str) -> bytes:
    buf = stream.read(n)
    if buf is None or len(buf) < n:
        raise FormatError(f"truncated stream while reading {what}")
    return buf


def read_set(stream) -> EmbeddingSet:
    """Parse a binary stream; returns a fully valid set or raises FormatError."""
    magic, version, dimension, count = _SET_HEADER.unpack(
        _read_exact(stream, _SET_HEADER.size, "header")
    )
    if magic != SET_MAGIC:
        raise FormatError(f"bad magic bytes {magic!r}, expected {SET_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}")
    if dimension == 0:
        raise FormatError("declared dimension is 0")
    (tag_len,) = _TAG_LEN.unpack(_read_exact(stream, _TAG_LEN.size, "tag length"))
    try:
        tag = _read_exact(stream, tag_len, "dataset tag").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"dataset tag is not valid UTF-8: {exc}") from exc

    vec_bytes = 4 * dimension
    records: list[EmbeddingRecord] = []
    for i in range(count):
        record_id, person_label, camera_id = _RECORD_FIXED.unpack(
            _read_exact(stream, _RECORD_FIXED.size, f"record {i}")
        )
        raw = _read_exact(stream, vec_bytes, f"vector of record {i}")
        vector = np.frombuffer(raw, dtype="<f4").copy()
        if not np.isfinite(vector).all():
            raise FormatError(f"record {record_id} contains non-finite floats")
        records.append(EmbeddingRecord(record_id, person_label, camera_id, vector))

    eset = EmbeddingSet(dataset_tag=tag, dimension=dimension, records=records)
    violations = validate_set(eset)
    if violations:
        raise FormatError(
            "stream decodes to an invalid set: " + "; ".join(str(v) for v in violations)
        )
    return eset


def write_set_file(eset: EmbeddingSet, path) -> int:
    with open(path, "wb") as fh:
        return write_set(eset, fh)


def read_set_file(path) -> EmbeddingSet:
    with open(path, "rb") as fh:
        return read_set(fh)


def write_metric_matrix(matrix: np.ndarray, sink) -> int:
    """Serialize a square float64 matrix under the REIM envelope."""
    arr = np.asarray(matrix, dtype="<f8")
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"metric matrix must be square, got shape {arr.shape}")
    side = arr.shape[0]
    if side == 0:
        raise ValueError("metric matrix side must be >= 1")
    if not np.isfinite(arr).all():
        raise ValueError("metric matrix contains non-finite values")
    written = sink.write(_MATRIX_HEADER.pack(MATRIX_MAGIC, FORMAT_VERSION, side))
    written += sink.write(np.ascontiguousarray(arr).tobytes())
    return written


def read_metric_matrix(stream) -> np.ndarray:
    magic, version, side = _MATRIX_HEADER.unpack(
        _read_exact(stream, _MATRIX_HEADER.size, "matrix header")
    )
    if magic != MATRIX_MAGIC:
        raise FormatError(f"bad magic bytes {magic!r}, expected {MATRIX_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}")
    if side == 0:
        raise FormatError("declared matrix side is 0")
    raw = _read_exact(stream, 8 * side * side, "matrix payload")
    matrix = np.frombuffer(raw, dtype="<f8").reshape(side, side).copy()
    if not np.isfinite(matrix).all():
        raise FormatError("matrix contains non-finite floats")
    return matrix


def write_metric_matrix_file(matrix: np.ndarray, path) -> int:
    with open(path, "wb") as fh:
        return write_metric_matrix(matrix, fh)


def read_metric_matrix_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_metric_matrix(fh)
