"""Binary round-trip and invariant checks for the embedding store."""

import io
import struct

import numpy as np
import pytest

from reidrank import (
    EmbeddingRecord,
    EmbeddingSet,
    FormatError,
    InvalidSetError,
    read_metric_matrix,
    read_set,
    validate_set,
    write_metric_matrix,
    write_set,
)

from conftest import random_embedding_set


def roundtrip(eset):
    buf = io.BytesIO()
    write_set(eset, buf)
    buf.seek(0)
    return read_set(buf)


class TestWriteRead:
    def test_empty_set_roundtrips(self):
        eset = EmbeddingSet(dataset_tag="empty", dimension=4, records=[])
        assert roundtrip(eset) == eset

    def test_single_record_bit_identical(self):
        eset = EmbeddingSet.from_arrays("one", np.array([[1.0, 2.0]], dtype=np.float32))
        back = roundtrip(eset)
        assert back == eset
        assert back.records[0].vector.tobytes() == eset.records[0].vector.tobytes()

    def test_seeded_corpus_roundtrips_field_by_field(self, rng):
        eset = random_embedding_set(
            rng,
            1000,
            16,
            tag="corpus",
            labels=rng.integers(0, 50, 1000),
            cameras=rng.integers(0, 6, 1000),
        )
        back = roundtrip(eset)
        assert back.dataset_tag == eset.dataset_tag
        assert back.dimension == eset.dimension
        assert len(back.records) == 1000
        for a, b in zip(back.records, eset.records):
            assert a.record_id == b.record_id
            assert a.person_label == b.person_label
            assert a.camera_id == b.camera_id
            assert a.vector.tobytes() == b.vector.tobytes()

    def test_byte_count_matches_layout(self, rng):
        eset = random_embedding_set(rng, 7, 5, tag="count")
        buf = io.BytesIO()
        written = write_set(eset, buf)
        header = 4 + 2 + 4 + 8 + 2 + len(b"count")
        assert written == header + 7 * (4 + 4 + 2 + 4 * 5)
        assert written == len(buf.getvalue())

    def test_invalid_set_rejected_before_writing(self):
        bad = EmbeddingSet(
            dataset_tag="bad",
            dimension=2,
            records=[EmbeddingRecord(0, 0, 0, np.array([np.nan, 1.0], np.float32))],
        )
        buf = io.BytesIO()
        with pytest.raises(InvalidSetError):
            write_set(bad, buf)
        assert buf.getvalue() == b""


class TestReadErrors:
    def _valid_bytes(self, rng, n=3, dim=4, tag="t"):
        eset = random_embedding_set(rng, n, dim, tag=tag)
        buf = io.BytesIO()
        write_set(eset, buf)
        return bytearray(buf.getvalue()), eset

    def test_bad_magic(self, rng):
        raw, _ = self._valid_bytes(rng)
        raw[:4] = b"NOPE"
        with pytest.raises(FormatError, match="magic"):
            read_set(io.BytesIO(bytes(raw)))

    def test_unsupported_version(self, rng):
        raw, _ = self._valid_bytes(rng)
        raw[4:6] = struct.pack("<H", 9)
        with pytest.raises(FormatError, match="version"):
            read_set(io.BytesIO(bytes(raw)))

    def test_zero_dimension(self):
        raw = struct.pack("<4sHIQ", b"REID", 1, 0, 0) + struct.pack("<H", 0)
        with pytest.raises(FormatError, match="dimension"):
            read_set(io.BytesIO(raw))

    def test_truncated_mid_record(self, rng):
        raw, _ = self._valid_bytes(rng)
        with pytest.raises(FormatError, match="truncated"):
            read_set(io.BytesIO(bytes(raw[:-5])))

    def test_truncated_header(self):
        with pytest.raises(FormatError, match="truncated"):
            read_set(io.BytesIO(b"REID"))

    def test_non_finite_float_rejected(self, rng):
        raw, eset = self._valid_bytes(rng, n=1, dim=2, tag="x")
        vec_offset = len(raw) - 8  # last record's 2 float32 values
        raw[vec_offset : vec_offset + 4] = struct.pack("<f", np.nan)
        with pytest.raises(FormatError, match="non-finite"):
            read_set(io.BytesIO(bytes(raw)))

    def test_duplicate_record_ids_rejected(self, rng):
        raw, eset = self._valid_bytes(rng, n=2, dim=2, tag="x")
        base = 18 + 2 + 1  # header + tag length field + tag "x"
        second = base + (4 + 4 + 2 + 8)
        raw[second : second + 4] = raw[base : base + 4]
        with pytest.raises(FormatError, match="unique-record-id"):
            read_set(io.BytesIO(bytes(raw)))


class TestValidateSet:
    def test_valid_set_has_no_violations(self, rng):
        assert validate_set(random_embedding_set(rng, 5, 3)) == []

    def test_nan_entry_names_the_record(self):
        eset = EmbeddingSet(
            dataset_tag="v",
            dimension=2,
            records=[
                EmbeddingRecord(0, 1, 0, np.array([0.5, 0.5], np.float32)),
                EmbeddingRecord(7, 1, 0, np.array([np.nan, 0.5], np.float32)),
            ],
        )
        violations = validate_set(eset)
        assert len(violations) == 1
        assert violations[0].record_id == 7
        assert violations[0].rule == "finite-values"

    def test_duplicate_ids_yield_one_violation(self):
        vec = np.zeros(2, np.float32)
        eset = EmbeddingSet(
            dataset_tag="v",
            dimension=2,
            records=[
                EmbeddingRecord(3, 1, 0, vec),
                EmbeddingRecord(3, 2, 0, vec),
                EmbeddingRecord(4, 2, 0, vec),
            ],
        )
        violations = validate_set(eset)
        assert [v.rule for v in violations] == ["unique-record-id"]
        assert violations[0].record_id == 3

    def test_wrong_vector_length(self):
        eset = EmbeddingSet(
            dataset_tag="v",
            dimension=3,
            records=[EmbeddingRecord(0, 1, 0, np.zeros(2, np.float32))],
        )
        assert [v.rule for v in validate_set(eset)] == ["vector-length"]


class TestMetricMatrixFormat:
    def test_roundtrip_bit_exact(self, rng):
        matrix = rng.standard_normal((6, 6))
        buf = io.BytesIO()
        written = write_metric_matrix(matrix, buf)
        assert written == 4 + 2 + 4 + 8 * 36
        buf.seek(0)
        back = read_metric_matrix(buf)
        assert back.tobytes() == np.ascontiguousarray(matrix).tobytes()

    def test_bad_magic(self):
        raw = struct.pack("<4sHI", b"REID", 1, 2) + b"\x00" * 32
        with pytest.raises(FormatError, match="magic"):
            read_metric_matrix(io.BytesIO(raw))

    def test_truncated_payload(self, rng):
        buf = io.BytesIO()
        write_metric_matrix(rng.standard_normal((3, 3)), buf)
        raw = buf.getvalue()[:-1]
        with pytest.raises(FormatError, match="truncated"):
            read_metric_matrix(io.BytesIO(raw))

    def test_non_square_rejected_on_write(self, rng):
        with pytest.raises(ValueError, match="square"):
            write_metric_matrix(rng.standard_normal((2, 3)), io.BytesIO())
