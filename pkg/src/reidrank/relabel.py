"""Merging several datasets' identity label spaces into one.

Each source dataset keeps its own raw integer labels; the merged space
assigns combined labels 1..M (M = sum of per-dataset identity counts)
injectively over (dataset_tag, raw_label) pairs, in manifest order and then
ascending raw-label order, so the assignment is reproducible.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DuplicateTagError, UnknownLabelError
from .store import EmbeddingRecord, EmbeddingSet


@dataclass(frozen=True)
class DatasetManifest:
    """Label inventory of one dataset: identity and image counts plus the
    (record_id, raw_label) pair of every image."""

    dataset_tag: str
    identity_count: int
    image_count: int
    labels: tuple[tuple[int, int], ...]

    def validate(self) -> None:
        if self.identity_count < 1:
            raise ValueError(
                f"{self.dataset_tag}: identity_count must be >= 1, got {self.identity_count}"
            )
        if self.image_count != len(self.labels):
            raise ValueError(
                f"{self.dataset_tag}: image_count {self.image_count} != "
                f"{len(self.labels)} label entries"
            )
        distinct = {raw for _, raw in self.labels}
        if len(distinct) != self.identity_count:
            raise ValueError(
                f"{self.dataset_tag}: {len(distinct)} distinct raw labels != "
                f"declared identity_count {self.identity_count}"
            )

    @classmethod
    def from_embedding_set(cls, eset: EmbeddingSet) -> "DatasetManifest":
        labels = tuple((r.record_id, r.person_label) for r in eset.records)
        return cls(
            dataset_tag=eset.dataset_tag,
            identity_count=len({raw for _, raw in labels}),
            image_count=len(labels),
            labels=labels,
        )

    def to_dict(self) -> dict:
        return {
            "dataset_tag": self.dataset_tag,
            "identity_count": self.identity_count,
            "image_count": self.image_count,
            "labels": [[rid, raw] for rid, raw in self.labels],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetManifest":
        return cls(
            dataset_tag=str(data["dataset_tag"]),
            identity_count=int(data["identity_count"]),
            image_count=int(data["image_count"]),
            labels=tuple((int(rid), int(raw)) for rid, raw in data["labels"]),
        )


@dataclass(frozen=True)
class CombinedManifest:
    """Result of a merge: totals, the injective label mapping, and every
    record relabeled into the combined space."""

    identity_total: int
    image_total: int
    mapping: dict[tuple[str, int], int]
    relabeled: tuple[tuple[str, int, int], ...]

    def combined_label(self, dataset_tag: str, raw_label: int) -> int:
        try:
            return self.mapping[(dataset_tag, int(raw_label))]
        except KeyError:
            raise UnknownLabelError(
                f"({dataset_tag!r}, {raw_label}) is not in the combined mapping"
            ) from None

    def to_dict(self) -> dict:
        return {
            "identity_total": self.identity_total,
            "image_total": self.image_total,
            "mapping": [
                [tag, raw, combined]
                for (tag, raw), combined in sorted(self.mapping.items())
            ],
            "relabeled": [[tag, rid, combined] for tag, rid, combined in self.relabeled],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CombinedManifest":
        return cls(
            identity_total=int(data["identity_total"]),
            image_total=int(data["image_total"]),
            mapping={
                (str(tag), int(raw)): int(combined)
                for tag, raw, combined in data["mapping"]
            },
            relabeled=tuple(
                (str(tag), int(rid), int(combined))
                for tag, rid, combined in data["relabeled"]
            ),
        )


def merge_manifests(manifests) -> CombinedManifest:
    """Merge dataset manifests into one combined label space.

    Combined labels are assigned 1..M in manifest order, then by ascending
    raw label within each manifest. Tags must be unique.
    """
    manifests = list(manifests)
    if not manifests:
        raise ValueError("need at least one manifest")
    seen_tags = set()
    for manifest in manifests:
        manifest.validate()
        if manifest.dataset_tag in seen_tags:
            raise DuplicateTagError(f"duplicate dataset_tag {manifest.dataset_tag!r}")
        seen_tags.add(manifest.dataset_tag)

    mapping: dict[tuple[str, int], int] = {}
    next_label = 1
    for manifest in manifests:
        for raw in sorted({raw for _, raw in manifest.labels}):
            mapping[(manifest.dataset_tag, raw)] = next_label
            next_label += 1

    relabeled = tuple(
        (m.dataset_tag, rid, mapping[(m.dataset_tag, raw)])
        for m in manifests
        for rid, raw in m.labels
    )
    return CombinedManifest(
        identity_total=next_label - 1,
        image_total=sum(m.image_count for m in manifests),
        mapping=mapping,
        relabeled=relabeled,
    )


def apply_mapping(eset: EmbeddingSet, combined: CombinedManifest) -> EmbeddingSet:
    """Return a copy of the set with person labels in the combined space."""
    records = [
        EmbeddingRecord(
            record_id=r.record_id,
            person_label=combined.combined_label(eset.dataset_tag, r.person_label),
            camera_id=r.camera_id,
            vector=r.vector,
        )
        for r in eset.records
    ]
    return EmbeddingSet(
        dataset_tag=eset.dataset_tag, dimension=eset.dimension, records=records
    )


def write_mapping_csv(fh, combined: CombinedManifest) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["dataset_tag", "raw_label", "combined_label"])
    for (tag, raw), label in sorted(combined.mapping.items()):
        writer.writerow([tag, raw, label])


def write_combined_json(fh, combined: CombinedManifest) -> None:
    fh.write(json.dumps(combined.to_dict(), indent=2, sort_keys=True))
    fh.write("\n")


class LabelSpaceMerger(BaseEstimator, TransformerMixin):
    """Transformer that relabels embedding sets into a combined label space.

    Fit on a sequence of DatasetManifest objects; transform an EmbeddingSet
    whose tag appeared among them.
    """

    def fit(self, X, y=None):
        self.combined_ = merge_manifests(X)
        return self

    def transform(self, X: EmbeddingSet) -> EmbeddingSet:
        check_is_fitted(self, "combined_")
        return apply_mapping(X, self.combined_)
