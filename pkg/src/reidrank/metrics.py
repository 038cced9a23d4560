"""Rank-list evaluation: average precision, CMC curves, mAP.

Average precision uses the discrete precision-at-hit formulation: the mean,
over relevant items, of precision at each relevant item's rank. Junk items
(same identity seen by the probe's own camera, under the single-query
protocol) are removed from a rank list before scoring.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .exceptions import MissingGroundTruthError


@dataclass(frozen=True)
class GroundTruth:
    """Relevant and junk gallery positions for one probe."""

    relevant: frozenset[int]
    junk: frozenset[int] = frozenset()

    def validate(self) -> None:
        overlap = self.relevant & self.junk
        if overlap:
            raise ValueError(f"relevant and junk sets overlap: {sorted(overlap)}")


@dataclass
class EvalReport:
    """CMC curve, mAP and per-probe APs for one evaluation run."""

    cmc: np.ndarray
    map: float
    per_probe_ap: list[float]
    probe_count: int

    def to_dict(self) -> dict:
        return {
            "cmc": [float(v) for v in self.cmc],
            "map": float(self.map),
            "per_probe_ap": [float(v) for v in self.per_probe_ap],
            "probe_count": int(self.probe_count),
        }


def build_ground_truth(
    probe_labels,
    probe_cameras,
    gallery_labels,
    gallery_cameras,
    junk_filter: bool = True,
) -> list[GroundTruth]:
    """Ground truth per probe from identity labels and camera ids.

    A gallery item is relevant when it shares the probe's identity label;
    with ``junk_filter`` enabled, same-identity items seen by the probe's own
    camera are junk instead and get removed before scoring.
    """
    probe_labels = np.asarray(probe_labels)
    probe_cameras = np.asarray(probe_cameras)
    gallery_labels = np.asarray(gallery_labels)
    gallery_cameras = np.asarray(gallery_cameras)
    if probe_labels.shape != probe_cameras.shape:
        raise ValueError("probe labels and cameras must align")
    if gallery_labels.shape != gallery_cameras.shape:
        raise ValueError("gallery labels and cameras must align")

    truths = []
    for label, camera in zip(probe_labels, probe_cameras):
        same_label = gallery_labels == label
        if junk_filter:
            junk = same_label & (gallery_cameras == camera)
        else:
            junk = np.zeros_like(same_label)
        relevant = same_label & ~junk
        truths.append(
            GroundTruth(
                relevant=frozenset(np.flatnonzero(relevant).tolist()),
                junk=frozenset(np.flatnonzero(junk).tolist()),
            )
        )
    return truths


def _filtered_ranking(ranked, junk: frozenset[int]) -> list[int]:
    ranked = [int(g) for g in ranked]
    if len(set(ranked)) != len(ranked):
        raise ValueError("rank list contains duplicate gallery indices")
    return [g for g in ranked if g not in junk]


def average_precision(ranked, relevant, junk=frozenset()) -> float:
    """Mean of precision at each relevant item's rank, junk removed first."""
    relevant = frozenset(int(g) for g in relevant)
    junk = frozenset(int(g) for g in junk)
    if not relevant:
        raise MissingGroundTruthError("relevant set is empty")
    if relevant & junk:
        raise ValueError("relevant and junk sets overlap")
    kept = _filtered_ranking(ranked, junk)
    hits = 0
    precision_sum = 0.0
    for position, g in enumerate(kept, start=1):
        if g in relevant:
            hits += 1
            precision_sum += hits / position
    return precision_sum / len(relevant)


def _first_hit_rank(ranked, truth: GroundTruth) -> int:
    truth.validate()
    if not truth.relevant:
        raise MissingGroundTruthError("probe has no relevant gallery item")
    kept = _filtered_ranking(ranked, truth.junk)
    for position, g in enumerate(kept, start=1):
        if g in truth.relevant:
            return position
    raise MissingGroundTruthError("no relevant gallery item appears in the rank list")


def cmc_curve(rank_lists, ground_truths, max_rank: int) -> np.ndarray:
    """CMC(r): fraction of probes whose first relevant hit has rank <= r.

    ``rank_lists`` is a sequence of gallery-index orderings (anything
    iterable of indices, e.g. ``RankList.order``), aligned with
    ``ground_truths``.
    """
    if len(rank_lists) != len(ground_truths):
        raise ValueError("rank lists and ground truths must align")
    if len(rank_lists) == 0:
        raise ValueError("need at least one probe")
    if max_rank < 1:
        raise ValueError(f"max_rank must be >= 1, got {max_rank}")
    first_hits = [
        _first_hit_rank(_order_of(rl), gt) for rl, gt in zip(rank_lists, ground_truths)
    ]
    ranks = np.arange(1, max_rank + 1)
    hits = np.asarray(first_hits)[:, None] <= ranks[None, :]
    return hits.mean(axis=0)


def _order_of(rank_list):
    return rank_list.order if hasattr(rank_list, "order") else rank_list


def mean_ap(per_probe_aps) -> float:
    """Arithmetic mean of per-probe average precisions."""
    aps = list(per_probe_aps)
    if not aps:
        raise ValueError("need at least one probe AP")
    return float(sum(aps) / len(aps))


def rank_k_accuracy(report: EvalReport, k: int) -> float:
    """CMC value at rank k (1-based)."""
    if not 1 <= k <= len(report.cmc):
        raise ValueError(f"k={k} outside [1, {len(report.cmc)}]")
    return float(report.cmc[k - 1])


def evaluate_rank_lists(rank_lists, ground_truths, max_rank: int | None = None) -> EvalReport:
    """Score rank lists against ground truth, producing CMC, APs and mAP."""
    if len(rank_lists) != len(ground_truths):
        raise ValueError("rank lists and ground truths must align")
    if len(rank_lists) == 0:
        raise ValueError("need at least one probe")
    orders = [_order_of(rl) for rl in rank_lists]
    if max_rank is None:
        max_rank = max(len(list(o)) for o in orders)
    aps = []
    for order, truth in zip(orders, ground_truths):
        truth.validate()
        if not truth.relevant:
            raise MissingGroundTruthError("probe has no relevant gallery item")
        aps.append(average_precision(order, truth.relevant, truth.junk))
    curve = cmc_curve(orders, ground_truths, max_rank)
    return EvalReport(
        cmc=curve, map=mean_ap(aps), per_probe_ap=aps, probe_count=len(aps)
    )


def write_report_json(fh, report: EvalReport, parameters: dict | None = None) -> None:
    payload = report.to_dict()
    if parameters is not None:
        payload["parameters"] = parameters
    fh.write(json.dumps(payload, indent=2, sort_keys=True))
    fh.write("\n")


def write_per_probe_ap_csv(fh, report: EvalReport, probe_record_ids=None) -> None:
    import csv

    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["probe_id", "average_precision"])
    for i, ap in enumerate(report.per_probe_ap):
        pid = i if probe_record_ids is None else int(probe_record_ids[i])
        writer.writerow([pid, repr(float(ap))])


def write_cmc_gnuplot(fh, report: EvalReport) -> None:
    """Two-column text: rank and CMC value, one line per rank."""
    fh.write("# rank cmc\n")
    for rank, value in enumerate(report.cmc, start=1):
        fh.write(f"{rank} {float(value)!r}\n")
