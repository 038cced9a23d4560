"""k-reciprocal neighborhood re-ranking.

Given a probe and a gallery, the initial ranking orders the gallery by plain
metric distance. Re-ranking builds, for each probe independently, a joint
point set {probe} + gallery (the probe at joint index 0, gallery point j at
joint index j + 1), derives per-point neighbor sets

* ``knn``        the k nearest neighbors, self excluded,
* ``reciprocal`` the subset whose own k-nearest sets contain the point back,
* ``expanded``   the reciprocal set enlarged with sufficiently overlapping
                 half-k reciprocal sets of its members,

and scores each gallery point by the Jaccard distance between its expanded
set and the probe's, blended with the min-max-normalized original distance:

    final = (1 - lambda) * jaccard + lambda * normalized_original

Ties are always broken toward the lower index, so results are deterministic.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._parallel import map_ordered
from .exceptions import KOutOfRangeError
from .pairwise import (
    MetricConfig,
    as_vector_matrix,
    pairwise_matrix,
    validate_distance_matrix,
)
from .store import EmbeddingSet

DEFAULT_K = 20
DEFAULT_LAMBDA = 0.3
DEFAULT_OVERLAP = 2.0 / 3.0


@dataclass(frozen=True)
class RerankParams:
    """Re-ranking knobs: neighborhood size, blend weight, expansion threshold."""

    k: int = DEFAULT_K
    lambda_value: float = DEFAULT_LAMBDA
    expansion_overlap: float = DEFAULT_OVERLAP

    def validate(self, joint_count: int | None = None) -> None:
        if self.k < 1:
            raise KOutOfRangeError(f"k must be >= 1, got {self.k}")
        if joint_count is not None and self.k >= joint_count:
            raise KOutOfRangeError(
                f"k={self.k} must be smaller than the joint point count {joint_count}"
            )
        if not 0.0 <= self.lambda_value <= 1.0:
            raise ValueError(f"lambda_value must be in [0, 1], got {self.lambda_value}")
        if not 0.0 < self.expansion_overlap <= 1.0:
            raise ValueError(
                f"expansion_overlap must be in (0, 1], got {self.expansion_overlap}"
            )


@dataclass
class NeighborSets:
    """Per-point index sets over one joint point set."""

    knn: list[set[int]]
    reciprocal: list[set[int]]
    expanded: list[set[int]]


@dataclass(frozen=True)
class RankList:
    """One probe's gallery ordering: ascending distance, ties by index."""

    probe_index: int
    order: np.ndarray
    distances: np.ndarray


@dataclass(frozen=True)
class ProbeRerank:
    """All intermediates of one probe's re-ranking pass."""

    neighbors: NeighborSets
    jaccard: np.ndarray
    normalized_original: np.ndarray
    final: np.ndarray


@dataclass
class RerankResult:
    initial: list[RankList]
    reranked: list[RankList]
    params: RerankParams
    details: list[ProbeRerank] | None = field(default=None, repr=False)


def half_k(k: int) -> int:
    """Expansion neighborhood size: floor(k / 2), at least 1."""
    return max(1, k // 2)


def _check_k(k: int, joint_count: int) -> None:
    if not 1 <= k < joint_count:
        raise KOutOfRangeError(
            f"k={k} is outside [1, {joint_count}) for {joint_count} joint points"
        )


def _sets_from_order(order: np.ndarray, k: int) -> list[set[int]]:
    sets = []
    for i in range(order.shape[0]):
        row = order[i]
        sets.append(set(row[row != i][:k].tolist()))
    return sets


def knn_sets(joint_matrix, k: int) -> list[set[int]]:
    """k-nearest-neighbor sets over a joint distance matrix.

    Each set has exactly k members, excludes the point itself, and resolves
    distance ties toward the lower index.
    """
    d = validate_distance_matrix(joint_matrix, joint=True)
    _check_k(k, d.shape[0])
    order = np.argsort(d, axis=1, kind="stable")
    return _sets_from_order(order, k)


def reciprocal_sets(knn: list[set[int]]) -> list[set[int]]:
    """Keep q in p's set only if p is also in q's set."""
    return [{q for q in knn[p] if p in knn[q]} for p in range(len(knn))]


def expand_sets(
    reciprocal: list[set[int]],
    half_reciprocal: list[set[int]],
    overlap_threshold: float = DEFAULT_OVERLAP,
) -> list[set[int]]:
    """Enlarge each reciprocal set with its members' half-k reciprocal sets.

    A member q contributes its half-k set when that set overlaps the base set
    by at least ``overlap_threshold`` of its own size. A point never appears
    in its own expanded set, even when a member's half-k set points back.
    """
    if not 0.0 < overlap_threshold <= 1.0:
        raise ValueError(f"overlap_threshold must be in (0, 1], got {overlap_threshold}")
    if len(half_reciprocal) != len(reciprocal):
        raise ValueError("reciprocal and half_reciprocal must cover the same points")
    expanded = []
    for p, base in enumerate(reciprocal):
        grown = set(base)
        for q in base:
            candidate = half_reciprocal[q]
            if len(candidate & base) >= overlap_threshold * len(candidate):
                grown |= candidate
        grown.discard(p)
        expanded.append(grown)
    return expanded


def neighbor_sets(joint_matrix, k: int, expansion_overlap: float = DEFAULT_OVERLAP) -> NeighborSets:
    """Compute knn, reciprocal and expanded sets in one pass."""
    d = validate_distance_matrix(joint_matrix, joint=True)
    _check_k(k, d.shape[0])
    order = np.argsort(d, axis=1, kind="stable")
    knn = _sets_from_order(order, k)
    knn_half = _sets_from_order(order, half_k(k))
    rec = reciprocal_sets(knn)
    rec_half = reciprocal_sets(knn_half)
    return NeighborSets(
        knn=knn,
        reciprocal=rec,
        expanded=expand_sets(rec, rec_half, expansion_overlap),
    )


def jaccard_distance(a: set, b: set) -> float:
    """1 - |a & b| / |a | b|; two empty sets count as maximally dissimilar."""
    union = len(a | b)
    if union == 0:
        return 1.0
    return 1.0 - len(a & b) / union


def blended_distance(d_original: float, d_jaccard: float, lambda_value: float) -> float:
    """(1 - lambda) * d_jaccard + lambda * d_original."""
    if not 0.0 <= lambda_value <= 1.0:
        raise ValueError(f"lambda_value must be in [0, 1], got {lambda_value}")
    return (1.0 - lambda_value) * d_jaccard + lambda_value * d_original


def joint_distance_matrix(probe_row: np.ndarray, gallery_matrix: np.ndarray) -> np.ndarray:
    """Assemble the (g+1) x (g+1) joint matrix with the probe at index 0."""
    probe_row = np.asarray(probe_row, dtype=np.float64)
    gallery_matrix = np.asarray(gallery_matrix, dtype=np.float64)
    g = gallery_matrix.shape[0]
    if probe_row.shape != (g,):
        raise ValueError(
            f"probe row shape {probe_row.shape} does not match gallery size {g}"
        )
    joint = np.empty((g + 1, g + 1), dtype=np.float64)
    joint[0, 0] = 0.0
    joint[0, 1:] = probe_row
    joint[1:, 0] = probe_row
    joint[1:, 1:] = gallery_matrix
    return joint


def _minmax_normalize(row: np.ndarray) -> np.ndarray:
    lo = row.min()
    span = row.max() - lo
    if span == 0.0:
        return np.zeros_like(row)
    return (row - lo) / span


def rerank_probe(
    probe_row: np.ndarray,
    gallery_matrix: np.ndarray,
    params: RerankParams,
) -> ProbeRerank:
    """Re-rank one probe against the gallery, returning all intermediates.

    ``probe_row`` holds the probe's original distances to the gallery and
    ``gallery_matrix`` the gallery's own pairwise distances.
    """
    joint = joint_distance_matrix(probe_row, gallery_matrix)
    params.validate(joint.shape[0])
    sets = neighbor_sets(joint, params.k, params.expansion_overlap)
    probe_set = sets.expanded[0]
    g = gallery_matrix.shape[0]
    dj = np.array(
        [jaccard_distance(probe_set, sets.expanded[j + 1]) for j in range(g)],
        dtype=np.float64,
    )
    dn = _minmax_normalize(np.asarray(probe_row, dtype=np.float64))
    final = (1.0 - params.lambda_value) * dj + params.lambda_value * dn
    return ProbeRerank(neighbors=sets, jaccard=dj, normalized_original=dn, final=final)


def _rank_list(probe_index: int, distances: np.ndarray) -> RankList:
    order = np.argsort(distances, kind="stable")
    return RankList(
        probe_index=probe_index, order=order, distances=distances[order].copy()
    )


def rank_initial(probes, gallery, metric: MetricConfig | None = None) -> list[RankList]:
    """Initial (pre-re-ranking) rank lists under the chosen metric."""
    pg = pairwise_matrix(
        as_vector_matrix(probes, "probes"),
        as_vector_matrix(gallery, "gallery"),
        metric or MetricConfig(),
    )
    return [_rank_list(i, pg[i]) for i in range(pg.shape[0])]


def rerank(
    probes,
    gallery,
    metric: MetricConfig | None = None,
    params: RerankParams | None = None,
    keep_details: bool = True,
) -> RerankResult:
    """Initial and re-ranked gallery orderings for every probe.

    Parameters
    ----------
    probes, gallery : EmbeddingSet or array-like of shape (n, dim)
    metric : MetricConfig, optional
        Metric for the original distances; Euclidean by default.
    params : RerankParams, optional
    keep_details : bool
        Attach per-probe neighbor sets and intermediate distances to the
        result (useful for inspection and verification).

    Returns
    -------
    RerankResult
        ``initial`` and ``reranked`` hold one RankList per probe; each is a
        permutation of gallery positions with ascending distances.
    """
    params = params or RerankParams()
    config = metric or MetricConfig()
    X = as_vector_matrix(probes, "probes")
    Y = as_vector_matrix(gallery, "gallery")
    params.validate(Y.shape[0] + 1)

    pg = pairwise_matrix(X, Y, config)
    gg = pairwise_matrix(Y, Y, config)
    details = map_ordered(lambda row: rerank_probe(row, gg, params), list(pg))

    initial = [_rank_list(i, pg[i]) for i in range(X.shape[0])]
    reranked = [_rank_list(i, det.final) for i, det in enumerate(details)]
    return RerankResult(
        initial=initial,
        reranked=reranked,
        params=params,
        details=details if keep_details else None,
    )


class KReciprocalReranker(BaseEstimator, TransformerMixin):
    """Transformer from probe vectors to blended probe-gallery distances.

    Fit on the gallery, transform probes into the final (re-ranked) distance
    matrix; ``np.argsort(..., kind="stable")`` of a row is the re-ranked
    gallery order.

    Parameters
    ----------
    k : int
        Neighborhood size; must stay below gallery size + 1.
    lambda_value : float in [0, 1]
        Weight of the original distance in the blend; 1 keeps the initial
        ranking, 0 ranks purely by Jaccard distance.
    expansion_overlap : float in (0, 1]
        Minimum overlap fraction for a member's half-k set to join the
        expanded set.
    metric : {"euclidean", "mahalanobis"}
    metric_matrix : ndarray, optional
        PSD matrix for the Mahalanobis quadratic form.
    """

    def __init__(
        self,
        k: int = DEFAULT_K,
        lambda_value: float = DEFAULT_LAMBDA,
        expansion_overlap: float = DEFAULT_OVERLAP,
        metric: str = "euclidean",
        metric_matrix=None,
    ):
        self.k = k
        self.lambda_value = lambda_value
        self.expansion_overlap = expansion_overlap
        self.metric = metric
        self.metric_matrix = metric_matrix

    def _metric_config(self) -> MetricConfig:
        matrix = None
        if self.metric_matrix is not None:
            matrix = np.asarray(self.metric_matrix, dtype=np.float64)
        return MetricConfig(kind=self.metric, matrix=matrix)

    def _rerank_params(self) -> RerankParams:
        return RerankParams(
            k=self.k,
            lambda_value=self.lambda_value,
            expansion_overlap=self.expansion_overlap,
        )

    def fit(self, X, y=None):
        gallery = as_vector_matrix(X, "gallery")
        self._metric_config().validate(gallery.shape[1])
        self._rerank_params().validate(gallery.shape[0] + 1)
        self.gallery_ = gallery
        self.n_features_in_ = gallery.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        """Blended distance matrix of shape (n_probes, n_gallery)."""
        check_is_fitted(self, "gallery_")
        result = rerank(
            X,
            self.gallery_,
            metric=self._metric_config(),
            params=self._rerank_params(),
            keep_details=True,
        )
        if not result.details:
            return np.empty((0, self.gallery_.shape[0]), dtype=np.float64)
        return np.stack([det.final for det in result.details])

    def rank(self, X) -> RerankResult:
        """Full initial + re-ranked rank lists for probe vectors."""
        check_is_fitted(self, "gallery_")
        return rerank(
            X, self.gallery_, metric=self._metric_config(), params=self._rerank_params()
        )


def rank_lists_to_dict(
    rank_lists: list[RankList],
    probes: EmbeddingSet,
    gallery: EmbeddingSet,
    stage: str,
    parameters: dict | None = None,
) -> dict:
    """JSON-ready representation of per-probe rank lists."""
    probes_out = []
    for rl in rank_lists:
        probe_rec = probes.records[rl.probe_index]
        entries = []
        for rank, (gallery_pos, dist) in enumerate(zip(rl.order, rl.distances), start=1):
            rec = gallery.records[int(gallery_pos)]
            entries.append(
                {
                    "rank": rank,
                    "gallery_record_id": int(rec.record_id),
                    "person_label": int(rec.person_label),
                    "distance": float(dist),
                }
            )
        probes_out.append(
            {"probe_record_id": int(probe_rec.record_id), "entries": entries}
        )
    out = {"kind": "rank-lists", "stage": stage, "probes": probes_out}
    if parameters is not None:
        out["parameters"] = parameters
    return out


def write_rank_lists_json(fh, rank_lists, probes, gallery, stage, parameters=None) -> None:
    payload = rank_lists_to_dict(rank_lists, probes, gallery, stage, parameters)
    fh.write(json.dumps(payload, indent=2, sort_keys=True))
    fh.write("\n")


def write_rank_lists_csv(fh, rank_lists, probes, gallery) -> None:
    """CSV rows: probe_id, rank, gallery_record_id, person_label, final_distance."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(
        ["probe_id", "rank", "gallery_record_id", "person_label", "final_distance"]
    )
    for rl in rank_lists:
        probe_rec = probes.records[rl.probe_index]
        for rank, (gallery_pos, dist) in enumerate(zip(rl.order, rl.distances), start=1):
            rec = gallery.records[int(gallery_pos)]
            writer.writerow(
                [
                    probe_rec.record_id,
                    rank,
                    rec.record_id,
                    rec.person_label,
                    repr(float(dist)),
                ]
            )
