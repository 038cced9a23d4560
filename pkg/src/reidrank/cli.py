"""Command-line batch interface.

Subcommands: ingest, rank, rerank, eval, merge, hcn-demo. Every command is a
deterministic function of its inputs, flags and seed; outputs are
byte-identical across repeated invocations. The REIDRANK_THREADS environment
variable caps internal parallelism without changing any output.

Exit codes
----------
0  success
1  hcn-demo gradient check exceeded its threshold
2  malformed input (unreadable file, bad magic, truncation, invalid JSON)
3  embedding/matrix dimension mismatch
4  neighborhood size k out of range
5  a probe has no relevant gallery item
6  duplicate dataset tag during merge
7  hcn-demo dimensions not divisible by 8
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import (
    DimensionMismatchError,
    DuplicateTagError,
    FormatError,
    InvalidSetError,
    KOutOfRangeError,
    MissingGroundTruthError,
)
from .metrics import (
    build_ground_truth,
    evaluate_rank_lists,
    write_cmc_gnuplot,
    write_per_probe_ap_csv,
    write_report_json,
)
from .neighbors import (
    DEFAULT_K,
    DEFAULT_LAMBDA,
    DEFAULT_OVERLAP,
    RerankParams,
    rank_initial,
    rerank,
    write_rank_lists_csv,
    write_rank_lists_json,
)
from .pairwise import MetricConfig
from .pyramid import (
    MergeWeights,
    cross_merge,
    gradient_check,
    hcn_forward,
    id_loss,
    stub_backbone,
)
from .relabel import (
    DatasetManifest,
    merge_manifests,
    write_combined_json,
    write_mapping_csv,
)
from .store import (
    EmbeddingRecord,
    EmbeddingSet,
    read_metric_matrix_file,
    read_set_file,
    write_set_file,
)

DEFAULT_SEED = 12345
GRADIENT_THRESHOLD = 1e-5

_METRIC_NAMES = {"euclid": "euclidean", "mahal": "mahalanobis"}


def _load_set(path: str) -> EmbeddingSet:
    try:
        return read_set_file(path)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def _load_json(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _metric_config(args) -> MetricConfig:
    kind = _METRIC_NAMES[args.metric]
    if kind == "euclidean":
        return MetricConfig()
    if not args.mahal_matrix:
        raise ValueError("--metric mahal requires --mahal-matrix PATH")
    try:
        matrix = read_metric_matrix_file(args.mahal_matrix)
    except FormatError as exc:
        raise FormatError(f"{args.mahal_matrix}: {exc}") from exc
    return MetricConfig(kind="mahalanobis", matrix=matrix)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, indent=2, sort_keys=True))
        fh.write("\n")


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def cmd_ingest(args) -> int:
    data = _load_json(args.input)
    try:
        records = [
            EmbeddingRecord(
                record_id=int(r["record_id"]),
                person_label=int(r["person_label"]),
                camera_id=int(r["camera_id"]),
                vector=np.asarray(r["vector"], dtype=np.float32),
            )
            for r in data["records"]
        ]
        eset = EmbeddingSet(
            dataset_tag=str(data["dataset_tag"]),
            dimension=int(data["dimension"]),
            records=records,
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{args.input}: malformed ingest JSON ({exc})") from exc

    out = _out_dir(args)
    bin_path = out / f"{eset.dataset_tag}.reid"
    byte_count = write_set_file(eset, bin_path)
    manifest = DatasetManifest.from_embedding_set(eset)
    sidecar = manifest.to_dict()
    sidecar["dimension"] = eset.dimension
    manifest_path = out / f"{eset.dataset_tag}.manifest.json"
    _write_json(manifest_path, sidecar)
    _emit(
        {
            "command": "ingest",
            "embedding_file": str(bin_path),
            "manifest_file": str(manifest_path),
            "bytes_written": byte_count,
            "records": len(eset),
            "identities": manifest.identity_count,
        }
    )
    return 0


def _rank_parameters(args, command: str) -> dict:
    params = {
        "command": command,
        "probes": args.probes,
        "gallery": args.gallery,
        "metric": _METRIC_NAMES[args.metric],
        "mahal_matrix": args.mahal_matrix,
        "seed": args.seed,
        "version": __version__,
    }
    if command == "rerank":
        params.update(
            {"k": args.k, "lambda": args.lambda_value, "overlap": args.overlap}
        )
    return params


def cmd_rank(args) -> int:
    probes = _load_set(args.probes)
    gallery = _load_set(args.gallery)
    config = _metric_config(args)
    lists = rank_initial(probes, gallery, config)

    out = _out_dir(args)
    parameters = _rank_parameters(args, "rank")
    with open(out / "initial.csv", "w", encoding="utf-8") as fh:
        write_rank_lists_csv(fh, lists, probes, gallery)
    with open(out / "initial.json", "w", encoding="utf-8") as fh:
        write_rank_lists_json(fh, lists, probes, gallery, "initial", parameters)
    _write_json(out / "params.json", parameters)
    _emit(
        {
            "command": "rank",
            "probes": len(probes),
            "gallery": len(gallery),
            "out": str(out),
        }
    )
    return 0


def cmd_rerank(args) -> int:
    probes = _load_set(args.probes)
    gallery = _load_set(args.gallery)
    config = _metric_config(args)
    params = RerankParams(
        k=args.k, lambda_value=args.lambda_value, expansion_overlap=args.overlap
    )
    result = rerank(probes, gallery, metric=config, params=params, keep_details=False)

    out = _out_dir(args)
    parameters = _rank_parameters(args, "rerank")
    for stage, lists in (("initial", result.initial), ("reranked", result.reranked)):
        with open(out / f"{stage}.csv", "w", encoding="utf-8") as fh:
            write_rank_lists_csv(fh, lists, probes, gallery)
        with open(out / f"{stage}.json", "w", encoding="utf-8") as fh:
            write_rank_lists_json(fh, lists, probes, gallery, stage, parameters)
    _write_json(out / "params.json", parameters)
    _emit(
        {
            "command": "rerank",
            "probes": len(probes),
            "gallery": len(gallery),
            "k": args.k,
            "lambda": args.lambda_value,
            "out": str(out),
        }
    )
    return 0


def _orders_from_rank_json(data: dict, probes: EmbeddingSet, gallery: EmbeddingSet):
    """Resolve a rank-lists JSON payload to probe-aligned gallery orderings."""
    gallery_pos = {rec.record_id: i for i, rec in enumerate(gallery.records)}
    probe_pos = {rec.record_id: i for i, rec in enumerate(probes.records)}
    probe_indices = []
    orders = []
    try:
        entries_by_probe = data["probes"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"rank-lists JSON missing 'probes' ({exc})") from exc
    for item in entries_by_probe:
        try:
            pid = int(item["probe_record_id"])
            ranked_ids = [int(e["gallery_record_id"]) for e in item["entries"]]
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed rank-lists JSON ({exc})") from exc
        if pid not in probe_pos:
            raise FormatError(f"probe record id {pid} not present in probes file")
        try:
            order = [gallery_pos[g] for g in ranked_ids]
        except KeyError as exc:
            raise FormatError(f"gallery record id {exc} not present in gallery file") from exc
        if sorted(order) != list(range(len(gallery))):
            raise FormatError(
                f"rank list for probe {pid} is not a permutation of the gallery"
            )
        probe_indices.append(probe_pos[pid])
        orders.append(order)
    return probe_indices, orders


def cmd_eval(args) -> int:
    probes = _load_set(args.probes)
    gallery = _load_set(args.gallery)
    data = _load_json(args.ranks)
    probe_indices, orders = _orders_from_rank_json(data, probes, gallery)

    junk_filter = args.junk_filter == "on"
    probe_labels = probes.person_labels()[probe_indices]
    probe_cameras = probes.camera_ids()[probe_indices]
    truths = build_ground_truth(
        probe_labels,
        probe_cameras,
        gallery.person_labels(),
        gallery.camera_ids(),
        junk_filter=junk_filter,
    )
    report = evaluate_rank_lists(orders, truths, max_rank=args.max_rank)

    out = _out_dir(args)
    parameters = {
        "command": "eval",
        "probes": args.probes,
        "gallery": args.gallery,
        "ranks": args.ranks,
        "junk_filter": junk_filter,
        "max_rank": args.max_rank,
        "version": __version__,
    }
    probe_record_ids = probes.record_ids()[probe_indices]
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        write_report_json(fh, report, parameters)
    with open(out / "per_probe_ap.csv", "w", encoding="utf-8") as fh:
        write_per_probe_ap_csv(fh, report, probe_record_ids)
    with open(out / "cmc.dat", "w", encoding="utf-8") as fh:
        write_cmc_gnuplot(fh, report)
    _emit(
        {
            "command": "eval",
            "map": report.map,
            "rank1": float(report.cmc[0]),
            "probes": report.probe_count,
            "out": str(out),
        }
    )
    return 0


def cmd_merge(args) -> int:
    manifests = []
    for path in args.manifests:
        data = _load_json(path)
        try:
            manifests.append(DatasetManifest.from_dict(data))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path}: malformed manifest JSON ({exc})") from exc
    combined = merge_manifests(manifests)

    out = _out_dir(args)
    with open(out / "combined.json", "w", encoding="utf-8") as fh:
        write_combined_json(fh, combined)
    with open(out / "mapping.csv", "w", encoding="utf-8") as fh:
        write_mapping_csv(fh, combined)
    _emit(
        {
            "command": "merge",
            "datasets": len(manifests),
            "identity_total": combined.identity_total,
            "image_total": combined.image_total,
            "out": str(out),
        }
    )
    return 0


def cmd_hcn_demo(args) -> int:
    if args.height % 8 != 0 or args.width % 8 != 0:
        print(
            f"error: height and width must be divisible by 8, got {args.height}x{args.width}",
            file=sys.stderr,
        )
        return 7
    pyramid = stub_backbone(args.height, args.width, args.base_channels, args.seed)
    weights = MergeWeights.seeded(args.base_channels, args.classes, args.seed + 1)
    outputs = hcn_forward(pyramid, weights, mode="eval")
    c1, c2 = cross_merge(pyramid, weights)
    label = 1
    losses = {
        "r5": id_loss(outputs.logits_r5, label)[0],
        "c1": id_loss(outputs.logits_c1, label)[0],
        "c2": id_loss(outputs.logits_c2, label)[0],
    }
    losses["total"] = losses["r5"] + losses["c1"] + losses["c2"]
    max_rel = gradient_check(
        cases=args.gradient_cases, num_classes=10, step=1e-6, seed=args.seed
    )
    passed = max_rel < GRADIENT_THRESHOLD
    report = {
        "command": "hcn-demo",
        "shapes": {
            "r2": list(pyramid.r2.shape),
            "r3": list(pyramid.r3.shape),
            "r4": list(pyramid.r4.shape),
            "r5": list(pyramid.r5.shape),
            "c1": list(c1.shape),
            "c2": list(c2.shape),
        },
        "label": label,
        "branch_losses": losses,
        "gradient_check": {
            "cases": args.gradient_cases,
            "classes": 10,
            "step": 1e-6,
            "max_relative_error": max_rel,
            "threshold": GRADIENT_THRESHOLD,
            "passed": passed,
        },
        "parameters": {
            "height": args.height,
            "width": args.width,
            "base_channels": args.base_channels,
            "classes": args.classes,
            "seed": args.seed,
            "version": __version__,
        },
    }
    _emit(report)
    if args.out:
        _write_json(_out_dir(args) / "hcn_demo.json", report)
    return 0 if passed else 1


def _add_metric_flags(parser) -> None:
    parser.add_argument(
        "--metric", choices=("euclid", "mahal"), default="euclid", help="distance metric"
    )
    parser.add_argument(
        "--mahal-matrix", default=None, help="path to a REIM matrix file (mahal only)"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reidrank",
        description="Embedding retrieval: ranking, k-reciprocal re-ranking, "
        "CMC/mAP evaluation, label-space merging and the cross-merge demo.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert JSON records to the binary format")
    p.add_argument("--input", required=True, help="JSON file with dataset records")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("rank", help="write initial rank lists")
    p.add_argument("--probes", required=True)
    p.add_argument("--gallery", required=True)
    _add_metric_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("rerank", help="write initial and re-ranked rank lists")
    p.add_argument("--probes", required=True)
    p.add_argument("--gallery", required=True)
    _add_metric_flags(p)
    p.add_argument("--k", type=int, default=DEFAULT_K, help="neighborhood size")
    p.add_argument(
        "--lambda",
        dest="lambda_value",
        type=float,
        default=DEFAULT_LAMBDA,
        help="blend weight of the original distance",
    )
    p.add_argument(
        "--overlap",
        type=float,
        default=DEFAULT_OVERLAP,
        help="expansion overlap threshold in (0, 1]",
    )
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("eval", help="score rank lists with CMC and mAP")
    p.add_argument("--probes", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--ranks", required=True, help="rank-lists JSON file")
    p.add_argument("--junk-filter", choices=("on", "off"), default="on")
    p.add_argument("--max-rank", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("merge", help="merge dataset manifests into one label space")
    p.add_argument("manifests", nargs="+", help="manifest JSON files")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("hcn-demo", help="shape table, branch losses, gradient check")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--base-channels", type=int, default=256)
    p.add_argument("--classes", type=int, default=16)
    p.add_argument("--gradient-cases", type=int, default=100)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_hcn_demo)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DimensionMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except KOutOfRangeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except MissingGroundTruthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except DuplicateTagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 6
    except (FormatError, InvalidSetError, json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
