"""End-to-end command tests: outputs, exit codes, determinism."""

import json

import numpy as np
import pytest

from reidrank import (
    MetricConfig,
    rank_initial,
    read_set_file,
    write_metric_matrix_file,
    write_set_file,
)
from reidrank.cli import main

from conftest import random_embedding_set


@pytest.fixture
def fixture_files(tmp_path, rng):
    probes = random_embedding_set(
        rng, 3, 6, tag="probes", labels=[1, 2, 3], cameras=[0, 0, 0]
    )
    gallery = random_embedding_set(
        rng,
        10,
        6,
        tag="gallery",
        labels=[1, 1, 2, 2, 3, 3, 4, 4, 5, 5],
        cameras=[1] * 10,
    )
    ppath = tmp_path / "probes.reid"
    gpath = tmp_path / "gallery.reid"
    write_set_file(probes, ppath)
    write_set_file(gallery, gpath)
    return ppath, gpath, probes, gallery


def read_bytes_tree(root):
    return {p.name: p.read_bytes() for p in sorted(root.iterdir()) if p.is_file()}


class TestRankCommand:
    def test_writes_one_csv_row_per_pair(self, fixture_files, tmp_path, capsys):
        ppath, gpath, probes, gallery = fixture_files
        out = tmp_path / "rank_out"
        code = main(["rank", "--probes", str(ppath), "--gallery", str(gpath), "--out", str(out)])
        assert code == 0
        rows = (out / "initial.csv").read_text().strip().splitlines()
        assert len(rows) == 1 + len(probes) * len(gallery)
        summary = json.loads(capsys.readouterr().out)
        assert summary["command"] == "rank"

    def test_corrupt_magic_exits_2_and_names_file(self, fixture_files, tmp_path, capsys):
        ppath, gpath, _, _ = fixture_files
        bad = tmp_path / "bad.reid"
        raw = bytearray(ppath.read_bytes())
        raw[:4] = b"NOPE"
        bad.write_bytes(bytes(raw))
        code = main(["rank", "--probes", str(bad), "--gallery", str(gpath), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "bad.reid" in capsys.readouterr().err

    def test_dimension_mismatch_exits_3(self, fixture_files, tmp_path, rng):
        ppath, _, _, _ = fixture_files
        other = tmp_path / "other.reid"
        write_set_file(random_embedding_set(rng, 4, 9, tag="other"), other)
        code = main(["rank", "--probes", str(ppath), "--gallery", str(other), "--out", str(tmp_path / "o")])
        assert code == 3

    def test_output_matches_library_ranking(self, fixture_files, tmp_path):
        ppath, gpath, probes, gallery = fixture_files
        out = tmp_path / "rank_out"
        assert main(["rank", "--probes", str(ppath), "--gallery", str(gpath), "--out", str(out)]) == 0
        payload = json.loads((out / "initial.json").read_text())
        expected = rank_initial(probes, gallery)
        gallery_ids = gallery.record_ids()
        for probe_entry, rl in zip(payload["probes"], expected):
            got = [e["gallery_record_id"] for e in probe_entry["entries"]]
            assert got == gallery_ids[rl.order].tolist()

    def test_mahalanobis_metric_flag(self, fixture_files, tmp_path):
        ppath, gpath, probes, gallery = fixture_files
        mpath = tmp_path / "metric.reim"
        write_metric_matrix_file(np.eye(6), mpath)
        out = tmp_path / "mahal_out"
        code = main(
            [
                "rank",
                "--probes", str(ppath),
                "--gallery", str(gpath),
                "--metric", "mahal",
                "--mahal-matrix", str(mpath),
                "--out", str(out),
            ]
        )
        assert code == 0
        payload = json.loads((out / "initial.json").read_text())
        config = MetricConfig("mahalanobis", np.eye(6))
        expected = rank_initial(probes, gallery, config)
        gallery_ids = gallery.record_ids()
        got = [e["gallery_record_id"] for e in payload["probes"][0]["entries"]]
        assert got == gallery_ids[expected[0].order].tolist()

    def test_mahal_without_matrix_exits_2(self, fixture_files, tmp_path):
        ppath, gpath, _, _ = fixture_files
        code = main(
            ["rank", "--probes", str(ppath), "--gallery", str(gpath), "--metric", "mahal", "--out", str(tmp_path / "o")]
        )
        assert code == 2


class TestRerankCommand:
    def test_lambda_one_preserves_initial_order(self, fixture_files, tmp_path):
        ppath, gpath, _, _ = fixture_files
        out = tmp_path / "rr"
        code = main(
            [
                "rerank",
                "--probes", str(ppath),
                "--gallery", str(gpath),
                "--k", "4",
                "--lambda", "1.0",
                "--out", str(out),
            ]
        )
        assert code == 0
        initial = json.loads((out / "initial.json").read_text())
        reranked = json.loads((out / "reranked.json").read_text())
        for a, b in zip(initial["probes"], reranked["probes"]):
            assert [e["gallery_record_id"] for e in a["entries"]] == [
                e["gallery_record_id"] for e in b["entries"]
            ]

    def test_k_too_large_exits_4(self, fixture_files, tmp_path):
        ppath, gpath, _, gallery = fixture_files
        code = main(
            [
                "rerank",
                "--probes", str(ppath),
                "--gallery", str(gpath),
                "--k", str(len(gallery) + 1),
                "--out", str(tmp_path / "o"),
            ]
        )
        assert code == 4

    def test_repeated_runs_are_byte_identical(self, fixture_files, tmp_path):
        ppath, gpath, _, _ = fixture_files
        args = ["rerank", "--probes", str(ppath), "--gallery", str(gpath), "--k", "5"]
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(args + ["--out", str(out1)]) == 0
        assert main(args + ["--out", str(out2)]) == 0
        assert read_bytes_tree(out1) == read_bytes_tree(out2)

    def test_params_record_written(self, fixture_files, tmp_path):
        ppath, gpath, _, _ = fixture_files
        out = tmp_path / "rr"
        assert main(
            ["rerank", "--probes", str(ppath), "--gallery", str(gpath), "--k", "3", "--out", str(out)]
        ) == 0
        params = json.loads((out / "params.json").read_text())
        assert params["k"] == 3
        assert params["command"] == "rerank"
        assert 0.0 <= params["lambda"] <= 1.0


class TestEvalCommand:
    def _canonical_fixture(self, tmp_path, rng):
        """Three probes whose rank lists hit at (1), (1,2) and (1,3)."""
        probes = random_embedding_set(rng, 3, 4, tag="p", labels=[1, 2, 3], cameras=[0, 0, 0])
        gallery = random_embedding_set(
            rng, 5, 4, tag="g", labels=[1, 2, 2, 3, 3], cameras=[1] * 5
        )
        ppath, gpath = tmp_path / "p.reid", tmp_path / "g.reid"
        write_set_file(probes, ppath)
        write_set_file(gallery, gpath)
        orders = {1: [0, 1, 2, 3, 4], 2: [1, 2, 0, 3, 4], 3: [3, 0, 4, 1, 2]}
        ranks = {
            "kind": "rank-lists",
            "stage": "reranked",
            "probes": [
                {
                    "probe_record_id": pid,
                    "entries": [
                        {"rank": r + 1, "gallery_record_id": g, "person_label": 0, "distance": 0.1 * r}
                        for r, g in enumerate(orders[label])
                    ],
                }
                for pid, label in zip([0, 1, 2], [1, 2, 3])
            ],
        }
        rpath = tmp_path / "ranks.json"
        rpath.write_text(json.dumps(ranks))
        return ppath, gpath, rpath

    def test_canonical_lists_map_and_rank1(self, tmp_path, rng, capsys):
        ppath, gpath, rpath = self._canonical_fixture(tmp_path, rng)
        out = tmp_path / "eval"
        code = main(
            ["eval", "--probes", str(ppath), "--gallery", str(gpath), "--ranks", str(rpath), "--out", str(out)]
        )
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["map"] == pytest.approx((1 + 1 + 5 / 6) / 3, abs=1e-9)
        assert report["cmc"][0] == 1.0
        summary = json.loads(capsys.readouterr().out)
        assert summary["rank1"] == 1.0

    def test_all_correct_fixture_gives_map_one(self, tmp_path, rng):
        probes = random_embedding_set(rng, 2, 4, tag="p", labels=[1, 2], cameras=[0, 0])
        gallery = random_embedding_set(rng, 4, 4, tag="g", labels=[1, 1, 2, 2], cameras=[1] * 4)
        ppath, gpath = tmp_path / "p.reid", tmp_path / "g.reid"
        write_set_file(probes, ppath)
        write_set_file(gallery, gpath)
        ranks = {
            "probes": [
                {"probe_record_id": 0, "entries": [{"gallery_record_id": g} for g in [0, 1, 2, 3]]},
                {"probe_record_id": 1, "entries": [{"gallery_record_id": g} for g in [2, 3, 0, 1]]},
            ]
        }
        rpath = tmp_path / "ranks.json"
        rpath.write_text(json.dumps(ranks))
        out = tmp_path / "eval"
        assert main(
            ["eval", "--probes", str(ppath), "--gallery", str(gpath), "--ranks", str(rpath), "--out", str(out)]
        ) == 0
        assert json.loads((out / "report.json").read_text())["map"] == 1.0

    def test_probe_without_ground_truth_exits_5(self, tmp_path, rng):
        probes = random_embedding_set(rng, 1, 4, tag="p", labels=[99], cameras=[0])
        gallery = random_embedding_set(rng, 3, 4, tag="g", labels=[1, 2, 3], cameras=[1] * 3)
        ppath, gpath = tmp_path / "p.reid", tmp_path / "g.reid"
        write_set_file(probes, ppath)
        write_set_file(gallery, gpath)
        ranks = {
            "probes": [
                {"probe_record_id": 0, "entries": [{"gallery_record_id": g} for g in [0, 1, 2]]}
            ]
        }
        rpath = tmp_path / "ranks.json"
        rpath.write_text(json.dumps(ranks))
        code = main(
            ["eval", "--probes", str(ppath), "--gallery", str(gpath), "--ranks", str(rpath), "--out", str(tmp_path / "o")]
        )
        assert code == 5

    def test_non_permutation_rank_list_exits_2(self, tmp_path, rng):
        probes = random_embedding_set(rng, 1, 4, tag="p", labels=[1], cameras=[0])
        gallery = random_embedding_set(rng, 3, 4, tag="g", labels=[1, 2, 3], cameras=[1] * 3)
        ppath, gpath = tmp_path / "p.reid", tmp_path / "g.reid"
        write_set_file(probes, ppath)
        write_set_file(gallery, gpath)
        ranks = {
            "probes": [
                {"probe_record_id": 0, "entries": [{"gallery_record_id": 0}, {"gallery_record_id": 0}]}
            ]
        }
        rpath = tmp_path / "ranks.json"
        rpath.write_text(json.dumps(ranks))
        code = main(
            ["eval", "--probes", str(ppath), "--gallery", str(gpath), "--ranks", str(rpath), "--out", str(tmp_path / "o")]
        )
        assert code == 2

    def test_junk_filter_flag_changes_scoring(self, tmp_path, rng):
        """With junk filtering on, a same-camera same-identity gallery item
        is removed instead of counting as a relevant hit."""
        probes = random_embedding_set(rng, 1, 4, tag="p", labels=[1], cameras=[0])
        gallery = random_embedding_set(
            rng, 3, 4, tag="g", labels=[1, 2, 1], cameras=[0, 1, 1]
        )
        ppath, gpath = tmp_path / "p.reid", tmp_path / "g.reid"
        write_set_file(probes, ppath)
        write_set_file(gallery, gpath)
        # same-camera duplicate first, a distractor second, the true match last
        ranks = {
            "probes": [
                {"probe_record_id": 0, "entries": [{"gallery_record_id": g} for g in [0, 1, 2]]}
            ]
        }
        rpath = tmp_path / "ranks.json"
        rpath.write_text(json.dumps(ranks))
        maps = {}
        for flag in ("on", "off"):
            out = tmp_path / f"eval_{flag}"
            assert main(
                [
                    "eval",
                    "--probes", str(ppath),
                    "--gallery", str(gpath),
                    "--ranks", str(rpath),
                    "--junk-filter", flag,
                    "--out", str(out),
                ]
            ) == 0
            maps[flag] = json.loads((out / "report.json").read_text())["map"]
        assert maps["on"] == pytest.approx(1 / 2)  # junk removed: hit at rank 2 of 2
        assert maps["off"] == pytest.approx(5 / 6)  # hits at ranks 1 and 3

    def test_end_to_end_rerank_then_eval(self, fixture_files, tmp_path):
        ppath, gpath, _, _ = fixture_files
        rr = tmp_path / "rr"
        assert main(
            ["rerank", "--probes", str(ppath), "--gallery", str(gpath), "--k", "4", "--out", str(rr)]
        ) == 0
        out = tmp_path / "ev"
        code = main(
            [
                "eval",
                "--probes", str(ppath),
                "--gallery", str(gpath),
                "--ranks", str(rr / "reranked.json"),
                "--out", str(out),
            ]
        )
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert 0.0 <= report["map"] <= 1.0
        assert len(report["cmc"]) == 10


class TestMergeCommand:
    def _manifest_file(self, tmp_path, tag, identity_count, base=100):
        labels = [[i, base + i] for i in range(identity_count)]
        path = tmp_path / f"{tag}.json"
        path.write_text(
            json.dumps(
                {
                    "dataset_tag": tag,
                    "identity_count": identity_count,
                    "image_count": identity_count,
                    "labels": labels,
                }
            )
        )
        return path

    def test_benchmark_totals(self, tmp_path, capsys):
        paths = [
            self._manifest_file(tmp_path, tag, n)
            for tag, n in (("market", 751), ("cuhk03", 767), ("cuhk01", 971))
        ]
        out = tmp_path / "merge"
        code = main(["merge", *map(str, paths), "--out", str(out)])
        assert code == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["identity_total"] == 2489
        combined = json.loads((out / "combined.json").read_text())
        assert combined["identity_total"] == 2489

    def test_single_manifest_bijection(self, tmp_path):
        path = self._manifest_file(tmp_path, "solo", 5)
        out = tmp_path / "merge"
        assert main(["merge", str(path), "--out", str(out)]) == 0
        mapping_rows = (out / "mapping.csv").read_text().strip().splitlines()[1:]
        combined_labels = sorted(int(r.split(",")[2]) for r in mapping_rows)
        assert combined_labels == [1, 2, 3, 4, 5]

    def test_duplicate_tag_exits_6(self, tmp_path):
        a = self._manifest_file(tmp_path, "dup", 2)
        b = tmp_path / "dup2.json"
        b.write_text(a.read_text())
        code = main(["merge", str(a), str(b), "--out", str(tmp_path / "o")])
        assert code == 6


class TestHcnDemoCommand:
    def test_reports_cross_map_depths(self, capsys):
        code = main(
            ["hcn-demo", "--height", "64", "--width", "32", "--base-channels", "256", "--seed", "1"]
        )
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["shapes"]["c1"] == [32, 16, 2048]
        assert report["shapes"]["c2"] == [64, 32, 1024]
        assert report["shapes"]["r5"] == [8, 4, 2048]
        assert report["gradient_check"]["passed"] is True

    def test_bad_dimensions_exit_7(self, capsys):
        assert main(["hcn-demo", "--height", "63", "--width", "32"]) == 7
        capsys.readouterr()

    def test_fixed_seed_report_is_byte_identical(self, capsys):
        args = ["hcn-demo", "--height", "16", "--width", "16", "--base-channels", "4", "--seed", "3"]
        assert main(args) == 0
        first = capsys.readouterr().out
        assert main(args) == 0
        second = capsys.readouterr().out
        assert first == second


class TestIngestCommand:
    def test_ingest_then_read_back(self, tmp_path, rng, capsys):
        payload = {
            "dataset_tag": "fresh",
            "dimension": 3,
            "records": [
                {"record_id": 0, "person_label": 5, "camera_id": 1, "vector": [0.1, 0.2, 0.3]},
                {"record_id": 1, "person_label": 6, "camera_id": 2, "vector": [1.0, 2.0, 3.0]},
            ],
        }
        src = tmp_path / "records.json"
        src.write_text(json.dumps(payload))
        out = tmp_path / "ingested"
        code = main(["ingest", "--input", str(src), "--out", str(out)])
        assert code == 0
        eset = read_set_file(out / "fresh.reid")
        assert len(eset) == 2
        assert eset.records[1].person_label == 6
        manifest = json.loads((out / "fresh.manifest.json").read_text())
        assert manifest["identity_count"] == 2
        assert manifest["image_count"] == 2
        assert manifest["dimension"] == 3
        summary = json.loads(capsys.readouterr().out)
        assert summary["records"] == 2

    def test_ingested_manifest_feeds_merge(self, tmp_path, capsys):
        for tag, labels in (("a", [5, 5, 6]), ("b", [5, 7, 8])):
            payload = {
                "dataset_tag": tag,
                "dimension": 2,
                "records": [
                    {"record_id": i, "person_label": l, "camera_id": 0, "vector": [0.0, float(i)]}
                    for i, l in enumerate(labels)
                ],
            }
            (tmp_path / f"{tag}.json").write_text(json.dumps(payload))
            assert main(["ingest", "--input", str(tmp_path / f"{tag}.json"), "--out", str(tmp_path / "data")]) == 0
        capsys.readouterr()
        out = tmp_path / "merged"
        code = main(
            [
                "merge",
                str(tmp_path / "data" / "a.manifest.json"),
                str(tmp_path / "data" / "b.manifest.json"),
                "--out", str(out),
            ]
        )
        assert code == 0
        assert json.loads(capsys.readouterr().out)["identity_total"] == 5

    def test_malformed_json_exits_2(self, tmp_path):
        src = tmp_path / "broken.json"
        src.write_text("{not json")
        assert main(["ingest", "--input", str(src), "--out", str(tmp_path / "o")]) == 2

    def test_missing_field_exits_2(self, tmp_path):
        src = tmp_path / "broken.json"
        src.write_text(json.dumps({"dataset_tag": "x", "dimension": 2}))
        assert main(["ingest", "--input", str(src), "--out", str(tmp_path / "o")]) == 2

    def test_missing_file_exits_2(self, tmp_path):
        assert main(["ingest", "--input", str(tmp_path / "absent.json"), "--out", str(tmp_path / "o")]) == 2
