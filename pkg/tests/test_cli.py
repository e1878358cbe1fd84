import json

import pytest

from lineagelab import cli, datastore
from lineagelab.cli import EXIT_CONFLICT, EXIT_ERROR, EXIT_OK, main
from lineagelab.lineage import LineageForest
from lineagelab.simulator import (DetectionNoise, ScenarioConfig,
                                  generate_scenario, synthesize_detections)

from conftest import FRAME, cell, square


@pytest.fixture
def sim_dir(tmp_path):
    """Simulated annotations + forest + noisy detections on disk."""
    out = tmp_path / "sim"
    rc = main(["simulate", "--out-dir", str(out), "--seed", "5",
               "--frames", "8", "--cells", "10", "--detections"])
    assert rc == EXIT_OK
    return out


class TestSimulate:
    def test_writes_all_artifacts(self, sim_dir):
        for name in ("annotations.jsonl", "forest.jsonl", "detections.jsonl",
                     "gt.jsonl", "expected_counts.json",
                     "scenario_config.json"):
            assert (sim_dir / name).exists(), name

    def test_config_echoed(self, sim_dir):
        cfg = json.loads((sim_dir / "scenario_config.json").read_text())
        assert cfg["rng_seed"] == 5
        assert cfg["frame_count"] == 8
        assert cfg["initial_cells"] == 10

    def test_deterministic(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            d = tmp_path / name
            main(["simulate", "--out-dir", str(d), "--seed", "3",
                  "--frames", "6", "--cells", "8"])
            outs.append((d / "annotations.jsonl").read_bytes())
        assert outs[0] == outs[1]


class TestTrack:
    def test_recovers_forest_and_echoes_config(self, sim_dir, tmp_path):
        out = tmp_path / "tracked.jsonl"
        rc = main(["track", "--input", str(sim_dir / "annotations.jsonl"),
                   "--out", str(out)])
        assert rc == EXIT_OK
        tracked = datastore.load_forest(out)
        truth = datastore.load_forest(sim_dir / "forest.jsonl")
        assert tracked.same_structure(truth)
        echoed = json.loads((tmp_path / "tracked.jsonl.config.json")
                            .read_text())
        assert echoed["params"]["iou_gate"] == 0.3

    def test_flag_overrides_config_file(self, sim_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"track": {"iou_gate": 0.4}}))
        out = tmp_path / "t.jsonl"
        main(["track", "--input", str(sim_dir / "annotations.jsonl"),
              "--out", str(out), "--config", str(cfg),
              "--iou-gate", "0.25"])
        echoed = json.loads((tmp_path / "t.jsonl.config.json").read_text())
        assert echoed["params"]["iou_gate"] == 0.25

    def test_byte_identical_across_runs(self, sim_dir, tmp_path):
        blobs = []
        for name in ("t1.jsonl", "t2.jsonl"):
            out = tmp_path / name
            main(["track", "--input", str(sim_dir / "annotations.jsonl"),
                  "--out", str(out)])
            blobs.append(out.read_bytes())
        assert blobs[0] == blobs[1]

    def test_missing_input(self, tmp_path):
        rc = main(["track", "--input", str(tmp_path / "nope.jsonl"),
                   "--out", str(tmp_path / "o.jsonl")])
        assert rc == EXIT_ERROR


class TestPropagate:
    def test_labels_written(self, sim_dir, tmp_path):
        out = tmp_path / "labels.json"
        rc = main(["propagate", "--forest", str(sim_dir / "forest.jsonl"),
                   "--out", str(out)])
        assert rc == EXIT_OK
        payload = json.loads(out.read_text())
        assert payload["ok"] is True
        assert payload["labels"]

    def test_conflict_exit_code(self, tmp_path):
        forest = LineageForest(final_frame=1)
        for c in (cell("p", 0, square(4, 4, side=8)),
                  cell("c1", 1, square(4, 4, side=8)),
                  cell("c2", 1, square(20, 4, side=8))):
            forest.add_node(c)
        forest.add_edge("p", "c1", "division")
        forest.add_edge("p", "c2", "division")
        forest.seeds = {"c1": "iPSC", "c2": "DfC"}
        fp = tmp_path / "conflicted.jsonl"
        datastore.save_forest(forest, fp, frame_size=FRAME)
        out = tmp_path / "labels.json"
        rc = main(["propagate", "--forest", str(fp), "--out", str(out)])
        assert rc == EXIT_CONFLICT
        payload = json.loads(out.read_text())
        assert payload["ok"] is False
        assert payload["conflicts"][0]["node"] == "p"

    def test_seed_file_override(self, sim_dir, tmp_path):
        forest = datastore.load_forest(sim_dir / "forest.jsonl")
        finals = forest.final_frame_nodes()
        seeds = {n: "DfC" for n in finals}
        sp = tmp_path / "seeds.json"
        sp.write_text(json.dumps(seeds))
        out = tmp_path / "labels.json"
        rc = main(["propagate", "--forest", str(sim_dir / "forest.jsonl"),
                   "--seeds", str(sp), "--out", str(out)])
        assert rc == EXIT_OK
        payload = json.loads(out.read_text())
        assert set(payload["labels"].values()) == {"DfC"}


class TestEvaluate:
    def test_summary_and_frames(self, sim_dir, tmp_path):
        out = tmp_path / "eval"
        rc = main(["evaluate", "--gt", str(sim_dir / "gt.jsonl"),
                   "--det", str(sim_dir / "detections.jsonl"),
                   "--out-dir", str(out)])
        assert rc == EXIT_OK
        summary = json.loads((out / "summary.json").read_text())
        assert summary["config"]["match_iou"] == 0.5
        assert (out / "frames.csv").exists()
        assert summary["totals"]["TP"] > 0

    def test_jobs_do_not_change_output(self, sim_dir, tmp_path):
        blobs = []
        for jobs in ("1", "4"):
            out = tmp_path / f"eval{jobs}"
            main(["evaluate", "--gt", str(sim_dir / "gt.jsonl"),
                  "--det", str(sim_dir / "detections.jsonl"),
                  "--out-dir", str(out), "--jobs", jobs])
            blobs.append(((out / "summary.json").read_bytes(),
                          (out / "frames.csv").read_bytes()))
        assert blobs[0] == blobs[1]


class TestPlan:
    def test_range_parsing_and_fixed(self, tmp_path):
        out = tmp_path / "plan.json"
        rc = main(["plan", "--frames", "146-161", "--mode", "fixed",
                   "--size", "4", "--out", str(out)])
        assert rc == EXIT_OK
        plan = json.loads(out.read_text())
        assert len(plan["subsequences"]) == 4
        assert plan["subsequences"][0] == [146, 147, 148, 149]

    def test_comma_list_incremental(self, tmp_path):
        out = tmp_path / "plan.json"
        main(["plan", "--frames", "1,2,5", "--mode", "incremental",
              "--out", str(out)])
        plan = json.loads(out.read_text())
        assert plan["subsequences"] == [[1], [1, 2], [1, 2, 5]]
        assert plan["targets"] == [[1], [2], [5]]


class TestExport:
    def test_splits(self, tmp_path):
        out = tmp_path / "splits.json"
        rc = main(["export", "--kind", "splits", "--out", str(out)])
        assert rc == EXIT_OK
        splits = json.loads(out.read_text())
        assert splits["early"]["size"] == 38
        assert splits["late"]["size"] == 73
        assert splits["test"]["size"] == 16

    def test_features(self, sim_dir, tmp_path):
        out = tmp_path / "features.csv"
        rc = main(["export", "--kind", "features",
                   "--annotations", str(sim_dir / "annotations.jsonl"),
                   "--forest", str(sim_dir / "forest.jsonl"),
                   "--out", str(out)])
        assert rc == EXIT_OK
        header = out.read_text().splitlines()[0].split(",")
        assert header[:3] == ["roi", "frame", "id"]
        assert header[-1] == "label"

    def test_patches(self, sim_dir, tmp_path):
        out = tmp_path / "patches.json"
        rc = main(["export", "--kind", "patches",
                   "--annotations", str(sim_dir / "annotations.jsonl"),
                   "--out", str(out), "--border", "5"])
        assert rc == EXIT_OK
        patches = json.loads(out.read_text())
        assert patches
        assert all("bbox" in p for p in patches)


class TestStats:
    def test_stats_to_file(self, sim_dir, tmp_path):
        out = tmp_path / "stats.json"
        rc = main(["stats", str(sim_dir / "annotations.jsonl"),
                   "--out", str(out)])
        assert rc == EXIT_OK
        stats = json.loads(out.read_text())
        assert stats["sequences"] == 1
        assert stats["frames"] == 8
