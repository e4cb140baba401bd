import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from contact_analogy.cli import main
from contact_analogy.scene import MatchReport
from contact_analogy.suite import generate_suite


@pytest.fixture(scope="module")
def mini_suite(tmp_path_factory):
    out = tmp_path_factory.mktemp("suite")
    generate_suite(out, seed=5, count=2)
    return out


@pytest.fixture(scope="module")
def self_scene(tmp_path_factory, mini_suite):
    """A pure identity scene: the demo's own masks as the target pair."""
    src = mini_suite / "scene_000"
    dst = tmp_path_factory.mktemp("selfscene")
    for name in ("ref_tool.pgm", "ref_object.pgm", "trajectory.json"):
        shutil.copy(src / name, dst / name)
    scene = json.loads((src / "scene.json").read_text())
    scene["target"] = {"tool_mask": "ref_tool.pgm", "object_mask": "ref_object.pgm",
                       "features": "fallback"}
    path = dst / "scene.json"
    path.write_text(json.dumps(scene, indent=2))
    return path


class TestCmdMatch:
    def test_self_match_exit_zero_and_precision(self, self_scene, tmp_path, capsys):
        code = main(["match", "--scene", str(self_scene), "--out", str(tmp_path)])
        assert code == 0
        report_path = next(tmp_path.glob("*_report.json"))
        report = MatchReport.load(report_path)
        scene = json.loads(self_scene.read_text())
        sel = report.data["selected"]
        assert sel["verified"]
        p = scene["demo"]["p_tool"]
        err = ((sel["p_tool"][0] - p[0]) ** 2 + (sel["p_tool"][1] - p[1]) ** 2) ** 0.5
        assert err <= 2.5

    def test_missing_mask_exit_three(self, tmp_path, capsys):
        scene = {"demo": {"tool_mask": "nope.pgm", "object_mask": "nope.pgm",
                          "p_tool": [1, 1], "p_object": [1, 1],
                          "trajectory": "t.json"},
                 "target": {"tool_mask": "nope.pgm", "object_mask": "nope.pgm"}}
        path = tmp_path / "scene.json"
        path.write_text(json.dumps(scene))
        code = main(["match", "--scene", str(path)])
        captured = capsys.readouterr()
        assert code == 3
        err = json.loads(captured.err.strip())
        assert "nope.pgm" in err["message"]

    def test_report_round_trip(self, self_scene, tmp_path):
        main(["match", "--scene", str(self_scene), "--out", str(tmp_path)])
        report_path = next(tmp_path.glob("*_report.json"))
        report = MatchReport.load(report_path)
        assert MatchReport.from_json(report.to_json()) == report

    def test_deterministic_modulo_timings(self, self_scene, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["match", "--scene", str(self_scene), "--out", str(out1)])
        main(["match", "--scene", str(self_scene), "--out", str(out2)])
        r1 = MatchReport.load(next(out1.glob("*_report.json"))).data
        r2 = MatchReport.load(next(out2.glob("*_report.json"))).data
        r1.pop("timings"), r2.pop("timings")
        assert r1 == r2

    def test_viz_writes_figures(self, self_scene, tmp_path):
        code = main(["match", "--scene", str(self_scene), "--out", str(tmp_path),
                     "--viz"])
        assert code == 0
        pngs = list(tmp_path.glob("*.png"))
        assert len(pngs) >= 4
        heatmaps = [p for p in pngs if "_heat_v" in p.name]
        assert heatmaps

    def test_no_fallback_select_exit_two(self, self_scene, tmp_path):
        # break the contact phase so every candidate fails verification
        scene_dir = self_scene.parent
        traj = json.loads((scene_dir / "trajectory.json").read_text())
        broken = dict(traj)
        broken["contact_phase"] = [0, 0]  # demands contact while still far away
        (scene_dir / "broken_traj.json").write_text(json.dumps(broken))
        scene = json.loads(self_scene.read_text())
        scene["demo"]["trajectory"] = "broken_traj.json"
        broken_scene = scene_dir / "broken_scene.json"
        broken_scene.write_text(json.dumps(scene))
        code = main(["match", "--scene", str(broken_scene), "--out", str(tmp_path),
                     "--no-fallback-select"])
        assert code == 2

    def test_concave_free_target_exit_one(self, self_scene, tmp_path):
        from contact_analogy.maskio import write_mask
        from contact_analogy.shapes import disk_mask
        scene_dir = self_scene.parent
        write_mask(scene_dir / "plain_disk.pgm", disk_mask(240, (120, 120), 30))
        scene = json.loads(self_scene.read_text())
        scene["target"]["tool_mask"] = "plain_disk.pgm"
        path = scene_dir / "disk_tool_scene.json"
        path.write_text(json.dumps(scene))
        code = main(["match", "--scene", str(path), "--out", str(tmp_path)])
        assert code == 1


class TestCmdSelectTool:
    def test_single_tool(self, self_scene, tmp_path, capsys):
        scene = json.loads(self_scene.read_text())
        scene["tools"] = [scene.pop("target")]
        scene["object_mask"] = "ref_object.pgm"
        path = self_scene.parent / "tools_scene.json"
        path.write_text(json.dumps(scene))
        code = main(["select-tool", "--scene", str(path), "--out", str(tmp_path)])
        assert code == 0
        assert "chosen tool index: 0" in capsys.readouterr().out

    def test_empty_tool_list_exit_three(self, self_scene, tmp_path, capsys):
        scene = json.loads(self_scene.read_text())
        scene.pop("target")
        scene["tools"] = []
        scene["object_mask"] = "ref_object.pgm"
        path = self_scene.parent / "empty_tools.json"
        path.write_text(json.dumps(scene))
        assert main(["select-tool", "--scene", str(path)]) == 3


class TestCmdGenSuite:
    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["gen-suite", "--out", str(a), "--seed", "9", "--count", "2"])
        main(["gen-suite", "--out", str(b), "--seed", "9", "--count", "2"])
        files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (a / rel).read_bytes() == (b / rel).read_bytes()

    def test_scenes_loadable_with_edge_annotations(self, mini_suite):
        from contact_analogy.geometry import Point2, extract_edges
        from contact_analogy.scene import load_scene
        for scene_file in sorted(mini_suite.glob("*/scene.json")):
            scene = load_scene(scene_file)
            edges = extract_edges(scene.demo.tool_mask)
            assert edges.nearest(scene.demo.p_tool).distance_to(scene.demo.p_tool) <= 1.0


class TestCmdBench:
    def test_mini_suite_succeeds(self, mini_suite, tmp_path, capsys):
        code = main(["bench", "--suite", str(mini_suite), "--out", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "success rate" in out
        csv_text = (tmp_path / "bench.csv").read_text()
        assert csv_text.count("\n") == 3  # header + 2 scenes

    def test_empty_directory_exit_one(self, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        assert main(["bench", "--suite", str(empty), "--out", str(tmp_path)]) == 1

    def test_bench_viz_figure(self, mini_suite, tmp_path):
        code = main(["bench", "--suite", str(mini_suite), "--out", str(tmp_path),
                     "--viz"])
        assert code == 0
        assert (tmp_path / "bench.png").exists()


class TestBenchThreads:
    def test_threaded_rows_match_sequential(self, mini_suite, tmp_path):
        import csv as csvmod
        main(["bench", "--suite", str(mini_suite), "--out", str(tmp_path / "s")])
        main(["bench", "--suite", str(mini_suite), "--out", str(tmp_path / "t"),
              "--threads", "2"])

        def rows(path):
            with open(path) as fh:
                out = list(csvmod.DictReader(fh))
            for row in out:
                for key in list(row):
                    if key.startswith("time_"):
                        row.pop(key)
            return out
        assert rows(tmp_path / "s" / "bench.csv") == rows(tmp_path / "t" / "bench.csv")


class TestGeneratorDistribution:
    def test_radii_span_generated_ranges(self, tmp_path):
        # 200 draws: bends and disks cover their generator ranges and the
        # hook orientation hits every one of the 12 rotation bins
        from contact_analogy.suite import generate_suite
        dirs = generate_suite(tmp_path / "big", seed=3, count=200)
        bends, disks, bins = [], [], set()
        for d in dirs:
            meta = json.loads((d / "scene.json").read_text())["metadata"]
            bends.append(meta["bend_radius"])
            disks.append(meta["disk_radius"])
            bins.add(meta["rotation_bin"])
        assert min(bends) <= 16.5 and max(bends) >= 28.5
        assert min(disks) <= 7.0 and max(disks) >= 17.5
        assert bins == set(range(12))
