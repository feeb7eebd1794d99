"""Tests for the command-line interface, run in-process via main(argv)."""

import json
import sys

import numpy as np
import pytest

import oracles
from binsight import dataset
from binsight.cli import main
from binsight.geometry import DepthMap, LabelMask, PointCloud


def run(*argv):
    return main([str(a) for a in argv])


def save_points(path, pts, labels=None):
    labels = None if labels is None else np.asarray(labels, dtype=np.uint8)
    dataset.save_cloud(path, PointCloud(np.asarray(pts, dtype=np.float64), labels))


def save_frame(path, heights, labels):
    heights = np.asarray(heights, dtype=np.float64)
    dm = DepthMap(
        resolution_mm=1.0,
        origin_x_mm=0.0,
        origin_y_mm=0.0,
        heights=heights,
        valid=np.ones(heights.shape, dtype=bool),
    )
    mask = LabelMask(
        np.asarray(labels, dtype=np.uint8), np.ones(heights.shape, dtype=bool)
    )
    dataset.save_depthmap(path, dm, mask)
    return dm, mask


SYNTH_FLAGS = (
    "--bin", "small_solid", "--workpiece", "plate_l", "--image-size", 32,
    "--noise-sigma", 0, "--dropout", 0, "--count-min", 1, "--count-max", 3,
    "--resolution", 4, "--jobs", 1,
)


@pytest.fixture()
def scene_dir(tmp_path):
    out = tmp_path / "scenes"
    assert run("synth", "--scenes", 2, "--out", out, "--seed", 3, *SYNTH_FLAGS) == 0
    return out


@pytest.fixture()
def empty_dir(tmp_path):
    out = tmp_path / "empties"
    code = run(
        "synth", "--scenes", 1, "--out", out, "--seed", 100,
        "--bin", "small_solid", "--workpiece", "plate_l", "--image-size", 32,
        "--noise-sigma", 0, "--dropout", 0, "--count-min", 0, "--count-max", 0,
        "--resolution", 4, "--jobs", 1,
    )
    assert code == 0
    return out


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

class TestSynth:
    def test_writes_scenes_manifest_and_summary_line(self, tmp_path, capsys):
        out = tmp_path / "d"
        assert run("synth", "--scenes", 2, "--out", out, "--seed", 5, *SYNTH_FLAGS) == 0
        assert capsys.readouterr().out == f"wrote 2 scenes to {out}\n"
        for name in ("scene_0000.ply", "scene_0000.bdm", "scene_0001.ply",
                     "scene_0001.bdm", "manifest.json"):
            assert (out / name).exists()
        manifest = dataset.load_manifest(out / "manifest.json")
        assert manifest.meta["cli"]["seed"] == 5
        assert manifest.meta["cli"]["workpiece"] == "plate_l"
        assert manifest.scans[0].synth["seed"] == 5
        assert manifest.scans[1].synth["seed"] == 6

    def test_same_seed_writes_identical_scene_files(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run("synth", "--scenes", 2, "--out", a, "--seed", 8, *SYNTH_FLAGS)
        run("synth", "--scenes", 2, "--out", b, "--seed", 8, *SYNTH_FLAGS)
        for name in ("scene_0000.ply", "scene_0001.ply", "scene_0000.bdm"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_parallel_generation_matches_serial(self, tmp_path):
        serial, parallel = tmp_path / "s", tmp_path / "p"
        flags = SYNTH_FLAGS[:-2]  # drop the trailing --jobs 1
        run("synth", "--scenes", 3, "--out", serial, "--seed", 4, *flags, "--jobs", 1)
        run("synth", "--scenes", 3, "--out", parallel, "--seed", 4, *flags, "--jobs", 2)
        for i in range(3):
            name = f"scene_{i:04d}.ply"
            assert (serial / name).read_bytes() == (parallel / name).read_bytes()


# ---------------------------------------------------------------------------
# autolabel
# ---------------------------------------------------------------------------

class TestAutolabel:
    def make_pair(self, tmp_path, filled_z):
        empty = tmp_path / "empty.ply"
        filled = tmp_path / "filled.ply"
        save_points(empty, [(2.5, 2.5, 0.0), (9.5, 2.5, 0.0)])
        save_points(filled, [(2.5, 2.5, filled_z), (9.5, 2.5, 0.0)])
        return empty, filled

    def counts_line(self, capsys):
        return capsys.readouterr().out.strip().splitlines()[-1]

    def test_labels_and_writes_outputs(self, tmp_path, capsys):
        empty, filled = self.make_pair(tmp_path, filled_z=8.0)
        out = tmp_path / "out"
        code = run("autolabel", "--empty", empty, "--filled", filled, "--out", out)
        assert code == 0
        assert self.counts_line(capsys) == "labeled 2 points (1 workpiece)"
        labeled = dataset.load_cloud(out / "filled_labeled.ply")
        assert labeled.labels.tolist() == [1, 0]
        _, mask = dataset.load_depthmap(out / "filled.bdm")
        assert mask is not None
        record = json.loads((out / "autolabel.run.json").read_text())
        assert record["command"] == "autolabel"
        assert record["args"]["filled"] == str(filled)

    def test_json_config_overrides_defaults(self, tmp_path, capsys):
        empty, filled = self.make_pair(tmp_path, filled_z=8.0)
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"d_max_mm": 9.0}))
        run("autolabel", "--empty", empty, "--filled", filled,
            "--out", tmp_path / "o", "--config", config)
        assert self.counts_line(capsys) == "labeled 2 points (0 workpiece)"

    def test_flags_override_the_json_config(self, tmp_path, capsys):
        empty, filled = self.make_pair(tmp_path, filled_z=8.0)
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"d_max_mm": 9.0}))
        run("autolabel", "--empty", empty, "--filled", filled,
            "--out", tmp_path / "o", "--config", config, "--d-max", 7)
        assert self.counts_line(capsys) == "labeled 2 points (1 workpiece)"

    def test_unknown_config_keys_fail(self, tmp_path, capsys):
        empty, filled = self.make_pair(tmp_path, filled_z=8.0)
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"dmax": 9.0}))
        code = run("autolabel", "--empty", empty, "--filled", filled,
                   "--out", tmp_path / "o", "--config", config)
        assert code == 1
        err = json.loads(capsys.readouterr().err)
        assert "unknown config keys ['dmax']" in err["error"]
        assert err["command"] == "autolabel"

    def test_even_inpaint_kernel_fails_validation(self, tmp_path, capsys):
        empty, filled = self.make_pair(tmp_path, filled_z=8.0)
        code = run("autolabel", "--empty", empty, "--filled", filled,
                   "--out", tmp_path / "o", "--k-inpaint", 4)
        assert code == 1
        assert "k_inpaint must be odd" in json.loads(capsys.readouterr().err)["error"]


# ---------------------------------------------------------------------------
# clean
# ---------------------------------------------------------------------------

class TestClean:
    def blocky_mask(self):
        labels = np.zeros((9, 9), np.uint8)
        labels[1:6, 1:6] = 1
        labels[3, 3] = 0  # hole
        labels[7, 7] = 1  # speck
        return labels

    def test_default_close_fills_holes_and_keeps_specks(self, tmp_path, capsys):
        labels = self.blocky_mask()
        src, dst = tmp_path / "in.bdm", tmp_path / "out.bdm"
        save_frame(src, np.arange(81.0).reshape(9, 9), labels)
        assert run("clean", "--in", src, "--out", dst) == 0
        assert "cleaned mask written" in capsys.readouterr().out
        _, cleaned = dataset.load_depthmap(dst)
        assert np.array_equal(cleaned.labels, oracles.close_reference(labels, 3))
        assert cleaned.labels[3, 3] == 1
        assert cleaned.labels[7, 7] == 1

    def test_opening_removes_specks(self, tmp_path):
        labels = self.blocky_mask()
        src, dst = tmp_path / "in.bdm", tmp_path / "out.bdm"
        save_frame(src, np.arange(81.0).reshape(9, 9), labels)
        assert run("clean", "--in", src, "--out", dst, "--close-k", 0,
                   "--open-k", 3) == 0
        _, cleaned = dataset.load_depthmap(dst)
        assert np.array_equal(cleaned.labels, oracles.open_reference(labels, 3))
        assert cleaned.labels[7, 7] == 0

    def test_maskless_frames_are_rejected(self, tmp_path, capsys):
        src = tmp_path / "in.bdm"
        heights = np.ones((3, 3))
        dm = DepthMap(1.0, 0.0, 0.0, heights, np.ones((3, 3), bool))
        dataset.save_depthmap(src, dm)
        assert run("clean", "--in", src, "--out", tmp_path / "o.bdm") == 1
        assert "no mask" in json.loads(capsys.readouterr().err)["error"]


# ---------------------------------------------------------------------------
# segment
# ---------------------------------------------------------------------------

ZEROS_MODEL = """\
import struct, sys

inp, out = sys.stdin.buffer, sys.stdout.buffer
while True:
    head = inp.read(12)
    if len(head) < 12:
        break
    magic, w, h = struct.unpack("<4sII", head)
    inp.read(4 * w * h)
    out.write(struct.pack("<4sII", magic, w, h))
    out.write(bytes(w * h))
    out.flush()
"""


class TestSegment:
    def test_baseline_run_writes_outputs_and_metrics(self, scene_dir, empty_dir,
                                                     tmp_path, capsys):
        out = tmp_path / "seg"
        code = run(
            "segment", "--in", scene_dir / "scene_0000.ply",
            "--empty", empty_dir / "scene_0000.ply",
            "--out", out, "--r", 4, "--s-r", 256,
        )
        assert code == 0
        for name in ("pc_w.ply", "pc_n.ply", "mask.bdm", "metrics.json",
                     "segment.run.json"):
            assert (out / name).exists()
        stdout_report = json.loads(capsys.readouterr().out.splitlines()[-1])
        file_report = json.loads((out / "metrics.json").read_text())
        assert stdout_report == file_report
        assert 0.0 <= file_report["mean_iou"] <= 1.0

    def test_external_model_run_splits_the_cloud(self, scene_dir, tmp_path, capsys):
        bare = tmp_path / "bare.ply"
        labeled = dataset.load_cloud(scene_dir / "scene_0000.ply")
        save_points(bare, labeled.points)
        stub = tmp_path / "model.py"
        stub.write_text(ZEROS_MODEL)
        out = tmp_path / "seg"
        code = run(
            "segment", "--in", bare, "--model", f"{sys.executable} {stub}",
            "--out", out, "--r", 8, "--s-r", 128,
        )
        assert code == 0
        assert "split 0 workpiece /" in capsys.readouterr().out
        assert not (out / "metrics.json").exists()
        pc_n = dataset.load_cloud(out / "pc_n.ply")
        assert len(pc_n) == len(labeled)

    def test_requires_exactly_one_segmenter_source(self, scene_dir, empty_dir,
                                                   tmp_path, capsys):
        ply = scene_dir / "scene_0000.ply"
        assert run("segment", "--in", ply, "--out", tmp_path / "x") == 1
        err = json.loads(capsys.readouterr().err)
        assert "pick exactly one of --empty" in err["error"]
        code = run(
            "segment", "--in", ply, "--empty", empty_dir / "scene_0000.ply",
            "--model", "whatever", "--out", tmp_path / "y",
        )
        assert code == 1

    def test_missing_input_file_reports_the_path(self, tmp_path, capsys):
        code = run("segment", "--in", tmp_path / "nope.ply",
                   "--empty", tmp_path / "also-nope.ply", "--out", tmp_path / "o")
        assert code == 1
        err = json.loads(capsys.readouterr().err)
        assert err["command"] == "segment"
        assert "nope.ply" in err["error"]


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

class TestEval:
    def fill_dirs(self, tmp_path):
        pred, gt = tmp_path / "pred", tmp_path / "gt"
        pred.mkdir()
        gt.mkdir()
        heights = np.arange(4.0).reshape(2, 2)
        save_frame(pred / "a.bdm", heights, [[1, 0], [0, 0]])
        save_frame(gt / "a.bdm", heights, [[1, 1], [0, 0]])
        return pred, gt

    def test_reports_per_scan_and_mean_scores(self, tmp_path, capsys):
        pred, gt = self.fill_dirs(tmp_path)
        report_path = tmp_path / "report.json"
        assert run("eval", "--pred", pred, "--gt", gt, "--out", report_path) == 0
        report = json.loads(capsys.readouterr().out)
        assert set(report) == {"scans", "mean"}
        scores = report["scans"]["a.bdm"]
        assert scores["pixel_accuracy"] == 0.75
        assert scores["iou_workpiece"] == 0.5
        assert report["mean"]["mean_iou"] == scores["mean_iou"]
        assert json.loads(report_path.read_text()) == report

    def test_unmatched_files_are_an_error(self, tmp_path, capsys):
        pred, gt = self.fill_dirs(tmp_path)
        save_frame(pred / "b.bdm", np.ones((2, 2)), np.zeros((2, 2), np.uint8))
        assert run("eval", "--pred", pred, "--gt", gt) == 1
        err = json.loads(capsys.readouterr().err)
        assert "unmatched depth maps: ['b.bdm']" in err["error"]

    def test_no_common_files_is_an_error(self, tmp_path, capsys):
        pred, gt = tmp_path / "p", tmp_path / "g"
        pred.mkdir()
        gt.mkdir()
        assert run("eval", "--pred", pred, "--gt", gt) == 1
        assert "no .bdm files common" in json.loads(capsys.readouterr().err)["error"]


# ---------------------------------------------------------------------------
# augment
# ---------------------------------------------------------------------------

class TestAugment:
    def test_flipping_twice_restores_the_file(self, tmp_path):
        rng = np.random.default_rng(3)
        src = tmp_path / "f.bdm"
        save_frame(src, rng.uniform(0, 9, (4, 6)), rng.integers(0, 2, (4, 6)))
        once = tmp_path / "once.bdm"
        twice = tmp_path / "twice.bdm"
        assert run("augment", "--in", src, "--out", once, "--flip-h") == 0
        assert run("augment", "--in", once, "--out", twice, "--flip-h") == 0
        assert twice.read_bytes() == src.read_bytes()
        assert once.read_bytes() != src.read_bytes()

    def test_rotation_changes_the_frame_shape(self, tmp_path):
        src, dst = tmp_path / "f.bdm", tmp_path / "r.bdm"
        save_frame(src, np.zeros((2, 4)), np.zeros((2, 4), np.uint8))
        assert run("augment", "--in", src, "--out", dst, "--rot", 90) == 0
        dm, _ = dataset.load_depthmap(dst)
        assert dm.heights.shape == (4, 2)

    def test_out_of_range_scale_fails(self, tmp_path, capsys):
        src = tmp_path / "f.bdm"
        save_frame(src, np.zeros((2, 2)), np.zeros((2, 2), np.uint8))
        assert run("augment", "--in", src, "--out", tmp_path / "o.bdm",
                   "--scale", 3.0) == 1
        assert "scale" in json.loads(capsys.readouterr().err)["error"]


# ---------------------------------------------------------------------------
# split
# ---------------------------------------------------------------------------

class TestSplit:
    def test_assigns_and_persists_splits(self, scene_dir, capsys):
        manifest_path = scene_dir / "manifest.json"
        code = run("split", "--manifest", manifest_path,
                   "--train", 0.5, "--val", 0, "--test", 0.5, "--seed", 1)
        assert code == 0
        counts = json.loads(capsys.readouterr().out)
        assert counts == {"train": 1, "val": 0, "test": 1, "unassigned": 0}
        manifest = dataset.load_manifest(manifest_path)
        assert sorted(s.split for s in manifest.scans) == ["test", "train"]

    def test_impossible_fractions_fail_cleanly(self, scene_dir, capsys):
        code = run("split", "--manifest", scene_dir / "manifest.json",
                   "--train", 0, "--val", 0.9, "--test", 0.1)
        assert code == 1
        assert "has 2 scans" in json.loads(capsys.readouterr().err)["error"]
