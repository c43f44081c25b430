import hashlib
import json
import os
from pathlib import Path

import pytest

from lithovid.cli import main
from lithovid.classify import export_scores, scores_of_timeline
from lithovid.core import CANONICAL_ORDER, MorphClass
from lithovid.evaluate import timeline_from_json
from lithovid.video_io import read_pgm, write_pgm


def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Tiny end-to-end workspace: cohort, model, calibration, timelines."""
    root = tmp_path_factory.mktemp("cli")
    cohort = root / "cohort"
    assert main(["phantom", "--out", str(cohort), "--per-class", "1",
                 "--seed", "3", "--duration", "6", "--profile", "clean"]) == 0
    model = root / "model.json"
    assert main(["train-cls", "--stills", "12", "--seed", "1", "--out", str(model)]) == 0
    calibration = root / "cal.json"
    assert main(["calibrate-seg", "--stills", "6", "--seed", "99",
                 "--out", str(calibration)]) == 0
    timelines = root / "timelines"
    assert main(["run", "--videos", str(cohort), "--out", str(timelines),
                 "--segmenter", "oracle", "--classifier", "centroid",
                 "--model", str(model)]) == 0
    return root


def load_timeline(workspace, name):
    text = (workspace / "timelines" / name).read_text("utf-8")
    return timeline_from_json(text)


class TestPhantomCommand:
    def test_counts(self, workspace):
        dirs = [p for p in (workspace / "cohort").iterdir() if p.is_dir()]
        assert len(dirs) == 5  # one per class
        for d in dirs:
            assert (d / "manifest.json").is_file()
            assert (d / "phantom_spec.json").is_file()

    def test_deterministic_cohorts(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            assert main(["phantom", "--out", str(out), "--per-class", "1",
                         "--seed", "7", "--duration", "2"]) == 0
        assert tree_digest(a) == tree_digest(b)

    def test_zero_per_class_warns_and_succeeds(self, tmp_path, capsys):
        assert main(["phantom", "--out", str(tmp_path / "empty"), "--per-class", "0"]) == 0
        assert "warning" in capsys.readouterr().err


class TestRunCommand:
    def test_clean_ia_decides_majority(self, workspace):
        tl, truth, variant = load_timeline(workspace, "Ia-clean-000.json")
        assert truth is MorphClass.IA
        assert tl.decision is MorphClass.IA
        assert tl.decision_path.value == "Majority"

    def test_all_decisions_correct(self, workspace):
        for label in CANONICAL_ORDER:
            tl, truth, _ = load_timeline(workspace, f"{label.tag}-clean-000.json")
            assert tl.decision is truth

    def test_rerun_is_byte_identical(self, workspace, tmp_path):
        again = tmp_path / "timelines2"
        assert main(["run", "--videos", str(workspace / "cohort"), "--out", str(again),
                     "--segmenter", "oracle", "--classifier", "centroid",
                     "--model", str(workspace / "model.json")]) == 0
        assert tree_digest(again) == tree_digest(workspace / "timelines")

    def test_workers_env_does_not_change_bytes(self, workspace, tmp_path):
        out = tmp_path / "parallel"
        os.environ["LITHO_WORKERS"] = "2"
        try:
            assert main(["run", "--videos", str(workspace / "cohort"), "--out", str(out),
                         "--segmenter", "oracle", "--classifier", "centroid",
                         "--model", str(workspace / "model.json")]) == 0
        finally:
            del os.environ["LITHO_WORKERS"]
        assert tree_digest(out) == tree_digest(workspace / "timelines")

    def test_no_qc_variant_labels_every_frame(self, workspace, tmp_path):
        out = tmp_path / "noqc"
        assert main(["run", "--videos", str(workspace / "cohort"), "--out", str(out),
                     "--classifier", "centroid", "--model", str(workspace / "model.json"),
                     "--variant", "no-qc"]) == 0
        tl, _, variant = timeline_from_json((out / "Ia-clean-000.json").read_text("utf-8"))
        assert variant.value == "no-qc"
        assert all(r.qc.passed and r.label is not None for r in tl.records)

    def test_chroma_segmenter_path(self, workspace, tmp_path):
        out = tmp_path / "chroma"
        assert main(["run", "--videos", str(workspace / "cohort"), "--out", str(out),
                     "--segmenter", "chroma", "--calibration", str(workspace / "cal.json"),
                     "--classifier", "centroid", "--model", str(workspace / "model.json")]) == 0
        tl, truth, _ = timeline_from_json((out / "IIIb-clean-000.json").read_text("utf-8"))
        assert tl.decision is truth

    def test_imported_scores_reproduce_timelines(self, workspace, tmp_path):
        scores_dir = tmp_path / "scores"
        scores_dir.mkdir()
        for path in sorted((workspace / "timelines").glob("*.json")):
            tl, _, _ = timeline_from_json(path.read_text("utf-8"))
            export_scores(scores_of_timeline(tl), scores_dir / f"{tl.video_id}.csv")
        out = tmp_path / "imported"
        assert main(["run", "--videos", str(workspace / "cohort"), "--out", str(out),
                     "--segmenter", "oracle", "--classifier", "import",
                     "--scores", str(scores_dir)]) == 0
        assert tree_digest(out) == tree_digest(workspace / "timelines")

    def test_imported_masks_reproduce_timelines(self, workspace, tmp_path):
        masks_root = tmp_path / "masks"
        for video_dir in sorted((workspace / "cohort").iterdir()):
            if not video_dir.is_dir():
                continue
            dst = masks_root / video_dir.name
            dst.mkdir(parents=True)
            manifest = json.loads((video_dir / "manifest.json").read_text("utf-8"))
            for k, entry in enumerate(manifest["frames"]):
                mask = read_pgm(video_dir / entry["truth_mask"])
                write_pgm(dst / f"mask_{k:06d}.pgm", mask > 127)
        out = tmp_path / "from-masks"
        assert main(["run", "--videos", str(workspace / "cohort"), "--out", str(out),
                     "--segmenter", "import", "--masks", str(masks_root),
                     "--classifier", "centroid", "--model", str(workspace / "model.json")]) == 0
        assert tree_digest(out) == tree_digest(workspace / "timelines")

    def test_overlay_emits_frames(self, workspace, tmp_path):
        out = tmp_path / "overlaid"
        assert main(["run", "--videos", str(workspace / "cohort"), "--out", str(out),
                     "--segmenter", "oracle", "--classifier", "centroid",
                     "--model", str(workspace / "model.json"), "--overlay"]) == 0
        overlays = list((out / "overlays" / "Ia-clean-000").glob("frame_*.ppm"))
        assert len(overlays) == 48  # 6 s at 8 Hz

    def test_qc_threshold_overrides(self, workspace, tmp_path):
        out = tmp_path / "strict"
        assert main(["run", "--videos", str(workspace / "cohort"), "--out", str(out),
                     "--segmenter", "oracle", "--classifier", "centroid",
                     "--model", str(workspace / "model.json"),
                     "--min-coverage", "0.5"]) == 0
        tl, _, _ = timeline_from_json((out / "Ia-clean-000.json").read_text("utf-8"))
        assert tl.decision is None  # stones never cover half the frame
        assert all(r.qc.tag.value == "RejectedCoverage" for r in tl.records)

    def test_config_file_with_flag_override(self, workspace, tmp_path):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({
            "videos": str(workspace / "cohort"),
            "segmenter": "oracle",
            "classifier": "centroid",
            "model": str(workspace / "model.json"),
        }), "utf-8")
        out = tmp_path / "from-config"
        assert main(["run", "--config", str(config), "--out", str(out)]) == 0
        assert tree_digest(out) == tree_digest(workspace / "timelines")

    def test_unknown_config_key_is_usage_error(self, tmp_path):
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({"video": "x"}), "utf-8")
        assert main(["run", "--config", str(config), "--out", str(tmp_path / "o")]) == 1


class TestEvalCommand:
    def test_perfect_cohort_scores_100(self, workspace, tmp_path):
        out = tmp_path / "eval"
        assert main(["eval", "--timelines", str(workspace / "timelines"),
                     "--truth", str(workspace / "cohort"), "--out", str(out)]) == 0
        csv_lines = (out / "report.csv").read_text("utf-8").strip().splitlines()
        assert len(csv_lines) == 6
        for line in csv_lines[1:]:
            assert line.endswith("100.00,100.00,100.00,100.00,100.00")
        assert "qc pass fraction" in (out / "report.txt").read_text("utf-8")

    def test_missing_class_names_it(self, workspace, tmp_path, capsys):
        pruned = tmp_path / "pruned"
        pruned.mkdir()
        for path in (workspace / "timelines").glob("*.json"):
            if not path.name.startswith("IIIb"):
                (pruned / path.name).write_bytes(path.read_bytes())
        code = main(["eval", "--timelines", str(pruned),
                     "--truth", str(workspace / "cohort"), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "IIIb" in capsys.readouterr().err


class TestReportCommand:
    def test_adversarial_full_beats_noqc_in_report(self, tmp_path):
        cohort = tmp_path / "advers"
        assert main(["phantom", "--out", str(cohort), "--per-class", "1",
                     "--seed", "11", "--duration", "8", "--profile", "adversarial"]) == 0
        model = tmp_path / "model.json"
        assert main(["train-cls", "--stills", "12", "--seed", "1", "--out", str(model)]) == 0
        csvs = []
        for variant in ("full", "no-qc"):
            timelines = tmp_path / f"tl-{variant}"
            assert main(["run", "--videos", str(cohort), "--out", str(timelines),
                         "--segmenter", "oracle", "--classifier", "centroid",
                         "--model", str(model), "--variant", variant]) == 0
            eval_dir = tmp_path / f"eval-{variant}"
            assert main(["eval", "--timelines", str(timelines),
                         "--truth", str(cohort), "--out", str(eval_dir)]) == 0
            csvs.append(str(eval_dir / "report.csv"))
        merged = tmp_path / "merged"
        assert main(["report", "--inputs", *csvs, "--out", str(merged)]) == 0
        text = (merged / "combined.txt").read_text("utf-8")
        scores = {}
        for line in text.splitlines():
            fields = line.split()
            if fields and fields[0] in ("full", "no-qc"):
                scores[fields[0]] = float(fields[1])
        assert scores["full"] >= scores["no-qc"]

    def test_merges_variant_csvs(self, workspace, tmp_path):
        eval_full = tmp_path / "eval-full"
        assert main(["eval", "--timelines", str(workspace / "timelines"),
                     "--truth", str(workspace / "cohort"), "--out", str(eval_full)]) == 0
        noqc_dir = tmp_path / "tl-noqc"
        assert main(["run", "--videos", str(workspace / "cohort"), "--out", str(noqc_dir),
                     "--classifier", "centroid", "--model", str(workspace / "model.json"),
                     "--variant", "no-qc"]) == 0
        eval_noqc = tmp_path / "eval-noqc"
        assert main(["eval", "--timelines", str(noqc_dir),
                     "--truth", str(workspace / "cohort"), "--out", str(eval_noqc)]) == 0
        merged = tmp_path / "merged"
        assert main(["report", "--inputs", str(eval_full / "report.csv"),
                     str(eval_noqc / "report.csv"), "--out", str(merged)]) == 0
        combined = (merged / "combined.csv").read_text("utf-8").strip().splitlines()
        assert len(combined) == 11  # header + 2 variants x 5 classes
        text = (merged / "combined.txt").read_text("utf-8")
        assert "full" in text and "no-qc" in text


class TestExitCodes:
    def test_usage_error(self):
        assert main(["bogus-command"]) == 1

    def test_run_requires_videos(self):
        assert main(["run", "--out", "/tmp/x"]) == 1

    def test_missing_video_dir_is_data_error(self, tmp_path):
        model = tmp_path / "m.json"
        assert main(["train-cls", "--stills", "6", "--out", str(model)]) == 0
        assert main(["run", "--videos", str(tmp_path / "absent"), "--out",
                     str(tmp_path / "o"), "--model", str(model)]) == 2

    def test_bad_workers_env(self, workspace, tmp_path):
        os.environ["LITHO_WORKERS"] = "banana"
        try:
            code = main(["run", "--videos", str(workspace / "cohort"),
                         "--out", str(tmp_path / "o"),
                         "--classifier", "centroid",
                         "--model", str(workspace / "model.json")])
        finally:
            del os.environ["LITHO_WORKERS"]
        assert code == 1
