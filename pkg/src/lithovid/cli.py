"""Operator command line.

Subcommands: phantom (generate labeled synthetic cohorts), calibrate-seg
(fit the color segmenter), train-cls (fit the centroid classifier), run
(execute the pipeline over a cohort), eval (score timelines against
ground truth) and report (merge per-variant metric files).

Every command is deterministic given its flags and --seed; repeated
invocations produce byte-identical outputs. Exit codes: 0 success,
1 usage error, 2 data error, 3 internal invariant violation.
LITHO_WORKERS caps per-video parallelism in `run`.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from . import evaluate, phantom
from .classify import (
    CentroidModel,
    ScoreTable,
    import_scores,
    train_centroid,
)
from .core import CANONICAL_ORDER, FrameGrid, MorphClass, StoneMask, VideoTimeline
from .errors import LithovidError, NotCalibrated, NoTruthAvailable
from .pipeline import Variant, run_timeline
from .qc import QcConfig
from .rng import derive_seed
from .segmentation import ChromaSegmenter, OracleSegmenter, calibrate_chroma
from .video_io import (
    MANIFEST_NAME,
    RawVideo,
    list_video_dirs,
    load_stream,
    normalize_video,
    read_pgm,
    store_stream,
    write_ppm,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse defaults to exit code 2
        raise UsageError(message)


def _workers() -> int:
    raw = os.environ.get("LITHO_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"LITHO_WORKERS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("LITHO_WORKERS must be >= 1")
    return n


def _load_run_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise LithovidError(f"config file not found: {p}")
    try:
        payload = json.loads(p.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise LithovidError(f"config {p} is not valid JSON: {exc}") from None
    known = {
        "videos", "out", "segmenter", "calibration", "masks", "classifier",
        "model", "scores", "variant", "min_coverage", "min_dsc", "overlay", "seed",
    }
    unknown = set(payload) - known
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return payload


# -- overlay rendering ---------------------------------------------------------

# 3x5 glyphs for the morphology tags and the rejected marker
_GLYPHS = {
    "I": ["###", ".#.", ".#.", ".#.", "###"],
    "a": ["...", ".##", "#.#", "#.#", ".##"],
    "b": ["#..", "#..", "##.", "#.#", "##."],
    "+": ["...", ".#.", "###", ".#.", "..."],
    "X": ["#.#", "#.#", ".#.", "#.#", "#.#"],
}


def _burn_text(img: np.ndarray, text: str, x: int = 4, y: int = 4, scale: int = 3) -> None:
    cx = x
    for ch in text:
        glyph = _GLYPHS.get(ch)
        if glyph is None:
            cx += 2 * scale
            continue
        for gy, rowtxt in enumerate(glyph):
            for gx, cell in enumerate(rowtxt):
                if cell == "#":
                    y0, x0 = y + gy * scale, cx + gx * scale
                    img[y0 : y0 + scale, x0 : x0 + scale] = (255, 255, 0)
        cx += 4 * scale


def render_overlay(frame: FrameGrid, mask: Optional[StoneMask], label_text: str) -> np.ndarray:
    out = frame.pixels.copy()
    if mask is not None and not mask.empty:
        outline = mask.bits & ~ndimage.binary_erosion(mask.bits)
        out[outline] = (0, 255, 0)
    _burn_text(out, label_text)
    return out


# -- per-video run worker --------------------------------------------------------


def _build_segmenter(args_dict: dict, frames, truths):
    kind = args_dict["segmenter"]
    if kind == "oracle":
        if truths is None:
            raise NoTruthAvailable("oracle segmenter requires truth masks in the manifest")
        return OracleSegmenter.from_masks(truths)
    if kind == "chroma":
        calibration = args_dict.get("calibration")
        if not calibration:
            raise NotCalibrated("chroma segmenter requires --calibration")
        return ChromaSegmenter.load(Path(calibration))
    if kind == "import":
        masks_root = args_dict.get("masks")
        if not masks_root:
            raise LithovidError("import segmenter requires --masks")
        video_dir = Path(masks_root) / args_dict["video_id"]
        loaded = []
        for k in range(len(frames)):
            path = video_dir / f"mask_{k:06d}.pgm"
            loaded.append(StoneMask(read_pgm(path) > 127))
        return OracleSegmenter.from_masks(loaded)
    raise UsageError(f"unknown segmenter {kind!r}")


def _run_one_video(job: dict) -> str:
    video_dir = Path(job["video_dir"])
    out_dir = Path(job["out"])
    video = load_stream(video_dir)
    frames, truths = normalize_video(video)
    variant = Variant(job["variant"])
    cfg = QcConfig(min_coverage=job["min_coverage"], min_dsc=job["min_dsc"])

    job = dict(job, video_id=video.video_id)
    segmenter = None
    if variant is not Variant.NO_QC:
        segmenter = _build_segmenter(job, frames, truths)

    if job["classifier"] == "centroid":
        classifier = CentroidModel.load(Path(job["model"]))
    elif job["classifier"] == "import":
        scores_dir = Path(job["scores"])
        classifier = ScoreTable(import_scores(scores_dir / f"{video.video_id}.csv"))
    else:
        raise UsageError(f"unknown classifier {job['classifier']!r}")

    timeline = run_timeline(video.video_id, frames, segmenter, classifier, cfg, variant)
    payload = evaluate.timeline_to_json(timeline, truth_label=video.truth_label, variant=variant)
    out_path = out_dir / f"{video.video_id}.json"
    out_path.write_text(payload, "utf-8")

    if job.get("overlay"):
        overlay_dir = out_dir / "overlays" / video.video_id
        overlay_dir.mkdir(parents=True, exist_ok=True)
        masks = None
        if segmenter is not None:
            masks = [segmenter.segment(f) for f in frames]
        for rec, frame in zip(timeline.records, frames):
            text = rec.label.display if rec.qc.passed else "X"
            mask = masks[rec.stream_index] if masks is not None else None
            img = render_overlay(frame, mask, text)
            write_ppm(overlay_dir / f"frame_{rec.stream_index:06d}.ppm", img)
    return video.video_id


# -- subcommand implementations ---------------------------------------------------


def cmd_phantom(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.per_class == 0:
        print("warning: per-class count is 0, nothing generated", file=sys.stderr)
        return EXIT_OK
    builder = phantom.PROFILE_BUILDERS[args.profile]
    for label in CANONICAL_ORDER:
        for i in range(args.per_class):
            child = derive_seed(args.seed, f"phantom-{label.tag}-{i}")
            spec = builder(child, label, args.duration)
            video, _, _ = phantom.generate_phantom(spec)
            video_id = f"{label.tag}-{args.profile}-{i:03d}"
            video_dir = out / video_id
            store_stream(
                RawVideo(
                    video_id=video_id,
                    native_fps=video.native_fps,
                    frames=video.frames,
                    truth_masks=video.truth_masks,
                    truth_label=video.truth_label,
                ),
                video_dir,
            )
            (video_dir / "phantom_spec.json").write_text(spec.to_json(), "utf-8")
    total = args.per_class * len(CANONICAL_ORDER)
    print(f"generated {total} phantom videos in {out}")
    return EXIT_OK


def _cohort_samples(cohort: Path, per_video: int):
    """(frame, truth mask, label) samples drawn evenly from each video."""
    for video_dir in list_video_dirs(cohort):
        video = load_stream(video_dir)
        if video.truth_masks is None or video.truth_label is None:
            raise NoTruthAvailable(f"{video_dir} lacks truth masks or label")
        frames, truths = normalize_video(video)
        usable = [k for k, m in enumerate(truths) if m is not None and not m.empty]
        if not usable:
            continue
        step = max(1, len(usable) // per_video)
        for k in usable[::step][:per_video]:
            yield frames[k], truths[k], video.truth_label


def cmd_calibrate_seg(args) -> int:
    if args.cohort:
        samples = ((f, m) for f, m, _ in _cohort_samples(Path(args.cohort), args.per_video))
    else:
        stills = phantom.training_stills(args.seed, args.stills)
        samples = ((f, m) for f, m, _ in stills)
    seg = calibrate_chroma(samples)
    seg.save(Path(args.out))
    print(f"calibration written to {args.out} (tau={seg.tau:.3f})")
    return EXIT_OK


def cmd_train_cls(args) -> int:
    if args.cohort:
        samples = list(_cohort_samples(Path(args.cohort), args.per_video))
    else:
        samples = phantom.training_stills(args.seed, args.stills)
    model = train_centroid(samples, beta=args.beta)
    model.save(Path(args.out))
    print(f"model with {len(model.centroids)} centroids written to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    config = _load_run_config(args.config)

    def pick(flag_value, key, default):
        if flag_value is not None:
            return flag_value
        return config.get(key, default)

    videos_root = pick(args.videos, "videos", None)
    out_root = pick(args.out, "out", None)
    if videos_root is None or out_root is None:
        raise UsageError("run requires --videos and --out (flags or config)")
    videos_root = Path(videos_root)
    if not videos_root.is_dir():
        raise LithovidError(f"video directory not found: {videos_root}")
    out_dir = Path(out_root)
    out_dir.mkdir(parents=True, exist_ok=True)

    base_job = {
        "out": str(out_dir),
        "segmenter": pick(args.segmenter, "segmenter", "oracle"),
        "calibration": pick(args.calibration, "calibration", None),
        "masks": pick(args.masks, "masks", None),
        "classifier": pick(args.classifier, "classifier", "centroid"),
        "model": pick(args.model, "model", None),
        "scores": pick(args.scores, "scores", None),
        "variant": pick(args.variant, "variant", Variant.FULL.value),
        "min_coverage": pick(args.min_coverage, "min_coverage", 0.10),
        "min_dsc": pick(args.min_dsc, "min_dsc", 0.90),
        "overlay": bool(args.overlay or config.get("overlay", False)),
    }
    if base_job["classifier"] == "centroid" and not base_job["model"]:
        raise UsageError("centroid classifier requires --model")
    if base_job["classifier"] == "import" and not base_job["scores"]:
        raise UsageError("import classifier requires --scores")
    for key in ("model", "calibration", "scores", "masks"):
        if base_job[key] and not Path(base_job[key]).exists():
            raise LithovidError(f"{key} path not found: {base_job[key]}")

    jobs = [dict(base_job, video_dir=str(d)) for d in list_video_dirs(videos_root)]
    if not jobs:
        raise LithovidError(f"no videos (no {MANIFEST_NAME}) under {videos_root}")

    workers = _workers()
    if workers == 1:
        done = [_run_one_video(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_run_one_video, jobs))
    print(f"wrote {len(done)} timelines to {out_dir}")
    return EXIT_OK


def _load_timelines(timeline_dir: Path):
    out = []
    for path in sorted(Path(timeline_dir).glob("*.json")):
        timeline, truth, variant = evaluate.timeline_from_json(path.read_text("utf-8"))
        out.append((timeline, truth, variant))
    if not out:
        raise LithovidError(f"no timeline files under {timeline_dir}")
    return out


def _truth_lookup(truth_root: Optional[str]) -> dict[str, MorphClass]:
    table: dict[str, MorphClass] = {}
    if truth_root is None:
        return table
    for video_dir in list_video_dirs(Path(truth_root)):
        manifest = json.loads((video_dir / MANIFEST_NAME).read_text("utf-8"))
        for entry in manifest.get("frames", []):
            if entry.get("truth_label"):
                table[manifest["video_id"]] = MorphClass.from_tag(entry["truth_label"])
                break
    return table


def cmd_eval(args) -> int:
    loaded = _load_timelines(Path(args.timelines))
    truth_table = _truth_lookup(args.truth)
    pairs = []
    timelines = []
    variant = None
    for timeline, embedded_truth, tl_variant in loaded:
        truth = truth_table.get(timeline.video_id, embedded_truth)
        if truth is None:
            raise LithovidError(f"no ground-truth label for video {timeline.video_id}")
        pairs.append((truth, timeline.decision))
        timelines.append((timeline, truth))
        variant = tl_variant or variant
    variant = variant or Variant.FULL

    tally = evaluate.ConfusionTally.from_pairs(pairs)
    per_class = evaluate.all_class_metrics(tally)
    overall = evaluate.overall_scores(per_class)
    qc_stats = evaluate.qc_pass_stats([tl for tl, _ in timelines])
    groups: dict[MorphClass, list[VideoTimeline]] = {}
    for tl, truth in timelines:
        groups.setdefault(truth, []).append(tl)
    framewise = evaluate.framewise_analysis(groups)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.csv").write_text(evaluate.metrics_csv({variant: per_class}), "utf-8")
    text = evaluate.summary_text({variant: per_class}, {variant: overall},
                                 {variant: qc_stats})
    fw_lines = ["", "frame-wise predicted fractions (mean over videos):"]
    for truth in CANONICAL_ORDER:
        if truth not in framewise:
            continue
        row = f"  truth {truth.tag:<7}"
        for c in CANONICAL_ORDER:
            row += f" {c.tag}={framewise[truth][c].mean:.2f}"
        fw_lines.append(row)
    (out_dir / "report.txt").write_text(text + "\n".join(fw_lines) + "\n", "utf-8")
    print(f"evaluation written to {out_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    header = None
    rows = []
    for path in args.inputs:
        lines = Path(path).read_text("utf-8").splitlines()
        if not lines:
            raise LithovidError(f"empty metrics file {path}")
        if header is None:
            header = lines[0]
        elif lines[0] != header:
            raise LithovidError(f"metrics header mismatch in {path}")
        rows.extend(lines[1:])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "combined.csv").write_text("\n".join([header] + rows) + "\n", "utf-8")

    by_variant: dict[str, list[float]] = {}
    for row in rows:
        fields = row.split(",")
        by_variant.setdefault(fields[0], []).append(float(fields[2]))
    lines = ["mean balanced accuracy by variant:"]
    for name in (Variant.FULL.value, Variant.NO_MASKING.value, Variant.NO_QC.value):
        if name in by_variant:
            values = by_variant[name]
            lines.append(f"  {name:<12} {sum(values) / len(values):6.2f} %")
    (out_dir / "combined.txt").write_text("\n".join(lines) + "\n", "utf-8")
    print(f"combined report written to {out_dir}")
    return EXIT_OK


# -- argument wiring ---------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="lithovid", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate labeled synthetic cohorts")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=2, dest="per_class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--profile", choices=sorted(phantom.PROFILE_BUILDERS), default="clean")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("calibrate-seg", help="fit the color segmenter")
    p.add_argument("--cohort", help="video cohort with truth masks")
    p.add_argument("--stills", type=int, default=40, help="synthesized stills per class")
    p.add_argument("--per-video", type=int, default=6, dest="per_video")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate_seg)

    p = sub.add_parser("train-cls", help="fit the centroid classifier")
    p.add_argument("--cohort", help="video cohort with truth masks and labels")
    p.add_argument("--stills", type=int, default=50, help="synthesized stills per class")
    p.add_argument("--per-video", type=int, default=6, dest="per_video")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beta", type=float, default=50.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_cls)

    p = sub.add_parser("run", help="run the pipeline over a cohort")
    p.add_argument("--config", help="RunConfig JSON; flags override")
    p.add_argument("--videos")
    p.add_argument("--out")
    p.add_argument("--segmenter", choices=["oracle", "chroma", "import"])
    p.add_argument("--calibration")
    p.add_argument("--masks", help="root of imported per-video mask directories")
    p.add_argument("--classifier", choices=["centroid", "import"])
    p.add_argument("--model")
    p.add_argument("--scores", help="directory of per-video score CSVs")
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--min-coverage", type=float, dest="min_coverage")
    p.add_argument("--min-dsc", type=float, dest="min_dsc")
    p.add_argument("--overlay", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score timelines against ground truth")
    p.add_argument("--timelines", required=True)
    p.add_argument("--truth", help="cohort directory with truth labels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="merge per-variant metric CSVs")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LithovidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
