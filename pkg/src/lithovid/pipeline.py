"""The four-step per-video pipeline.

Frames flow through segmentation, the quality gate, per-frame
classification and finally label aggregation into one decision. Ablation
variants switch off pixel masking (classifier sees the whole frame) or
the whole gate (every frame is classified and counted).
"""

from __future__ import annotations

from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .classify import Classifier
from .core import (
    FRAME_SIDE,
    FrameGrid,
    PredictionRecord,
    StoneMask,
    VideoTimeline,
)
from .decision import LabelCensus, decide
from .qc import QcConfig, check_frame
from .segmentation import Segmenter
from .video_io import RawVideo, normalize_video


class Variant(Enum):
    FULL = "full"
    NO_MASKING = "no-masking"
    NO_QC = "no-qc"


FULL_FRAME_MASK = StoneMask(np.ones((FRAME_SIDE, FRAME_SIDE), dtype=bool))


def run_timeline(
    video_id: str,
    frames: Sequence[FrameGrid],
    segmenter: Optional[Segmenter],
    classifier: Classifier,
    cfg: QcConfig = QcConfig(),
    variant: Variant = Variant.FULL,
) -> VideoTimeline:
    """Run steps 1-4 over normalized frames and assemble the timeline."""
    records: list[PredictionRecord] = []

    if variant is Variant.NO_QC:
        for frame in frames:
            scores = classifier.predict(frame, FULL_FRAME_MASK)
            records.append(PredictionRecord.passing(frame.stream_index, scores))
    else:
        previous: Optional[StoneMask] = None
        for frame in frames:
            mask = segmenter.segment(frame)
            verdict = check_frame(mask, previous, cfg)
            previous = mask
            if not verdict.passed:
                records.append(PredictionRecord.rejected(frame.stream_index, verdict))
                continue
            predict_mask = mask if variant is Variant.FULL else FULL_FRAME_MASK
            scores = classifier.predict(frame, predict_mask)
            records.append(PredictionRecord.passing(frame.stream_index, scores, dsc=verdict.dsc))

    labels = [r.label for r in records if r.qc.passed]
    decision = None
    path = None
    if labels:
        decision, path = decide(LabelCensus.from_labels(labels))
    return VideoTimeline(
        video_id=video_id,
        records=tuple(records),
        decision=decision,
        decision_path=path,
    )


def run_raw_video(
    video: RawVideo,
    segmenter_factory,
    classifier: Classifier,
    cfg: QcConfig = QcConfig(),
    variant: Variant = Variant.FULL,
) -> VideoTimeline:
    """Standardize a raw video then run the pipeline.

    segmenter_factory(frames, truth_masks) builds the per-video
    segmenter; it receives the normalized truth masks so oracle
    segmentation can be wired without global state. It may be None for
    the no-qc variant.
    """
    frames, truths = normalize_video(video)
    segmenter = None
    if variant is not Variant.NO_QC:
        segmenter = segmenter_factory(frames, truths)
    return run_timeline(video.video_id, frames, segmenter, classifier, cfg, variant)
