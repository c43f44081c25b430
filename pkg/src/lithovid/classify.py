"""Per-frame morphology prediction on stone-masked frames.

A trained deep classifier is out of scope; predictions flow through a
uniform interface with two implementations: a nearest-centroid model
over color/gradient histograms of the stone pixels, and an import path
for per-frame score files produced by any external network.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol

import numpy as np

from .core import CANONICAL_ORDER, FrameGrid, MorphClass, StoneMask
from .errors import (
    DimensionMismatch,
    EmptyMask,
    EmptyMaskSample,
    MalformedRow,
    MissingClass,
    MissingScore,
    NotTrained,
    ScoreSumViolation,
    UnknownClass,
    ValidationError,
)

RGB_BINS = 8          # per channel, 8x8x8 = 512 color bins
GRAD_BINS = 16
GRAD_BIN_WIDTH = 10.0  # gradient-magnitude bin width in intensity units
FEATURE_DIM = RGB_BINS**3 + GRAD_BINS
DEFAULT_BETA = 50.0
IMPORT_SUM_TOL = 1e-6

SCORE_HEADER = ["frame"] + [c.tag for c in CANONICAL_ORDER]


class Classifier(Protocol):
    """Score-map predictor; scores cover all five classes and sum to 1."""

    def predict(self, frame: FrameGrid, mask: StoneMask) -> dict[MorphClass, float]: ...


def apply_mask(frame: FrameGrid, mask: StoneMask) -> FrameGrid:
    """Zero every pixel outside the mask; stone pixels pass unchanged."""
    if mask.bits.shape != frame.pixels.shape[:2]:
        raise DimensionMismatch(
            f"mask {mask.bits.shape} vs frame {frame.pixels.shape[:2]}"
        )
    out = frame.pixels.copy()
    out[~mask.bits] = 0
    return FrameGrid(out, stream_index=frame.stream_index)


def features(frame: FrameGrid, mask: StoneMask) -> np.ndarray:
    """L1-normalized color + gradient histogram over the stone pixels only.

    Works on the masked frame, so nothing outside the mask can leak into
    the feature vector (gradients at the stone border see zeros, never
    the actual background).
    """
    if mask.empty:
        raise EmptyMask("cannot featurize an empty mask")
    masked = apply_mask(frame, mask)
    bits = mask.bits
    px = masked.pixels[bits]
    idx = (
        (px[:, 0] >> 5).astype(np.intp) * (RGB_BINS * RGB_BINS)
        + (px[:, 1] >> 5).astype(np.intp) * RGB_BINS
        + (px[:, 2] >> 5).astype(np.intp)
    )
    color_hist = np.bincount(idx, minlength=RGB_BINS**3).astype(np.float64)

    rgb = masked.pixels.astype(np.float64)
    luma = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    gy, gx = np.gradient(luma)
    mag = np.hypot(gx, gy)[bits]
    g_idx = np.minimum((mag / GRAD_BIN_WIDTH).astype(np.intp), GRAD_BINS - 1)
    grad_hist = np.bincount(g_idx, minlength=GRAD_BINS).astype(np.float64)

    vec = np.concatenate([color_hist, grad_hist])
    return vec / vec.sum()


def softmin_scores(distances: Mapping[MorphClass, float], beta: float) -> dict[MorphClass, float]:
    """exp(-beta*d) normalized over classes; beta 0 gives uniform scores."""
    if beta < 0:
        raise ValidationError("beta must be non-negative")
    classes = [c for c in CANONICAL_ORDER if c in distances]
    d = np.array([distances[c] for c in classes], dtype=np.float64)
    w = np.exp(-beta * (d - d.min()))
    w /= w.sum()
    return {c: float(w[i]) for i, c in enumerate(classes)}


@dataclass(frozen=True, eq=False)
class CentroidModel:
    """Per-class feature centroids scored by a softmin over L1 distances."""

    centroids: Mapping[MorphClass, np.ndarray]
    beta: float = DEFAULT_BETA

    def __post_init__(self) -> None:
        if self.beta < 0:
            raise ValidationError("beta must be non-negative")
        cents = {}
        for c, v in self.centroids.items():
            arr = np.asarray(v, dtype=np.float64)
            if arr.shape != (FEATURE_DIM,):
                raise ValidationError(f"centroid for {c.tag} has shape {arr.shape}")
            arr = arr.copy()
            arr.setflags(write=False)
            cents[c] = arr
        object.__setattr__(self, "centroids", cents)

    def _require_trained(self) -> None:
        missing = [c.tag for c in CANONICAL_ORDER if c not in self.centroids]
        if missing:
            raise NotTrained(f"model lacks centroids for: {', '.join(missing)}")

    def predict(self, frame: FrameGrid, mask: StoneMask) -> dict[MorphClass, float]:
        self._require_trained()
        feat = features(frame, mask)
        dists = {
            c: float(np.abs(feat - cent).sum()) for c, cent in self.centroids.items()
        }
        return softmin_scores(dists, self.beta)

    def save(self, path: Path) -> None:
        payload = {
            "beta": float(self.beta),
            "centroids": {c.tag: [float(x) for x in v] for c, v in self.centroids.items()},
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", "utf-8")

    @classmethod
    def load(cls, path: Path) -> "CentroidModel":
        try:
            payload = json.loads(Path(path).read_text("utf-8"))
            centroids = {
                MorphClass.from_tag(tag): np.array(vec, dtype=np.float64)
                for tag, vec in payload["centroids"].items()
            }
            return cls(centroids=centroids, beta=float(payload["beta"]))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise NotTrained(f"cannot load model from {path}: {exc}") from None


def train_centroid(
    samples: Iterable[tuple[FrameGrid, StoneMask, MorphClass]],
    beta: float = DEFAULT_BETA,
) -> CentroidModel:
    """Average the feature vectors of each class into its centroid."""
    sums: dict[MorphClass, np.ndarray] = {}
    counts: dict[MorphClass, int] = {}
    for i, (frame, mask, label) in enumerate(samples):
        if mask.empty:
            raise EmptyMaskSample(f"training sample {i} ({label.tag}) has an empty mask")
        vec = features(frame, mask)
        if label in sums:
            sums[label] += vec
            counts[label] += 1
        else:
            sums[label] = vec.copy()
            counts[label] = 1
    missing = [c.tag for c in CANONICAL_ORDER if c not in sums]
    if missing:
        raise MissingClass(f"no training samples for: {', '.join(missing)}")
    centroids = {c: sums[c] / counts[c] for c in sums}
    return CentroidModel(centroids=centroids, beta=beta)


# -- external score import / export -------------------------------------------


@dataclass(frozen=True, eq=False)
class ScoreTable:
    """Classifier backed by imported per-frame scores."""

    scores: Mapping[int, Mapping[MorphClass, float]]

    def predict(self, frame: FrameGrid, mask: StoneMask) -> dict[MorphClass, float]:
        try:
            return dict(self.scores[frame.stream_index])
        except KeyError:
            raise MissingScore(
                f"no imported score for stream index {frame.stream_index}"
            ) from None


def import_scores(path: Path) -> dict[int, dict[MorphClass, float]]:
    """Read a per-frame score CSV (header frame,Ia,IIb,IIIb,IaIIb,IaIIIb).

    Each row must sum to 1 within 1e-6. Rows are renormalized to an
    exact unit sum only when they are not already there at float
    precision, so exporting and re-importing pipeline scores is
    bit-faithful.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRow(f"{path} is empty") from None
        if [h.strip() for h in header] != SCORE_HEADER:
            for col in header[1:]:
                if col.strip() not in {c.tag for c in CANONICAL_ORDER}:
                    raise UnknownClass(f"{path}: unknown class column {col.strip()!r}")
            raise MalformedRow(f"{path}: header must be {','.join(SCORE_HEADER)}")
        out: dict[int, dict[MorphClass, float]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise MalformedRow(f"{path}:{lineno}: expected 6 fields, got {len(row)}")
            try:
                frame_idx = int(row[0])
                values = [float(x) for x in row[1:]]
            except ValueError as exc:
                raise MalformedRow(f"{path}:{lineno}: {exc}") from None
            if frame_idx < 0:
                raise MalformedRow(f"{path}:{lineno}: negative frame index")
            if frame_idx in out:
                raise MalformedRow(f"{path}:{lineno}: duplicate frame {frame_idx}")
            if any(v < 0 for v in values):
                raise MalformedRow(f"{path}:{lineno}: negative score")
            total = sum(values)
            if abs(total - 1.0) > IMPORT_SUM_TOL:
                raise ScoreSumViolation(
                    f"{path}:{lineno}: scores sum to {total!r}, not 1 within {IMPORT_SUM_TOL}"
                )
            if abs(total - 1.0) > 1e-12:
                values = [v / total for v in values]
            out[frame_idx] = dict(zip(CANONICAL_ORDER, values))
    return out


def export_scores(
    rows: Mapping[int, Mapping[MorphClass, float]],
    path: Path,
) -> None:
    """Write per-frame scores in the import format, full float precision."""
    path = Path(path)
    lines = [",".join(SCORE_HEADER)]
    for idx in sorted(rows):
        scores = rows[idx]
        lines.append(",".join([str(idx)] + [repr(float(scores[c])) for c in CANONICAL_ORDER]))
    path.write_text("\n".join(lines) + "\n", "utf-8")


def scores_of_timeline(timeline) -> dict[int, Mapping[MorphClass, float]]:
    """Per-frame score rows for the QC-passing records of a timeline."""
    return {r.stream_index: r.scores for r in timeline.records if r.qc.passed}
