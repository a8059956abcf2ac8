"""Dispersion-based fixation detection and per-trial gaze features.

Fixations come from the classic I-DT windowing rule; the feature set
(total time, first AOI fixation, dwell ratio, saccade length, coverage)
summarizes one trajectory against an optional circular area of interest.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from gazelab.ingest import CaseDefinition, NoduleDisc
from gazelab.metrics import covered_pixel_mask
from gazelab.preprocess import GazeTrajectory

DEFAULT_MIN_DURATION_MS = 100


def default_dispersion_threshold(width: int) -> float:
    """Default dispersion window: 1.5% of image width."""
    return 0.015 * width


@dataclass(frozen=True)
class Fixation:
    start_ms: int
    end_ms: int
    centroid: tuple[float, float]

    @property
    def duration_ms(self) -> int:
        return self.end_ms - self.start_ms


@dataclass
class ConsensusFeatures:
    total_time_s: float
    time_to_first_aoi_fixation_s: float | None
    mean_aoi_fixation_duration_s: float | None
    dwell_time_ratio: float
    total_fixations: int
    aoi_fixations: int
    mean_saccade_length_px: float | None
    image_coverage: float


def detect_fixations(
    trajectory: GazeTrajectory,
    dispersion_threshold_px: float | None = None,
    min_duration_ms: int = DEFAULT_MIN_DURATION_MS,
) -> list[Fixation]:
    """I-DT: grow a window while all samples stay within the dispersion
    threshold of each other (max pairwise distance); emit it as a
    fixation when it lasts at least ``min_duration_ms``."""
    if dispersion_threshold_px is None:
        dispersion_threshold_px = default_dispersion_threshold(trajectory.width)
    if dispersion_threshold_px <= 0 or min_duration_ms <= 0:
        raise ValueError("thresholds must be positive")

    t = trajectory.t_ms
    xy = trajectory.xy
    n = len(t)
    fixations: list[Fixation] = []
    i = 0
    while i < n:
        # extend while the new point stays within threshold of every
        # point already in the window
        j = i
        while j + 1 < n:
            p = xy[j + 1]
            d = np.hypot(xy[i : j + 2, 0] - p[0], xy[i : j + 2, 1] - p[1])
            if d.max() > dispersion_threshold_px:
                break
            j += 1
        if t[j] - t[i] >= min_duration_ms:
            cx = float(xy[i : j + 1, 0].mean())
            cy = float(xy[i : j + 1, 1].mean())
            fixations.append(Fixation(int(t[i]), int(t[j]), (cx, cy)))
            i = j + 1
        else:
            i += 1
    return fixations


def _in_disc(point: tuple[float, float], disc: NoduleDisc, slack: float) -> bool:
    return math.hypot(point[0] - disc.cx, point[1] - disc.cy) <= disc.r + slack


def consensus_features(
    fixations: list[Fixation],
    trajectory: GazeTrajectory,
    case: CaseDefinition,
    foveal_radius_px: float,
    aoi: NoduleDisc | None = None,
    hit_slack_px: float = 0.0,
) -> ConsensusFeatures:
    """Per-trial feature summary.

    ``aoi`` defaults to the case's nodule disc (dilated by
    ``hit_slack_px``); cases without one report the AOI-dependent
    features as absent.
    """
    if aoi is None:
        aoi = case.nodule

    total_time_s = trajectory.duration_ms / 1000.0

    aoi_fix = []
    if aoi is not None:
        aoi_fix = [f for f in fixations if _in_disc(f.centroid, aoi, hit_slack_px)]

    total_dwell = sum(f.duration_ms for f in fixations)
    aoi_dwell = sum(f.duration_ms for f in aoi_fix)
    dwell_ratio = aoi_dwell / total_dwell if total_dwell > 0 else 0.0

    first_aoi = None
    if aoi_fix:
        first_aoi = (aoi_fix[0].start_ms - trajectory.start_ms) / 1000.0
    mean_aoi_dur = (
        aoi_dwell / len(aoi_fix) / 1000.0 if aoi_fix else None
    )

    saccade = None
    if len(fixations) >= 2:
        lengths = [
            math.hypot(
                b.centroid[0] - a.centroid[0], b.centroid[1] - a.centroid[1]
            )
            for a, b in zip(fixations, fixations[1:])
        ]
        saccade = sum(lengths) / len(lengths)

    lung = case.lung_mask
    covered = covered_pixel_mask(trajectory, foveal_radius_px) & lung
    image_coverage = float(covered.sum()) / float(lung.sum())

    return ConsensusFeatures(
        total_time_s=total_time_s,
        time_to_first_aoi_fixation_s=first_aoi,
        mean_aoi_fixation_duration_s=mean_aoi_dur,
        dwell_time_ratio=dwell_ratio,
        total_fixations=len(fixations),
        aoi_fixations=len(aoi_fix),
        mean_saccade_length_px=saccade,
        image_coverage=image_coverage,
    )


def features_to_json_row(
    subject_id: str, session_index: int, case_id: str, features: ConsensusFeatures
) -> str:
    doc = {"subject_id": subject_id, "session_index": session_index, "case_id": case_id}
    doc.update(vars(features))
    return json.dumps(doc, sort_keys=True)
