"""The five session performance metrics and the summary heatmap.

Sensitivity, coverage, search-pattern heterogeneity (pairwise DTW over
normal-case trajectories), interruption count, and review time, plus the
binarized-overlay gaze heatmap.  :func:`session_metrics` bundles them
for one subject-session.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from numba import njit

from gazelab.ingest import AnnotationSet, CaseDefinition, ValidationError
from gazelab.preprocess import GapEvent, GazeTrajectory


@dataclass(frozen=True)
class HeatmapConfig:
    cell_size_px: int
    radial_radius_px: float
    binarize_threshold: int = 0


@dataclass
class HeatmapGrid:
    gw: int
    gh: int
    cells: np.ndarray  # int, shape (gh, gw), each value in [0, n_scans]
    n_scans: int
    config: HeatmapConfig


@dataclass(frozen=True)
class DetectionOutcome:
    case_id: str
    truth: str  # positive | negative
    call: str  # hit | miss | not-applicable
    matched_mark: tuple[float, float] | None = None
    nodule_center: tuple[float, float] | None = None


@dataclass
class CaseDetail:
    """Per-case row of a MetricsBundle."""

    case_id: str
    case_class: str
    review_time_s: float
    interruptions: int
    call: str  # hit | miss | not-applicable
    nodule_center: tuple[float, float] | None = None


@dataclass
class MetricsBundle:
    subject_id: str
    session_index: int
    sensitivity: float
    coverage: float
    heterogeneity_mean: float
    heterogeneity_std: float
    interruptions: int
    mean_review_time_s: float
    per_case: list[CaseDetail]
    heatmap: HeatmapGrid
    heterogeneity_matrix: np.ndarray  # pairwise DTW over normal cases

    METRIC_NAMES = (
        "sensitivity",
        "coverage",
        "heterogeneity_mean",
        "interruptions",
        "mean_review_time_s",
    )

    def metric(self, name: str) -> float:
        if name not in self.METRIC_NAMES and name != "heterogeneity_std":
            raise KeyError(name)
        return float(getattr(self, name))


def default_foveal_radius(width: int) -> float:
    """Default foveal span: 5% of image width."""
    return 0.05 * width


def default_heatmap_config(
    width: int, height: int, foveal_radius_px: float
) -> HeatmapConfig:
    # keep the grid at most 256 cells on the long side
    cell = max(1, math.ceil(max(width, height) / 256))
    return HeatmapConfig(cell_size_px=cell, radial_radius_px=foveal_radius_px)


def detection_outcomes(
    annotations: AnnotationSet,
    cases: list[CaseDefinition],
    hit_slack_px: float = 0.0,
) -> tuple[list[DetectionOutcome], float]:
    """Score marks against ground-truth discs.

    A nodule case is a hit iff some mark lies within ``r + hit_slack_px``
    of the disc center (inclusive).  Negative cases are not scored.
    Returns the outcome list and sensitivity = hits / positive cases.
    """
    known = {c.case_id for c in cases}
    for case_id in annotations.marks:
        if case_id not in known:
            raise ValidationError(f"annotation references unknown case {case_id!r}")

    outcomes: list[DetectionOutcome] = []
    hits = 0
    positives = 0
    for case in cases:
        if case.case_class != "nodule":
            outcomes.append(DetectionOutcome(case.case_id, "negative", "not-applicable"))
            continue
        positives += 1
        disc = case.nodule
        center = (disc.cx, disc.cy)
        matched = None
        for x, y in annotations.points(case.case_id):
            if math.hypot(x - disc.cx, y - disc.cy) <= disc.r + hit_slack_px:
                matched = (x, y)
                break
        if matched is not None:
            hits += 1
            outcomes.append(
                DetectionOutcome(case.case_id, "positive", "hit", matched, center)
            )
        else:
            outcomes.append(
                DetectionOutcome(case.case_id, "positive", "miss", None, center)
            )
    if positives == 0:
        raise ValidationError("no positive cases: sensitivity undefined")
    return outcomes, hits / positives


def covered_pixel_mask(
    trajectory: GazeTrajectory, foveal_radius_px: float
) -> np.ndarray:
    """Bool grid of pixels within the foveal radius of any sample.

    Pixel (row, col) is covered iff some sample (x, y) satisfies
    (col - x)^2 + (row - y)^2 <= r^2 (inclusive).
    """
    h, w = trajectory.height, trajectory.width
    covered = np.zeros((h, w), dtype=bool)
    r = float(foveal_radius_px)
    r2 = r * r
    for x, y in trajectory.xy:
        x0 = max(0, math.ceil(x - r))
        x1 = min(w - 1, math.floor(x + r))
        y0 = max(0, math.ceil(y - r))
        y1 = min(h - 1, math.floor(y + r))
        if x1 < x0 or y1 < y0:
            continue
        cols = np.arange(x0, x1 + 1)
        rows = np.arange(y0, y1 + 1)
        d2 = (cols[None, :] - x) ** 2 + (rows[:, None] - y) ** 2
        covered[y0 : y1 + 1, x0 : x1 + 1] |= d2 <= r2
    return covered


def coverage(
    trajectories: list[GazeTrajectory],
    cases: list[CaseDefinition] | dict[str, CaseDefinition],
    foveal_radius_px: float,
) -> float:
    """Fraction of lung pixels visited, cumulative over all scans."""
    if foveal_radius_px <= 0:
        raise ValueError("foveal_radius_px must be positive")
    if isinstance(cases, list):
        cases = {c.case_id: c for c in cases}
    numerator = 0
    denominator = 0
    for traj in trajectories:
        case = cases.get(traj.case_id)
        if case is None:
            raise ValidationError(f"trajectory for case {traj.case_id!r} has no mask")
        lung = case.lung_mask
        denominator += int(lung.sum())
        numerator += int((covered_pixel_mask(traj, foveal_radius_px) & lung).sum())
    if denominator == 0:
        raise ValidationError("empty lung masks: coverage undefined")
    return numerator / denominator


@njit(cache=True)
def _dtw_accumulate(a: np.ndarray, b: np.ndarray) -> float:
    n, m = a.shape[0], b.shape[0]
    prev = np.empty(m + 1)
    cur = np.empty(m + 1)
    for j in range(m + 1):
        prev[j] = np.inf
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur[0] = np.inf
        for j in range(1, m + 1):
            dx = a[i - 1, 0] - b[j - 1, 0]
            dy = a[i - 1, 1] - b[j - 1, 1]
            cost = math.sqrt(dx * dx + dy * dy)
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = cost + best
        prev, cur = cur, prev
    return prev[m]


def _normalized_path(t: GazeTrajectory) -> np.ndarray:
    xy = np.asarray(t.xy, dtype=np.float64)
    return xy / np.array([t.width, t.height], dtype=np.float64)


def dtw_distance(a: GazeTrajectory, b: GazeTrajectory) -> float:
    """Accumulated DTW cost between two scan paths.

    Euclidean local cost on coordinates normalized by image dimensions;
    symmetric match/insert/delete steps, no window, no path-length
    normalization.
    """
    if len(a) == 0 or len(b) == 0:
        raise ValueError("dtw_distance requires non-empty trajectories")
    return float(_dtw_accumulate(_normalized_path(a), _normalized_path(b)))


def heterogeneity(
    normals: list[GazeTrajectory],
) -> tuple[np.ndarray, float, float]:
    """Pairwise DTW matrix over normal-case scan paths, with mean/std.

    Mean and (population) std are taken over the strictly upper
    triangle.  Requires at least two trajectories.
    """
    n = len(normals)
    if n < 2:
        raise ValueError("heterogeneity requires at least 2 trajectories")
    matrix = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = dtw_distance(normals[i], normals[j])
            matrix[i, j] = matrix[j, i] = d
    upper = matrix[np.triu_indices(n, k=1)]
    return matrix, float(upper.mean()), float(upper.std())


def count_interruptions(gaps: list[GapEvent]) -> int:
    return sum(1 for g in gaps if g.kind == "interruption")


def review_times(
    trajectories: list[GazeTrajectory],
) -> tuple[dict[str, float], float]:
    """Per-case display time in seconds, and the session mean."""
    if not trajectories:
        raise ValueError("review_times: no cases (mean undefined)")
    per_case = {t.case_id: t.duration_ms / 1000.0 for t in trajectories}
    mean = sum(per_case.values()) / len(per_case)
    return per_case, mean


def _disc_kernel(radius_cells: float) -> np.ndarray:
    r = int(math.floor(radius_cells))
    offsets = np.arange(-r, r + 1)
    d = np.hypot(offsets[None, :], offsets[:, None])
    return (d <= radius_cells).astype(np.int64)


def _smooth_counts(counts: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Convolve integer counts with the disc kernel by stamping it at
    each occupied cell (counts are sparse; full convolution is wasteful)."""
    gh, gw = counts.shape
    r = kernel.shape[0] // 2
    out = np.zeros((gh, gw), dtype=np.int64)
    for j, i in zip(*np.nonzero(counts)):
        c = counts[j, i]
        j0, j1 = max(0, j - r), min(gh, j + r + 1)
        i0, i1 = max(0, i - r), min(gw, i + r + 1)
        out[j0:j1, i0:i1] += c * kernel[
            j0 - (j - r) : j1 - (j - r), i0 - (i - r) : i1 - (i - r)
        ]
    return out


def build_heatmap(
    trajectories: list[GazeTrajectory], config: HeatmapConfig
) -> HeatmapGrid:
    """Binarized-overlay heatmap: per scan, bin samples into grid cells,
    smooth with a flat disc kernel, binarize, then sum over scans."""
    if not trajectories:
        raise ValueError("build_heatmap requires at least one trajectory")
    dims = {(t.width, t.height) for t in trajectories}
    if len(dims) != 1:
        raise ValidationError(f"mixed image dimensions {sorted(dims)} in heatmap input")
    (w, h) = dims.pop()
    cell = config.cell_size_px
    gw = math.ceil(w / cell)
    gh = math.ceil(h / cell)
    kernel = _disc_kernel(config.radial_radius_px / cell)

    total = np.zeros((gh, gw), dtype=np.int64)
    for traj in trajectories:
        counts = np.zeros((gh, gw), dtype=np.int64)
        if len(traj) > 0:
            ci = np.clip((traj.xy[:, 0] // cell).astype(int), 0, gw - 1)
            cj = np.clip((traj.xy[:, 1] // cell).astype(int), 0, gh - 1)
            np.add.at(counts, (cj, ci), 1)
        smoothed = _smooth_counts(counts, kernel)
        total += smoothed > config.binarize_threshold
    return HeatmapGrid(gw=gw, gh=gh, cells=total, n_scans=len(trajectories), config=config)


def session_metrics(
    subject_id: str,
    session_index: int,
    per_case: list[tuple[GazeTrajectory, list[GapEvent]]],
    annotations: AnnotationSet,
    cases: list[CaseDefinition],
    foveal_radius_px: float | None = None,
    hit_slack_px: float = 0.0,
    heatmap_config: HeatmapConfig | None = None,
) -> MetricsBundle:
    """Aggregate the five metrics plus heatmap for one subject-session.

    Heterogeneity and mean review time are computed over normal cases
    (the consistency metric is defined on normals); coverage, heatmap,
    and interruptions span all reviewed cases.
    """
    if not per_case:
        raise ValidationError("session has no reviewed cases")
    by_id = {c.case_id: c for c in cases}
    for traj, _ in per_case:
        if traj.case_id not in by_id:
            raise ValidationError(f"trajectory for unknown case {traj.case_id!r}")

    trajectories = [traj for traj, _ in per_case]
    if foveal_radius_px is None:
        foveal_radius_px = default_foveal_radius(trajectories[0].width)
    if heatmap_config is None:
        heatmap_config = default_heatmap_config(
            trajectories[0].width, trajectories[0].height, foveal_radius_px
        )

    reviewed = [by_id[t.case_id] for t in trajectories]
    outcomes, sensitivity = detection_outcomes(annotations, reviewed, hit_slack_px)
    outcome_by_case = {o.case_id: o for o in outcomes}

    cov = coverage(trajectories, by_id, foveal_radius_px)

    normals = [t for t in trajectories if by_id[t.case_id].case_class == "normal"]
    het_matrix, het_mean, het_std = heterogeneity(normals)
    _, mean_time = review_times(normals)

    all_gaps = [g for _, gaps in per_case for g in gaps]
    n_interruptions = count_interruptions(all_gaps)

    heatmap = build_heatmap(trajectories, heatmap_config)

    details = []
    for traj, gaps in per_case:
        o = outcome_by_case[traj.case_id]
        details.append(
            CaseDetail(
                case_id=traj.case_id,
                case_class=by_id[traj.case_id].case_class,
                review_time_s=traj.duration_ms / 1000.0,
                interruptions=count_interruptions(gaps),
                call=o.call,
                nodule_center=o.nodule_center,
            )
        )

    return MetricsBundle(
        subject_id=subject_id,
        session_index=session_index,
        sensitivity=sensitivity,
        coverage=cov,
        heterogeneity_mean=het_mean,
        heterogeneity_std=het_std,
        interruptions=n_interruptions,
        mean_review_time_s=mean_time,
        per_case=details,
        heatmap=heatmap,
        heterogeneity_matrix=het_matrix,
    )


def bundle_to_json(bundle: MetricsBundle) -> str:
    """Serialize a MetricsBundle (heatmap cells included) to JSON."""
    doc = {
        "subject_id": bundle.subject_id,
        "session_index": bundle.session_index,
        "sensitivity": bundle.sensitivity,
        "coverage": bundle.coverage,
        "heterogeneity_mean": bundle.heterogeneity_mean,
        "heterogeneity_std": bundle.heterogeneity_std,
        "interruptions": bundle.interruptions,
        "mean_review_time_s": bundle.mean_review_time_s,
        "per_case": [asdict(d) for d in bundle.per_case],
        "heterogeneity_matrix": bundle.heterogeneity_matrix.tolist(),
        "heatmap": {
            "gw": bundle.heatmap.gw,
            "gh": bundle.heatmap.gh,
            "n_scans": bundle.heatmap.n_scans,
            "config": asdict(bundle.heatmap.config),
            "cells": bundle.heatmap.cells.tolist(),
        },
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def bundle_from_json(text: str | bytes) -> MetricsBundle:
    doc = json.loads(text)
    hm = doc["heatmap"]
    heatmap = HeatmapGrid(
        gw=hm["gw"],
        gh=hm["gh"],
        cells=np.array(hm["cells"], dtype=np.int64),
        n_scans=hm["n_scans"],
        config=HeatmapConfig(**hm["config"]),
    )
    details = [
        CaseDetail(
            case_id=d["case_id"],
            case_class=d["case_class"],
            review_time_s=d["review_time_s"],
            interruptions=d["interruptions"],
            call=d["call"],
            nodule_center=tuple(d["nodule_center"]) if d["nodule_center"] else None,
        )
        for d in doc["per_case"]
    ]
    return MetricsBundle(
        subject_id=doc["subject_id"],
        session_index=doc["session_index"],
        sensitivity=doc["sensitivity"],
        coverage=doc["coverage"],
        heterogeneity_mean=doc["heterogeneity_mean"],
        heterogeneity_std=doc["heterogeneity_std"],
        interruptions=doc["interruptions"],
        mean_review_time_s=doc["mean_review_time_s"],
        per_case=details,
        heatmap=heatmap,
        heterogeneity_matrix=np.array(doc["heterogeneity_matrix"], dtype=float),
    )


def heatmap_to_pgm16(grid: HeatmapGrid) -> bytes:
    """16-bit binary PGM of the raw cell counts."""
    cells = np.asarray(grid.cells, dtype=np.uint16)
    header = b"P5\n%d %d\n65535\n" % (grid.gw, grid.gh)
    return header + cells.astype(">u2").tobytes()


def heatmap_sidecar_json(grid: HeatmapGrid) -> str:
    return json.dumps(
        {
            "gw": grid.gw,
            "gh": grid.gh,
            "n_scans": grid.n_scans,
            "config": asdict(grid.config),
        },
        indent=1,
        sort_keys=True,
    )
