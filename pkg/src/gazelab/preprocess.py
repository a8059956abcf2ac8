"""Segmentation of recordings into per-case trajectories plus gap events.

Screen samples are mapped into image pixels through a per-case affine
viewport (image -> screen: ``p_screen = scale * p_image + offset``).
Time where gaze is absent from the image (tracker-invalid samples or
gaze outside the viewport) coalesces into :class:`GapEvent` runs which
are classified as blinks (<= 500 ms) or interruptions (> 500 ms).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from gazelab.ingest import (
    CaseDefinition,
    GazeRecording,
    ParseError,
    ValidationError,
    _read_csv,
    _text,
)

INTERRUPTION_THRESHOLD_MS = 500

VIEWPORT_HEADER = ["case_id", "scale", "offset_x", "offset_y"]


@dataclass(frozen=True)
class Viewport:
    """Affine image->screen map: screen = scale * image + offset."""

    case_id: str
    scale: float
    offset_x: float
    offset_y: float

    def to_image(self, sx: float, sy: float) -> tuple[float, float]:
        return (sx - self.offset_x) / self.scale, (sy - self.offset_y) / self.scale


IDENTITY_VIEWPORT = Viewport("", 1.0, 0.0, 0.0)


@dataclass
class GazeTrajectory:
    """On-image gaze samples for one case review, in image pixels."""

    case_id: str
    t_ms: np.ndarray  # int64, strictly increasing
    xy: np.ndarray  # float, shape (n, 2)
    width: int
    height: int
    start_ms: int  # display_start of the case
    duration_ms: int  # display_end - display_start

    def __len__(self) -> int:
        return len(self.t_ms)


@dataclass(frozen=True)
class GapEvent:
    start_ms: int
    end_ms: int
    kind: str  # blink | interruption


def classify_gap(duration_ms: int) -> str:
    """Blink for <= 500 ms, interruption above (ties go to blink)."""
    if duration_ms <= 0:
        raise ValueError(f"gap duration must be positive, got {duration_ms}")
    return "interruption" if duration_ms > INTERRUPTION_THRESHOLD_MS else "blink"


def parse_viewports(stream: bytes | str) -> dict[str, Viewport]:
    viewports: dict[str, Viewport] = {}
    for line_no, row in _read_csv(_text(stream), VIEWPORT_HEADER):
        scale = float(row["scale"])
        if scale <= 0:
            raise ParseError(f"line {line_no}: viewport scale must be positive")
        viewports[row["case_id"]] = Viewport(
            row["case_id"], scale, float(row["offset_x"]), float(row["offset_y"])
        )
    return viewports


def serialize_viewports(viewports: dict[str, Viewport]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(VIEWPORT_HEADER)
    for vp in viewports.values():
        writer.writerow([vp.case_id, vp.scale, vp.offset_x, vp.offset_y])
    return out.getvalue()


def segment_by_case(
    recording: GazeRecording,
    cases: dict[str, CaseDefinition] | list[CaseDefinition],
    viewports: dict[str, Viewport] | None = None,
) -> list[tuple[GazeTrajectory, list[GapEvent]]]:
    """Split a recording along its display segments.

    Gaps open at either tracker-invalid samples or gaze mapping outside
    the image; a gap spans from the last on-image sample (or display
    start) to the next on-image sample (or display end).  A segment with
    no usable samples at all is one whole-display gap.
    """
    if isinstance(cases, list):
        cases = {c.case_id: c for c in cases}
    viewports = viewports or {}

    ts = np.array([s.t_ms for s in recording.samples], dtype=np.int64)
    out: list[tuple[GazeTrajectory, list[GapEvent]]] = []
    for seg in recording.segments:
        case = cases.get(seg.case_id)
        if case is None:
            raise ValidationError(f"segment references unknown case {seg.case_id!r}")
        vp = viewports.get(seg.case_id, IDENTITY_VIEWPORT)

        lo = int(np.searchsorted(ts, seg.start_ms, side="left"))
        hi = int(np.searchsorted(ts, seg.end_ms, side="right"))

        good_t: list[int] = []
        good_xy: list[tuple[float, float]] = []
        gaps: list[GapEvent] = []
        last_good_t = seg.start_ms
        in_gap = False

        def close_gap(end_t: int) -> None:
            duration = end_t - last_good_t
            if duration > 0:
                gaps.append(GapEvent(last_good_t, end_t, classify_gap(duration)))

        for idx in range(lo, hi):
            s = recording.samples[idx]
            on_image = False
            if s.valid:
                ix, iy = vp.to_image(s.x, s.y)
                on_image = 0 <= ix < case.width and 0 <= iy < case.height
            if on_image:
                if in_gap:
                    close_gap(s.t_ms)
                    in_gap = False
                good_t.append(s.t_ms)
                good_xy.append((ix, iy))
                last_good_t = s.t_ms
            else:
                in_gap = True
        if in_gap or not good_t:
            close_gap(seg.end_ms)

        traj = GazeTrajectory(
            case_id=seg.case_id,
            t_ms=np.array(good_t, dtype=np.int64),
            xy=np.array(good_xy, dtype=float).reshape(-1, 2),
            width=case.width,
            height=case.height,
            start_ms=seg.start_ms,
            duration_ms=seg.end_ms - seg.start_ms,
        )
        out.append((traj, gaps))
    return out
