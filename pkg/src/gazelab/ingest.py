"""Parsers for gaze logs, case manifests, lung masks, and annotation logs.

All parsers are pure functions over byte/str streams and raise
:class:`ParseError` (with a line number where applicable) or
:class:`ValidationError` on bad input.  Matching serializers are provided
so that every parsed object round-trips.

File formats:

* Gaze CSV      -- header ``t_ms,lx,ly,lvalid,rx,ry,rvalid``; extra
                   columns (pupil, head pose, ...) are carried as opaque
                   extras and otherwise ignored.
* Segment CSV   -- header ``case_id,start_ms,end_ms``.
* Manifest JSON -- array of ``{case_id, class, subtlety?, width, height,
                   mask_path, nodule?: {cx, cy, r}, distractor_type?}``.
* Masks         -- binary PGM (P5, maxval <= 255) or 8-bit grayscale PNG.
* Annotations   -- CSV ``case_id,x,y,mark_timestamp_ms``.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image

GAZE_HEADER = ["t_ms", "lx", "ly", "lvalid", "rx", "ry", "rvalid"]
SEGMENT_HEADER = ["case_id", "start_ms", "end_ms"]
ANNOTATION_HEADER = ["case_id", "x", "y", "mark_timestamp_ms"]

CASE_CLASSES = ("nodule", "normal", "distractor")


class ParseError(ValueError):
    """Malformed input; message names the offending line or field."""


class ValidationError(ValueError):
    """Structurally valid input violating a domain invariant."""


@dataclass(frozen=True)
class GazeSample:
    """One cyclopean gaze sample.  x/y are meaningless when not valid."""

    t_ms: int
    x: float
    y: float
    valid: bool


@dataclass(frozen=True)
class Segment:
    case_id: str
    start_ms: int
    end_ms: int


@dataclass
class GazeRecording:
    subject_id: str
    session_index: int
    segments: list[Segment]
    samples: list[GazeSample]
    # extra gaze-log columns, keyed by column name (opaque, never parsed)
    extras: dict[str, list[str]] = field(default_factory=dict)


@dataclass(frozen=True)
class NoduleDisc:
    cx: float
    cy: float
    r: float


@dataclass
class CaseDefinition:
    case_id: str
    case_class: str  # nodule | normal | distractor
    width: int
    height: int
    lung_mask: np.ndarray  # bool, shape (height, width)
    subtlety: int | None = None
    nodule: NoduleDisc | None = None
    distractor_type: str | None = None

    def __post_init__(self) -> None:
        if self.case_class not in CASE_CLASSES:
            raise ValidationError(
                f"case {self.case_id}: unknown class {self.case_class!r}"
            )
        if self.case_class == "nodule" and self.nodule is None:
            raise ValidationError(f"nodule case {self.case_id} is missing its disc")
        if self.case_class != "nodule" and self.nodule is not None:
            raise ValidationError(
                f"{self.case_class} case {self.case_id} must not carry a nodule disc"
            )
        if self.subtlety is not None and not 1 <= self.subtlety <= 5:
            raise ValidationError(
                f"case {self.case_id}: subtlety {self.subtlety} outside 1..5"
            )
        mask = np.asarray(self.lung_mask, dtype=bool)
        if mask.shape != (self.height, self.width):
            raise ValidationError(
                f"case {self.case_id}: mask shape {mask.shape} does not match "
                f"declared {self.height}x{self.width}"
            )
        if not mask.any():
            raise ValidationError(f"case {self.case_id}: lung mask has no true pixel")
        object.__setattr__(self, "lung_mask", mask)


@dataclass
class AnnotationSet:
    """Marked points per case, in mark order."""

    marks: dict[str, list[tuple[float, float]]] = field(default_factory=dict)

    def points(self, case_id: str) -> list[tuple[float, float]]:
        return self.marks.get(case_id, [])


def _text(stream: bytes | str) -> str:
    if isinstance(stream, bytes):
        return stream.decode("utf-8")
    return stream


def _read_csv(text: str, expected_header: list[str], allow_extra: bool = False):
    """Yield (line_no, row dict).  Checks the header up front."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty stream: missing header") from None
    header = [h.strip() for h in header]
    if allow_extra:
        missing = [c for c in expected_header if c not in header]
        if missing:
            raise ParseError(f"line 1: unknown header, missing columns {missing}")
    elif header != expected_header:
        raise ParseError(
            f"line 1: unknown header {header!r}, expected {expected_header!r}"
        )
    for line_no, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise ParseError(
                f"line {line_no}: expected {len(header)} fields, got {len(row)}"
            )
        yield line_no, dict(zip(header, row))


def _parse_int(value: str, line_no: int, name: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ParseError(f"line {line_no}: field {name}={value!r} is not an integer")


def _parse_float(value: str, line_no: int, name: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ParseError(f"line {line_no}: field {name}={value!r} is not a number")


def _parse_flag(value: str, line_no: int, name: str) -> bool:
    if value not in ("0", "1"):
        raise ParseError(f"line {line_no}: field {name}={value!r} must be 0 or 1")
    return value == "1"


def parse_gaze_log(
    stream: bytes | str,
    subject_id: str = "",
    session_index: int = 1,
    segments: list[Segment] | None = None,
) -> GazeRecording:
    """Parse a bilateral gaze CSV into a cyclopean recording.

    Both eyes valid -> midpoint; one valid -> that eye; neither -> an
    invalid sample.  Timestamps must strictly increase.
    """
    extra_cols: dict[str, list[str]] = {}
    samples: list[GazeSample] = []
    last_t: int | None = None
    for line_no, row in _read_csv(_text(stream), GAZE_HEADER, allow_extra=True):
        t = _parse_int(row["t_ms"], line_no, "t_ms")
        if t < 0:
            raise ParseError(f"line {line_no}: negative timestamp {t}")
        if last_t is not None and t <= last_t:
            raise ParseError(
                f"line {line_no}: non-monotone timestamp {t} after {last_t}"
            )
        last_t = t
        lvalid = _parse_flag(row["lvalid"], line_no, "lvalid")
        rvalid = _parse_flag(row["rvalid"], line_no, "rvalid")
        if lvalid and rvalid:
            lx = _parse_float(row["lx"], line_no, "lx")
            ly = _parse_float(row["ly"], line_no, "ly")
            rx = _parse_float(row["rx"], line_no, "rx")
            ry = _parse_float(row["ry"], line_no, "ry")
            sample = GazeSample(t, (lx + rx) / 2.0, (ly + ry) / 2.0, True)
        elif lvalid:
            sample = GazeSample(
                t,
                _parse_float(row["lx"], line_no, "lx"),
                _parse_float(row["ly"], line_no, "ly"),
                True,
            )
        elif rvalid:
            sample = GazeSample(
                t,
                _parse_float(row["rx"], line_no, "rx"),
                _parse_float(row["ry"], line_no, "ry"),
                True,
            )
        else:
            sample = GazeSample(t, 0.0, 0.0, False)
        samples.append(sample)
        for name, value in row.items():
            if name not in GAZE_HEADER:
                extra_cols.setdefault(name, []).append(value)
    return GazeRecording(
        subject_id=subject_id,
        session_index=session_index,
        segments=list(segments or []),
        samples=samples,
        extras=extra_cols,
    )


def serialize_gaze_log(recording: GazeRecording) -> str:
    """Inverse of :func:`parse_gaze_log` up to cyclopean collapse."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(GAZE_HEADER)
    for s in recording.samples:
        if s.valid:
            writer.writerow([s.t_ms, s.x, s.y, 1, s.x, s.y, 1])
        else:
            writer.writerow([s.t_ms, 0.0, 0.0, 0, 0.0, 0.0, 0])
    return out.getvalue()


def parse_segments(stream: bytes | str) -> list[Segment]:
    """Parse the per-case display schedule; intervals must be disjoint and ordered."""
    segments: list[Segment] = []
    for line_no, row in _read_csv(_text(stream), SEGMENT_HEADER):
        start = _parse_int(row["start_ms"], line_no, "start_ms")
        end = _parse_int(row["end_ms"], line_no, "end_ms")
        if end <= start:
            raise ParseError(
                f"line {line_no}: segment end {end} not after start {start}"
            )
        if segments and start < segments[-1].end_ms:
            raise ParseError(
                f"line {line_no}: segment starting at {start} overlaps previous "
                f"segment ending at {segments[-1].end_ms}"
            )
        segments.append(Segment(row["case_id"], start, end))
    return segments


def serialize_segments(segments: list[Segment]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(SEGMENT_HEADER)
    for seg in segments:
        writer.writerow([seg.case_id, seg.start_ms, seg.end_ms])
    return out.getvalue()


def parse_mask(stream: bytes) -> np.ndarray:
    """Decode a binary PGM (P5) or 8-bit grayscale PNG into a bool bitmap.

    Any pixel value > 0 counts as lung.
    """
    if not isinstance(stream, (bytes, bytearray)):
        raise ParseError("mask stream must be bytes")
    data = bytes(stream)
    if data[:2] == b"P5":
        return _parse_pgm(data) > 0
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        try:
            img = Image.open(io.BytesIO(data))
            img.load()
        except Exception as exc:
            raise ParseError(f"truncated or invalid PNG payload: {exc}") from None
        if img.mode != "L":
            raise ParseError(
                f"unsupported PNG mode {img.mode!r}: need 8-bit grayscale"
            )
        return np.asarray(img) > 0
    raise ParseError(f"unsupported format magic {data[:2]!r}")


def _parse_pgm(data: bytes) -> np.ndarray:
    # header = magic, width, height, maxval separated by whitespace/comments
    tokens: list[bytes] = []
    pos = 2  # past P5
    while len(tokens) < 3:
        match = re.match(rb"(?:\s+|#[^\n]*\n)*(\d+)", data[pos:])
        if match is None:
            raise ParseError("truncated PGM header")
        tokens.append(match.group(1))
        pos += match.end()
    width, height, maxval = (int(t) for t in tokens)
    if maxval > 255:
        raise ParseError(f"unsupported depth: PGM maxval {maxval} > 255")
    pos += 1  # single whitespace after maxval
    pixels = data[pos : pos + width * height]
    if len(pixels) < width * height:
        raise ParseError(
            f"truncated PGM payload: expected {width * height} bytes, "
            f"got {len(pixels)}"
        )
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width).copy()


def serialize_mask_pgm(mask: np.ndarray) -> bytes:
    """Write a bool bitmap as binary PGM (0/255)."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    body = (mask.astype(np.uint8) * 255).tobytes()
    return b"P5\n%d %d\n255\n" % (w, h) + body


def parse_case_manifest(
    stream: bytes | str,
    mask_loader: Callable[[str], bytes] | None = None,
    base_dir: Path | str | None = None,
) -> list[CaseDefinition]:
    """Parse a JSON case manifest, resolving each ``mask_path``.

    ``mask_loader`` maps a mask_path to raw bytes; by default paths are
    read from the filesystem relative to ``base_dir`` (or cwd).
    """
    if mask_loader is None:
        root = Path(base_dir) if base_dir is not None else Path(".")

        def mask_loader(p: str) -> bytes:
            return (root / p).read_bytes()

    try:
        entries = json.loads(_text(stream))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid manifest JSON: {exc}") from None
    if not isinstance(entries, list):
        raise ParseError("manifest root must be a JSON array")

    cases: list[CaseDefinition] = []
    seen: set[str] = set()
    for i, entry in enumerate(entries):
        where = f"manifest entry {i}"
        if not isinstance(entry, dict):
            raise ParseError(f"{where}: not an object")
        try:
            case_id = str(entry["case_id"])
            case_class = str(entry["class"])
            width = int(entry["width"])
            height = int(entry["height"])
            mask_path = str(entry["mask_path"])
        except KeyError as exc:
            raise ParseError(f"{where}: missing field {exc}") from None
        if case_id in seen:
            raise ValidationError(f"{where}: duplicate case_id {case_id!r}")
        seen.add(case_id)
        nodule = None
        if entry.get("nodule") is not None:
            nd = entry["nodule"]
            try:
                nodule = NoduleDisc(float(nd["cx"]), float(nd["cy"]), float(nd["r"]))
            except (KeyError, TypeError) as exc:
                raise ParseError(f"{where}: bad nodule disc: {exc}") from None
        subtlety = entry.get("subtlety")
        mask = parse_mask(mask_loader(mask_path))
        cases.append(
            CaseDefinition(
                case_id=case_id,
                case_class=case_class,
                width=width,
                height=height,
                lung_mask=mask,
                subtlety=None if subtlety is None else int(subtlety),
                nodule=nodule,
                distractor_type=entry.get("distractor_type"),
            )
        )
    return cases


def serialize_case_manifest(cases: list[CaseDefinition], mask_paths: dict[str, str]) -> str:
    """JSON manifest for ``cases``; ``mask_paths`` maps case_id -> mask_path."""
    entries = []
    for c in cases:
        entry: dict = {
            "case_id": c.case_id,
            "class": c.case_class,
            "width": c.width,
            "height": c.height,
            "mask_path": mask_paths[c.case_id],
        }
        if c.subtlety is not None:
            entry["subtlety"] = c.subtlety
        if c.nodule is not None:
            entry["nodule"] = {"cx": c.nodule.cx, "cy": c.nodule.cy, "r": c.nodule.r}
        if c.distractor_type is not None:
            entry["distractor_type"] = c.distractor_type
        entries.append(entry)
    return json.dumps(entries, indent=2)


def parse_annotations(
    stream: bytes | str, cases: list[CaseDefinition]
) -> AnnotationSet:
    """Parse labeling marks, validated against the case list."""
    by_id = {c.case_id: c for c in cases}
    marks: dict[str, list[tuple[float, float]]] = {}
    for line_no, row in _read_csv(_text(stream), ANNOTATION_HEADER):
        case_id = row["case_id"]
        case = by_id.get(case_id)
        if case is None:
            raise ValidationError(f"line {line_no}: unknown case_id {case_id!r}")
        x = _parse_float(row["x"], line_no, "x")
        y = _parse_float(row["y"], line_no, "y")
        _parse_int(row["mark_timestamp_ms"], line_no, "mark_timestamp_ms")
        if not (0 <= x < case.width and 0 <= y < case.height):
            raise ValidationError(
                f"line {line_no}: mark ({x}, {y}) outside {case.width}x"
                f"{case.height} bounds of case {case_id}"
            )
        marks.setdefault(case_id, []).append((x, y))
    return AnnotationSet(marks=marks)


def serialize_annotations(annotations: AnnotationSet) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(ANNOTATION_HEADER)
    t = 0
    for case_id, points in annotations.marks.items():
        for x, y in points:
            writer.writerow([case_id, x, y, t])
            t += 1
    return out.getvalue()
