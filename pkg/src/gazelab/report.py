"""Per-subject feedback reports and session-over-session change tables.

A report bundles six panels: accuracy vs peers, coverage distribution,
the pairwise DTW matrix, heterogeneity distribution, interruptions, and
time per scan, plus the summed gaze heatmap annotated with hit (O) and
miss (X) markers at the ground-truth nodule centers.  Output is an HTML
document with a Markdown twin, two PNGs, and a machine-readable JSON.
Rendering is deterministic: identical inputs give identical bytes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from gazelab.ingest import ValidationError
from gazelab.metrics import DetectionOutcome, MetricsBundle

REPORT_VERSION = "1"

REFERENCE_METRICS = (
    "sensitivity",
    "coverage",
    "heterogeneity_mean",
    "interruptions",
    "mean_review_time_s",
)

# direction in which each metric improves
IMPROVE_UP = {"sensitivity": True, "coverage": True}
METRIC_LABELS = {
    "sensitivity": "Sensitivity",
    "coverage": "Coverage",
    "heterogeneity_mean": "Heterogeneity",
    "interruptions": "Interruptions",
    "mean_review_time_s": "Total Time",
}


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    sd: float


@dataclass
class CohortReference:
    """Peer (resident) and expert (faculty) mean/sd per metric."""

    peer: dict[str, MetricSummary]
    expert: dict[str, MetricSummary]


def build_cohort_reference(
    bundles: list[MetricsBundle], roles: dict[str, str]
) -> CohortReference:
    """Gaussian summaries per metric for residents (peer) and faculty
    (expert).  ``roles`` maps subject_id -> 'resident' | 'faculty'."""
    strata: dict[str, list[MetricsBundle]] = {"resident": [], "faculty": []}
    for b in bundles:
        role = roles.get(b.subject_id)
        if role not in strata:
            raise ValidationError(
                f"subject {b.subject_id!r} has unknown role {role!r}"
            )
        strata[role].append(b)
    for role, members in strata.items():
        if not members:
            raise ValidationError(f"empty role stratum {role!r}")

    def summarize(members: list[MetricsBundle]) -> dict[str, MetricSummary]:
        out = {}
        for m in REFERENCE_METRICS:
            values = np.array([b.metric(m) for b in members], dtype=float)
            out[m] = MetricSummary(float(values.mean()), float(values.std()))
        return out

    return CohortReference(
        peer=summarize(strata["resident"]), expert=summarize(strata["faculty"])
    )


def _gray_png(array: np.ndarray, upscale: int = 1) -> Image.Image:
    img = Image.fromarray(array.astype(np.uint8), mode="L")
    if upscale > 1:
        img = img.resize(
            (img.width * upscale, img.height * upscale), Image.NEAREST
        )
    return img


def render_heatmap_png(
    bundle: MetricsBundle, outcomes: list[DetectionOutcome]
) -> Image.Image:
    """Heatmap cells scaled to 8-bit, with O/X markers at nodule centers."""
    grid = bundle.heatmap
    peak = max(grid.n_scans, 1)
    shade = (np.asarray(grid.cells, dtype=float) / peak * 255.0).round()
    upscale = max(1, 512 // max(grid.gw, grid.gh))
    img = _gray_png(shade, upscale).convert("RGB")
    draw = ImageDraw.Draw(img)
    cell = grid.config.cell_size_px
    marker_r = max(4, 2 * upscale)
    for o in outcomes:
        if o.truth != "positive" or o.nodule_center is None:
            continue
        cx = o.nodule_center[0] / cell * upscale
        cy = o.nodule_center[1] / cell * upscale
        box = [cx - marker_r, cy - marker_r, cx + marker_r, cy + marker_r]
        if o.call == "hit":
            draw.ellipse(box, outline=(0, 255, 0), width=2)
        else:
            draw.line(box, fill=(255, 0, 0), width=2)
            draw.line([box[0], box[3], box[2], box[1]], fill=(255, 0, 0), width=2)
    return img


def render_dtw_png(bundle: MetricsBundle) -> Image.Image:
    matrix = np.asarray(bundle.heterogeneity_matrix, dtype=float)
    peak = matrix.max()
    shade = (matrix / peak * 255.0).round() if peak > 0 else matrix
    return _gray_png(shade, upscale=max(1, 256 // max(matrix.shape[0], 1)))


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _svg_bars(title: str, labels: list[str], values: list[float]) -> str:
    """Minimal deterministic bar chart."""
    width, height, pad = 360, 160, 28
    peak = max([abs(v) for v in values] + [1e-9])
    n = len(values)
    bar_w = (width - 2 * pad) / max(n, 1)
    parts = [
        f'<svg width="{width}" height="{height}" xmlns="http://www.w3.org/2000/svg">',
        f'<text x="{width // 2}" y="14" text-anchor="middle" font-size="12">{title}</text>',
    ]
    base = height - pad
    for i, (label, v) in enumerate(zip(labels, values)):
        h = (height - 2 * pad) * abs(v) / peak
        x = pad + i * bar_w
        parts.append(
            f'<rect x="{_fmt(x + 2)}" y="{_fmt(base - h)}" width="{_fmt(bar_w - 4)}" '
            f'height="{_fmt(h)}" fill="#4878a8"/>'
        )
        parts.append(
            f'<text x="{_fmt(x + bar_w / 2)}" y="{height - 10}" text-anchor="middle" '
            f'font-size="9">{label}</text>'
        )
        parts.append(
            f'<text x="{_fmt(x + bar_w / 2)}" y="{_fmt(base - h - 4)}" '
            f'text-anchor="middle" font-size="9">{_fmt(v)}</text>'
        )
    parts.append("</svg>")
    return "".join(parts)


def _svg_gaussian(
    title: str, subject_value: float, peer: MetricSummary, expert: MetricSummary
) -> str:
    """Two Gaussian curves (peer, expert) with the subject marked."""
    width, height, pad = 360, 160, 28
    sds = [s for s in (peer.sd, expert.sd) if s > 0]
    span_sd = max(sds) if sds else max(abs(peer.mean), 1.0) * 0.1 + 1e-9
    lo = min(peer.mean, expert.mean, subject_value) - 3 * span_sd
    hi = max(peer.mean, expert.mean, subject_value) + 3 * span_sd
    if hi <= lo:
        hi = lo + 1.0

    def xpix(v: float) -> float:
        return pad + (v - lo) / (hi - lo) * (width - 2 * pad)

    def curve(summary: MetricSummary, color: str) -> str:
        sd = summary.sd if summary.sd > 0 else span_sd * 0.05
        xs = np.linspace(lo, hi, 120)
        ys = np.exp(-0.5 * ((xs - summary.mean) / sd) ** 2)
        pts = " ".join(
            f"{_fmt(xpix(x))},{_fmt(height - pad - y * (height - 2 * pad))}"
            for x, y in zip(xs, ys)
        )
        return f'<polyline points="{pts}" fill="none" stroke="{color}"/>'

    marker = xpix(subject_value)
    return "".join(
        [
            f'<svg width="{width}" height="{height}" xmlns="http://www.w3.org/2000/svg">',
            f'<text x="{width // 2}" y="14" text-anchor="middle" font-size="12">{title}</text>',
            curve(peer, "#4878a8"),
            curve(expert, "#a84848"),
            f'<line x1="{_fmt(marker)}" y1="{pad}" x2="{_fmt(marker)}" '
            f'y2="{height - pad}" stroke="#000" stroke-dasharray="4 2"/>',
            f'<text x="{_fmt(marker)}" y="{height - 8}" text-anchor="middle" '
            f'font-size="9">you: {_fmt(subject_value)}</text>',
            "</svg>",
        ]
    )


def _panel_data(bundle: MetricsBundle, ref: CohortReference) -> dict:
    case_ids = [d.case_id for d in bundle.per_case]
    return {
        "accuracy": {
            "subject": bundle.sensitivity,
            "peer_mean": ref.peer["sensitivity"].mean,
            "peer_sd": ref.peer["sensitivity"].sd,
            "expert_mean": ref.expert["sensitivity"].mean,
            "expert_sd": ref.expert["sensitivity"].sd,
        },
        "coverage": {
            "subject": bundle.coverage,
            "peer_mean": ref.peer["coverage"].mean,
            "expert_mean": ref.expert["coverage"].mean,
        },
        "dtw_matrix": np.asarray(bundle.heterogeneity_matrix).tolist(),
        "heterogeneity": {
            "subject_mean": bundle.heterogeneity_mean,
            "subject_sd": bundle.heterogeneity_std,
            "expert_mean": ref.expert["heterogeneity_mean"].mean,
            "expert_sd": ref.expert["heterogeneity_mean"].sd,
        },
        "interruptions": {
            "total": bundle.interruptions,
            "per_case": {d.case_id: d.interruptions for d in bundle.per_case},
        },
        "time_per_scan": {
            "case_ids": case_ids,
            "seconds": [d.review_time_s for d in bundle.per_case],
            "mean_s": bundle.mean_review_time_s,
        },
    }


def render_report(
    bundle: MetricsBundle,
    ref: CohortReference,
    outcomes: list[DetectionOutcome],
    out_dir: Path | str,
) -> dict[str, Path]:
    """Write report.html, report.md, report.json, heatmap.png, dtw.png.

    ``outcomes`` must belong to the same subject-session as ``bundle``
    (checked against the bundle's per-case rows).
    """
    if not outcomes:
        raise ValidationError("empty outcomes list")
    if bundle.heatmap is None:
        raise ValidationError("bundle missing heatmap")
    bundle_cases = {d.case_id for d in bundle.per_case}
    for o in outcomes:
        if o.case_id not in bundle_cases:
            raise ValidationError(
                f"outcome for case {o.case_id!r} does not match bundle cases"
            )

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    heatmap_img = render_heatmap_png(bundle, outcomes)
    dtw_img = render_dtw_png(bundle)
    heatmap_path = out_dir / "heatmap.png"
    dtw_path = out_dir / "dtw.png"
    heatmap_img.save(heatmap_path, format="PNG")
    dtw_img.save(dtw_path, format="PNG")

    panels = _panel_data(bundle, ref)
    doc = {
        "version": REPORT_VERSION,
        "subject_id": bundle.subject_id,
        "session_index": bundle.session_index,
        "panels": panels,
    }
    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps(doc, indent=1, sort_keys=True))

    headline = f"{round(bundle.sensitivity * 100):d}%"
    case_ids = [d.case_id for d in bundle.per_case]
    times = [d.review_time_s for d in bundle.per_case]
    inter_per_case = [d.interruptions for d in bundle.per_case]

    html = "\n".join(
        [
            "<!DOCTYPE html>",
            f"<html><head><meta charset='utf-8'><title>Feedback report "
            f"{bundle.subject_id} session {bundle.session_index}</title></head><body>",
            f"<h1>Performance report: {bundle.subject_id}, session "
            f"{bundle.session_index}</h1>",
            f"<p>Sensitivity this session: <strong>{headline}</strong> "
            f"({_fmt(bundle.sensitivity)}).</p>",
            "<h2>A. Accuracy vs peers and experts</h2>",
            _svg_bars(
                "Sensitivity",
                ["you", "peers", "experts"],
                [
                    bundle.sensitivity,
                    ref.peer["sensitivity"].mean,
                    ref.expert["sensitivity"].mean,
                ],
            ),
            "<h2>B. Lung coverage</h2>",
            _svg_gaussian(
                "Coverage vs cohort",
                bundle.coverage,
                ref.peer["coverage"],
                ref.expert["coverage"],
            ),
            "<h2>C. Search-pattern similarity matrix (DTW units)</h2>",
            "<img src='dtw.png' alt='pairwise DTW matrix over normal cases'/>",
            "<h2>D. Heterogeneity</h2>",
            _svg_gaussian(
                "Heterogeneity vs expert (DTW units)",
                bundle.heterogeneity_mean,
                ref.peer["heterogeneity_mean"],
                ref.expert["heterogeneity_mean"],
            ),
            "<h2>E. Interruptions</h2>",
            f"<p>Total interruptions this session: "
            f"<strong>{bundle.interruptions}</strong></p>",
            _svg_bars("Interruptions per case", case_ids, [float(v) for v in inter_per_case]),
            "<h2>F. Time per scan</h2>",
            _svg_bars("Review time (s)", case_ids, times),
            "<h2>Cancer detection summary</h2>",
            "<p>Summed gaze heatmap; O = detected nodule, X = missed nodule.</p>",
            "<img src='heatmap.png' alt='session heatmap with hit/miss markers'/>",
            "<footer><p>Heterogeneity is reported in DTW units (scale is "
            "arbitrary). Percent-change bases differ per metric; the change "
            "table states the direction in which each metric improves."
            f" Report version {REPORT_VERSION}.</p></footer>",
            "</body></html>",
            "",
        ]
    )
    html_path = out_dir / "report.html"
    html_path.write_text(html)

    md = "\n".join(
        [
            f"# Performance report: {bundle.subject_id}, session {bundle.session_index}",
            "",
            f"Sensitivity this session: **{headline}** ({_fmt(bundle.sensitivity)})",
            "",
            "| Metric | You | Peer mean | Expert mean |",
            "|---|---|---|---|",
            f"| Sensitivity | {_fmt(bundle.sensitivity)} | "
            f"{_fmt(ref.peer['sensitivity'].mean)} | "
            f"{_fmt(ref.expert['sensitivity'].mean)} |",
            f"| Coverage | {_fmt(bundle.coverage)} | "
            f"{_fmt(ref.peer['coverage'].mean)} | "
            f"{_fmt(ref.expert['coverage'].mean)} |",
            f"| Heterogeneity (DTW units) | {_fmt(bundle.heterogeneity_mean)} | "
            f"{_fmt(ref.peer['heterogeneity_mean'].mean)} | "
            f"{_fmt(ref.expert['heterogeneity_mean'].mean)} |",
            f"| Interruptions | {bundle.interruptions} | "
            f"{_fmt(ref.peer['interruptions'].mean)} | "
            f"{_fmt(ref.expert['interruptions'].mean)} |",
            f"| Mean review time (s) | {_fmt(bundle.mean_review_time_s)} | "
            f"{_fmt(ref.peer['mean_review_time_s'].mean)} | "
            f"{_fmt(ref.expert['mean_review_time_s'].mean)} |",
            "",
            "![heatmap](heatmap.png)",
            "![dtw](dtw.png)",
            "",
        ]
    )
    md_path = out_dir / "report.md"
    md_path.write_text(md)

    return {
        "html": html_path,
        "md": md_path,
        "json": json_path,
        "heatmap": heatmap_path,
        "dtw": dtw_path,
    }


@dataclass
class ChangeRow:
    metric: str
    # percent change vs baseline at sessions 2..k (in session order)
    percent_change: list[float]
    label: str  # Improved | No change | Declined


def change_table(bundles: list[MetricsBundle]) -> list[ChangeRow]:
    """Percent change of each metric vs the session-1 baseline.

    Expects exactly the 4 session bundles of one subject.  The final
    label follows each metric's direction of improvement (sensitivity
    and coverage up; heterogeneity, interruptions, and time down).
    """
    if len(bundles) != 4:
        raise ValidationError(f"change_table needs 4 session bundles, got {len(bundles)}")
    subjects = {b.subject_id for b in bundles}
    if len(subjects) != 1:
        raise ValidationError(f"bundles span several subjects: {sorted(subjects)}")
    ordered = sorted(bundles, key=lambda b: b.session_index)

    rows: list[ChangeRow] = []
    for metric in REFERENCE_METRICS:
        baseline = ordered[0].metric(metric)
        changes: list[float] = []
        for b in ordered[1:]:
            value = b.metric(metric)
            if baseline == 0.0:
                changes.append(0.0 if value == 0.0 else math.inf * math.copysign(1, value))
            else:
                changes.append((value - baseline) / baseline * 100.0)
        final = changes[-1]
        if final == 0.0:
            label = "No change"
        else:
            up_is_good = IMPROVE_UP.get(metric, False)
            label = "Improved" if (final > 0) == up_is_good else "Declined"
        rows.append(ChangeRow(metric=metric, percent_change=changes, label=label))
    return rows
