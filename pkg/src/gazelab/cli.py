"""Command-line entry point.

Subcommands: ``metrics`` (raw logs -> MetricsBundle JSON), ``report``
(bundles -> feedback reports), ``anova`` (panel CSV -> ANOVA CSV),
``simulate`` (config -> synthetic trial + full analysis), ``power``
(sample-size calculation).  Exit codes: 0 success, 1 validation error,
2 I/O error.  Diagnostics go to stderr; ``GAZELAB_LOG`` sets verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from gazelab import ingest, metrics, preprocess, report, stats, trial

log = logging.getLogger("gazelab")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the contract wants 1 (validation)
    def error(self, message: str):
        raise CliError(message, 1)


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", 2)


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", 2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gazelab", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("metrics", help="compute a MetricsBundle from raw logs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--gaze", required=True)
    p.add_argument("--segments", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--viewports", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--subject", default="subject")
    p.add_argument("--session", type=int, default=1)
    p.add_argument("--foveal-radius", type=float, default=None)
    p.add_argument("--hit-slack", type=float, default=0.0)

    p = sub.add_parser("report", help="render feedback reports from bundles")
    p.add_argument("--bundle", required=True, help="subject bundle JSON")
    p.add_argument("--peers", nargs="+", required=True, help="resident bundle JSONs")
    p.add_argument("--experts", nargs="+", required=True, help="faculty bundle JSONs")
    p.add_argument("--out", required=True)

    p = sub.add_parser("anova", help="mixed-design ANOVA over a panel CSV")
    p.add_argument("--panel", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="synthetic trial + full analysis")
    p.add_argument("--config", default=None, help="trial config JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides config seed")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--foveal-radius", type=float, default=None)
    p.add_argument("--hit-slack", type=float, default=None)

    p = sub.add_parser("power", help="two-sample t-test sample size per group")
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--sd", type=float, required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--power", type=float, default=0.8)
    return parser


def _cmd_metrics(args) -> int:
    if args.foveal_radius is not None and args.foveal_radius <= 0:
        raise CliError("--foveal-radius must be positive", 1)
    if args.hit_slack < 0:
        raise CliError("--hit-slack must be non-negative", 1)
    manifest_path = Path(args.manifest)
    cases = ingest.parse_case_manifest(
        _read(args.manifest), base_dir=manifest_path.parent
    )
    segments = ingest.parse_segments(_read(args.segments))
    recording = ingest.parse_gaze_log(
        _read(args.gaze),
        subject_id=args.subject,
        session_index=args.session,
        segments=segments,
    )
    annotations = ingest.parse_annotations(_read(args.annotations), cases)
    viewports = None
    if args.viewports:
        viewports = preprocess.parse_viewports(_read(args.viewports))
    per_case = preprocess.segment_by_case(recording, cases, viewports)
    bundle = metrics.session_metrics(
        subject_id=args.subject,
        session_index=args.session,
        per_case=per_case,
        annotations=annotations,
        cases=cases,
        foveal_radius_px=args.foveal_radius,
        hit_slack_px=args.hit_slack,
    )
    _write_text(Path(args.out), metrics.bundle_to_json(bundle))
    log.info("wrote %s", args.out)
    return 0


def _outcomes_from_bundle(bundle: metrics.MetricsBundle) -> list[metrics.DetectionOutcome]:
    outcomes = []
    for d in bundle.per_case:
        truth = "positive" if d.case_class == "nodule" else "negative"
        outcomes.append(
            metrics.DetectionOutcome(
                case_id=d.case_id,
                truth=truth,
                call=d.call,
                nodule_center=d.nodule_center,
            )
        )
    return outcomes


def _cmd_report(args) -> int:
    bundle = metrics.bundle_from_json(_read(args.bundle))
    peers = [metrics.bundle_from_json(_read(p)) for p in args.peers]
    experts = [metrics.bundle_from_json(_read(p)) for p in args.experts]
    roles = {b.subject_id: "resident" for b in peers}
    roles.update({b.subject_id: "faculty" for b in experts})
    ref = report.build_cohort_reference(peers + experts, roles)
    out_dir = Path(args.out) / bundle.subject_id / str(bundle.session_index)
    report.render_report(bundle, ref, _outcomes_from_bundle(bundle), out_dir)
    log.info("wrote report under %s", out_dir)
    return 0


def _cmd_anova(args) -> int:
    panel = stats.panel_from_csv(_read(args.panel).decode("utf-8"))
    tables = {m: stats.mixed_anova(panel, m) for m in panel.metrics()}
    _write_text(Path(args.out), stats.anova_tables_to_csv(tables))
    log.info("wrote %s", args.out)
    return 0


def _cmd_simulate(args) -> int:
    if args.config:
        config = trial.TrialConfig.from_json(_read(args.config))
    else:
        config = trial.TrialConfig()
    # flags win over the config file
    if args.seed is not None:
        config.seed = args.seed
    if args.foveal_radius is not None:
        config.foveal_radius_px = args.foveal_radius
    if args.hit_slack is not None:
        config.hit_slack_px = args.hit_slack
    if args.jobs < 1:
        raise CliError("--jobs must be >= 1", 1)

    sim = trial.simulate_trial(config)
    out = Path(args.out)

    # raw simulator output in the ingest file formats
    mask_paths = {c.case_id: f"masks/{c.case_id}.pgm" for c in sim.pool}
    for c in sim.pool:
        path = out / "cases" / mask_paths[c.case_id]
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(ingest.serialize_mask_pgm(c.lung_mask))
    _write_text(
        out / "cases" / "manifest.json",
        ingest.serialize_case_manifest(sim.pool, mask_paths),
    )
    viewports = {
        c.case_id: preprocess.Viewport(c.case_id, 1.0, 0.0, 0.0) for c in sim.pool
    }
    _write_text(out / "cases" / "viewports.csv", preprocess.serialize_viewports(viewports))

    def write_session(item) -> None:
        (sid, session), (recording, annotations) = item
        raw_dir = out / "raw" / sid / f"s{session}"
        _write_text(raw_dir / "gaze.csv", ingest.serialize_gaze_log(recording))
        _write_text(raw_dir / "segments.csv", ingest.serialize_segments(recording.segments))
        _write_text(raw_dir / "annotations.csv", ingest.serialize_annotations(annotations))
        bundle = sim.bundles[(sid, session)]
        _write_text(
            out / "bundles" / f"{sid}_s{session}.json", metrics.bundle_to_json(bundle)
        )

    items = sorted(sim.raw.items())
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            list(pool.map(write_session, items))
    else:
        for item in items:
            write_session(item)

    _write_text(out / "panel.csv", stats.panel_to_csv(sim.panel))
    tables = {
        report.METRIC_LABELS[m]: stats.mixed_anova(sim.panel, m)
        for m in sim.panel.metrics()
    }
    _write_text(out / "anova.csv", stats.anova_tables_to_csv(tables))

    resident_bundles = [
        b for (sid, _), b in sorted(sim.bundles.items()) if sim.roles[sid] == "resident"
    ]
    faculty_bundles = [
        b for (sid, _), b in sorted(sim.bundles.items()) if sim.roles[sid] == "faculty"
    ]
    ref = report.build_cohort_reference(
        resident_bundles + faculty_bundles, sim.roles
    )
    for (sid, session), bundle in sorted(sim.bundles.items()):
        report.render_report(
            bundle,
            ref,
            _outcomes_from_bundle(bundle),
            out / "reports" / sid / str(session),
        )
    log.info("simulation written to %s", out)
    return 0


def _cmd_power(args) -> int:
    try:
        n = stats.power_sample_size(args.delta, args.sd, args.alpha, args.power)
    except ValueError as exc:
        raise CliError(str(exc), 1)
    print(f"n={n}")
    return 0


COMMANDS = {
    "metrics": _cmd_metrics,
    "report": _cmd_report,
    "anova": _cmd_anova,
    "simulate": _cmd_simulate,
    "power": _cmd_power,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    logging.basicConfig(
        stream=sys.stderr,
        level=os.environ.get("GAZELAB_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_usage(sys.stderr)
            return 1
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"gazelab: error: {exc}", file=sys.stderr)
        return exc.code
    except (ingest.ParseError, ingest.ValidationError, ValueError, KeyError) as exc:
        print(f"gazelab: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"gazelab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
