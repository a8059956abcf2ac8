"""Trial protocol machinery and a synthetic end-to-end cohort simulator.

Covers block randomization within role strata, construction of the four
33-case session sets (18 nodules of subtlety 2/3/4, 9 normals, 6
distractors) sampled without replacement, procedural generation of a
synthetic case pool, and a deterministic 30 Hz gaze/annotation simulator
whose output feeds the regular ingest -> preprocess -> metrics -> stats
pipeline.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from gazelab import metrics as metrics_mod
from gazelab import preprocess, stats
from gazelab.ingest import (
    AnnotationSet,
    CaseDefinition,
    GazeRecording,
    GazeSample,
    NoduleDisc,
    Segment,
    ValidationError,
)

ROLES = ("faculty", "resident")
GROUPS = ("intervention", "control")
DISTRACTOR_TYPES = ("pneumothorax", "cardiomegaly", "consolidation")
NODULE_SUBTLETIES = (2, 3, 4)

SAMPLE_PERIOD_MS = 33  # ~30 Hz
N_SESSIONS = 4

# per-session composition
NODULES_PER_SUBTLETY = 6
NORMALS_PER_SESSION = 9
DISTRACTORS_PER_TYPE = 2
CASES_PER_SESSION = (
    NODULES_PER_SUBTLETY * len(NODULE_SUBTLETIES)
    + NORMALS_PER_SESSION
    + DISTRACTORS_PER_TYPE * len(DISTRACTOR_TYPES)
)


@dataclass
class EnrollmentPlan:
    subjects: list[tuple[str, str]]  # (subject_id, role)
    assignment: dict[str, str]  # subject_id -> intervention | control
    seed: int


@dataclass
class SessionCaseSet:
    session_index: int
    case_ids: list[str]


@dataclass
class SubjectProfile:
    base_sensitivity: float
    learning_rate: float  # added detection probability per follow-up session
    scan_speed_s: float
    coverage_propensity: float
    interruption_rate: float  # interruptions per second of review
    seed: int = 0

    def detection_probability(self, session_index: int) -> float:
        return min(1.0, self.base_sensitivity + self.learning_rate * (session_index - 1))


def block_randomize(subjects: list[tuple[str, str]], seed: int) -> EnrollmentPlan:
    """Assign each subject to intervention with p=0.5, within role blocks."""
    for sid, role in subjects:
        if role not in ROLES:
            raise ValidationError(f"subject {sid!r} has unknown role {role!r}")
    assignment: dict[str, str] = {}
    for block_idx, role in enumerate(ROLES):
        rng = np.random.default_rng(np.random.SeedSequence([seed, block_idx]))
        for sid, r in subjects:
            if r != role:
                continue
            assignment[sid] = "intervention" if rng.random() < 0.5 else "control"
    return EnrollmentPlan(subjects=list(subjects), assignment=assignment, seed=seed)


def _strata(pool: list[CaseDefinition]) -> dict[str, list[CaseDefinition]]:
    strata: dict[str, list[CaseDefinition]] = {
        **{f"nodule subtlety {s}": [] for s in NODULE_SUBTLETIES},
        "normal": [],
        **{f"distractor {t}": [] for t in DISTRACTOR_TYPES},
    }
    for case in pool:
        if case.case_class == "nodule" and case.subtlety in NODULE_SUBTLETIES:
            strata[f"nodule subtlety {case.subtlety}"].append(case)
        elif case.case_class == "normal":
            strata["normal"].append(case)
        elif case.case_class == "distractor" and case.distractor_type in DISTRACTOR_TYPES:
            strata[f"distractor {case.distractor_type}"].append(case)
    return strata


def build_casesets(pool: list[CaseDefinition], seed: int) -> list[SessionCaseSet]:
    """Draw the four session case sets without replacement across sessions."""
    strata = _strata(pool)
    need = {
        **{f"nodule subtlety {s}": NODULES_PER_SUBTLETY * N_SESSIONS
           for s in NODULE_SUBTLETIES},
        "normal": NORMALS_PER_SESSION * N_SESSIONS,
        **{f"distractor {t}": DISTRACTORS_PER_TYPE * N_SESSIONS
           for t in DISTRACTOR_TYPES},
    }
    for name, count in need.items():
        if len(strata[name]) < count:
            raise ValidationError(
                f"insufficient pool: stratum {name!r} has {len(strata[name])} "
                f"cases, needs {count}"
            )

    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    drawn: dict[str, list[str]] = {}
    for name, count in need.items():
        ids = sorted(c.case_id for c in strata[name])
        picked = rng.choice(len(ids), size=count, replace=False)
        drawn[name] = [ids[i] for i in picked]

    per_session = {
        **{f"nodule subtlety {s}": NODULES_PER_SUBTLETY for s in NODULE_SUBTLETIES},
        "normal": NORMALS_PER_SESSION,
        **{f"distractor {t}": DISTRACTORS_PER_TYPE for t in DISTRACTOR_TYPES},
    }
    casesets = []
    for k in range(N_SESSIONS):
        ids: list[str] = []
        for name, count in per_session.items():
            ids.extend(drawn[name][k * count : (k + 1) * count])
        order = rng.permutation(len(ids))
        casesets.append(
            SessionCaseSet(session_index=k + 1, case_ids=[ids[i] for i in order])
        )
    return casesets


def validate_caseset(caseset: SessionCaseSet, cases: dict[str, CaseDefinition]) -> None:
    if len(caseset.case_ids) != CASES_PER_SESSION:
        raise ValidationError(
            f"session {caseset.session_index}: {len(caseset.case_ids)} cases, "
            f"expected {CASES_PER_SESSION}"
        )
    if len(set(caseset.case_ids)) != len(caseset.case_ids):
        raise ValidationError(f"session {caseset.session_index}: repeated case")


def make_lung_mask(
    width: int, height: int, rng: np.random.Generator
) -> np.ndarray:
    """Two-ellipse synthetic lung field."""
    yy, xx = np.mgrid[0:height, 0:width]
    mask = np.zeros((height, width), dtype=bool)
    for cx_frac in (0.32, 0.68):
        cx = cx_frac * width + rng.normal(0, 0.01 * width)
        cy = 0.52 * height + rng.normal(0, 0.01 * height)
        ax = 0.14 * width * (1 + rng.uniform(-0.1, 0.1))
        ay = 0.32 * height * (1 + rng.uniform(-0.1, 0.1))
        mask |= ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0
    return mask


def make_case_pool(
    seed: int, width: int = 256, height: int = 256
) -> list[CaseDefinition]:
    """Procedural pool exactly sized for four sessions."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    pool: list[CaseDefinition] = []

    def nodule_disc(mask: np.ndarray) -> NoduleDisc:
        ys, xs = np.nonzero(mask)
        r = float(rng.uniform(4.0, 8.0))
        while True:
            i = int(rng.integers(len(xs)))
            cx, cy = float(xs[i]), float(ys[i])
            if r <= cx < width - r and r <= cy < height - r:
                return NoduleDisc(cx, cy, r)

    for subtlety in NODULE_SUBTLETIES:
        for i in range(NODULES_PER_SUBTLETY * N_SESSIONS):
            mask = make_lung_mask(width, height, rng)
            pool.append(
                CaseDefinition(
                    case_id=f"nod{subtlety}-{i:03d}",
                    case_class="nodule",
                    width=width,
                    height=height,
                    lung_mask=mask,
                    subtlety=subtlety,
                    nodule=nodule_disc(mask),
                )
            )
    for i in range(NORMALS_PER_SESSION * N_SESSIONS):
        pool.append(
            CaseDefinition(
                case_id=f"nrm-{i:03d}",
                case_class="normal",
                width=width,
                height=height,
                lung_mask=make_lung_mask(width, height, rng),
            )
        )
    for dtype in DISTRACTOR_TYPES:
        for i in range(DISTRACTORS_PER_TYPE * N_SESSIONS):
            pool.append(
                CaseDefinition(
                    case_id=f"dis-{dtype[:4]}-{i:02d}",
                    case_class="distractor",
                    width=width,
                    height=height,
                    lung_mask=make_lung_mask(width, height, rng),
                    distractor_type=dtype,
                )
            )
    return pool


def simulate_session(
    profile: SubjectProfile,
    caseset: SessionCaseSet,
    cases: dict[str, CaseDefinition],
    session_index: int,
    subject_id: str = "sim",
    seed: int | None = None,
) -> tuple[GazeRecording, AnnotationSet]:
    """Emit a 30 Hz saccade-and-dwell recording plus labeling marks.

    Dwell targets are drawn from a shuffled slice of the lung covering
    roughly ``coverage_propensity`` of it; a detected nodule (probability
    base + learning * (session - 1)) is both fixated and marked inside
    its disc.  Interruption gaps arrive as an exponential process.
    """
    if seed is None:
        seed = profile.seed
    rng = np.random.default_rng(np.random.SeedSequence([seed, session_index]))
    p_detect = profile.detection_probability(session_index)

    samples: list[GazeSample] = []
    segments: list[Segment] = []
    marks: dict[str, list[tuple[float, float]]] = {}
    t = 0

    for case_id in caseset.case_ids:
        case = cases[case_id]
        detected = case.case_class == "nodule" and rng.random() < p_detect

        ys, xs = np.nonzero(case.lung_mask)
        order = rng.permutation(len(xs))
        keep = max(1, int(len(order) * min(1.0, profile.coverage_propensity)))
        candidates = order[:keep]

        scan_ms = int(profile.scan_speed_s * 1000 * rng.uniform(0.85, 1.15))
        start = t
        # interruption arrivals within the nominal scan span
        arrivals: list[int] = []
        if profile.interruption_rate > 0:
            at = rng.exponential(1000.0 / profile.interruption_rate)
            while at < scan_ms:
                arrivals.append(int(at))
                at += rng.exponential(1000.0 / profile.interruption_rate)
        next_arrival = iter(arrivals + [None])
        arrival = next(next_arrival)

        nodule_dwell_at = None
        if detected:
            nodule_dwell_at = int(rng.uniform(0.2, 0.8) * scan_ms)

        elapsed = 0
        extra = 0  # gap time extends the display interval
        while elapsed < scan_ms:
            if arrival is not None and elapsed >= arrival:
                # interruption: tracker-invalid run > 500 ms
                gap_ms = int(rng.uniform(650, 1500))
                g = 0
                while g < gap_ms:
                    samples.append(GazeSample(start + elapsed + extra + g, 0.0, 0.0, False))
                    g += SAMPLE_PERIOD_MS
                extra += gap_ms
                arrival = next(next_arrival)
                continue
            if nodule_dwell_at is not None and elapsed >= nodule_dwell_at:
                tx, ty = case.nodule.cx, case.nodule.cy
                nodule_dwell_at = None
            else:
                i = int(candidates[int(rng.integers(len(candidates)))])
                tx, ty = float(xs[i]), float(ys[i])
            dwell_ms = int(rng.uniform(150, 600))
            d = 0
            while d < dwell_ms and elapsed + d < scan_ms:
                x = min(case.width - 1e-6, max(0.0, tx + rng.normal(0, 0.8)))
                y = min(case.height - 1e-6, max(0.0, ty + rng.normal(0, 0.8)))
                samples.append(GazeSample(start + elapsed + extra + d, x, y, True))
                d += SAMPLE_PERIOD_MS
            elapsed += dwell_ms

        end = start + scan_ms + extra
        segments.append(Segment(case_id, start, end))
        t = end + 500  # inter-case pause, no samples

        if detected:
            disc = case.nodule
            rad = disc.r * math.sqrt(rng.random())
            ang = rng.uniform(0, 2 * math.pi)
            mx = min(case.width - 1e-6, max(0.0, disc.cx + rad * math.cos(ang)))
            my = min(case.height - 1e-6, max(0.0, disc.cy + rad * math.sin(ang)))
            marks.setdefault(case_id, []).append((mx, my))

    recording = GazeRecording(
        subject_id=subject_id,
        session_index=session_index,
        segments=segments,
        samples=samples,
    )
    return recording, AnnotationSet(marks=marks)


@dataclass
class GroupProfileConfig:
    base_sensitivity: float = 0.35
    learning_rate: float = 0.0
    scan_speed_s: float = 5.0
    coverage_propensity: float = 0.6
    interruption_rate: float = 0.02


@dataclass
class TrialConfig:
    n_per_group: int = 5
    seed: int = 0
    width: int = 256
    height: int = 256
    intervention: GroupProfileConfig = field(default_factory=GroupProfileConfig)
    control: GroupProfileConfig = field(default_factory=GroupProfileConfig)
    expert: GroupProfileConfig = field(
        default_factory=lambda: GroupProfileConfig(
            base_sensitivity=0.8, scan_speed_s=3.5, coverage_propensity=0.8,
            interruption_rate=0.005,
        )
    )
    foveal_radius_px: float | None = None
    hit_slack_px: float = 0.0

    @classmethod
    def from_json(cls, text: str | bytes) -> "TrialConfig":
        doc = json.loads(text)
        for key in ("intervention", "control", "expert"):
            if key in doc:
                doc[key] = GroupProfileConfig(**doc[key])
        return cls(**doc)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)


@dataclass
class SimulatedTrial:
    config: TrialConfig
    pool: list[CaseDefinition]
    casesets: list[SessionCaseSet]
    plan: EnrollmentPlan
    # raw simulator output, keyed by (subject_id, session_index)
    raw: dict[tuple[str, int], tuple[GazeRecording, AnnotationSet]]
    bundles: dict[tuple[str, int], metrics_mod.MetricsBundle]
    panel: stats.TrialPanel
    roles: dict[str, str]


def _profile(cfg: GroupProfileConfig, seed: int) -> SubjectProfile:
    return SubjectProfile(
        base_sensitivity=cfg.base_sensitivity,
        learning_rate=cfg.learning_rate,
        scan_speed_s=cfg.scan_speed_s,
        coverage_propensity=cfg.coverage_propensity,
        interruption_rate=cfg.interruption_rate,
        seed=seed,
    )


def bundle_for_session(
    recording: GazeRecording,
    annotations: AnnotationSet,
    cases: dict[str, CaseDefinition],
    config: TrialConfig,
) -> metrics_mod.MetricsBundle:
    per_case = preprocess.segment_by_case(recording, cases)
    return metrics_mod.session_metrics(
        subject_id=recording.subject_id,
        session_index=recording.session_index,
        per_case=per_case,
        annotations=annotations,
        cases=list(cases.values()),
        foveal_radius_px=config.foveal_radius_px,
        hit_slack_px=config.hit_slack_px,
    )


def simulate_trial(config: TrialConfig) -> SimulatedTrial:
    """Run the full synthetic protocol and analysis pipeline."""
    if config.n_per_group < 2:
        raise ValidationError("need at least 2 subjects per group for the ANOVA")
    pool = make_case_pool(config.seed, config.width, config.height)
    cases = {c.case_id: c for c in pool}
    casesets = build_casesets(pool, config.seed)
    for cs in casesets:
        validate_caseset(cs, cases)

    # force a balanced panel: n_per_group per arm, plus one expert for
    # the cohort reference
    subject_groups: list[tuple[str, str, GroupProfileConfig, str]] = []
    for i in range(config.n_per_group):
        subject_groups.append(
            (f"int{i:02d}", "intervention", config.intervention, "resident")
        )
        subject_groups.append((f"ctl{i:02d}", "control", config.control, "resident"))
    subject_groups.append(("fac00", "expert", config.expert, "faculty"))

    seeds = np.random.SeedSequence([config.seed, 11]).generate_state(
        len(subject_groups)
    )

    raw: dict[tuple[str, int], tuple[GazeRecording, AnnotationSet]] = {}
    bundles: dict[tuple[str, int], metrics_mod.MetricsBundle] = {}
    rows: list[stats.PanelRow] = []
    roles: dict[str, str] = {}
    plan_subjects: list[tuple[str, str]] = []
    assignment: dict[str, str] = {}

    for (sid, group, gcfg, role), sseed in zip(subject_groups, seeds):
        roles[sid] = role
        plan_subjects.append((sid, role))
        if group in GROUPS:
            assignment[sid] = group
        profile = _profile(gcfg, int(sseed))
        for session in range(1, N_SESSIONS + 1):
            recording, annotations = simulate_session(
                profile, casesets[session - 1], cases, session, subject_id=sid
            )
            raw[(sid, session)] = (recording, annotations)
            bundle = bundle_for_session(recording, annotations, cases, config)
            bundles[(sid, session)] = bundle
            if group in GROUPS:
                rows.append(
                    stats.PanelRow(
                        subject_id=sid,
                        group=group,
                        session_index=session,
                        values={m: bundle.metric(m) for m in bundle.METRIC_NAMES},
                    )
                )

    plan = EnrollmentPlan(plan_subjects, assignment, config.seed)
    return SimulatedTrial(
        config=config,
        pool=pool,
        casesets=casesets,
        plan=plan,
        raw=raw,
        bundles=bundles,
        panel=stats.TrialPanel(rows=rows),
        roles=roles,
    )


def simulate_sensitivity_panel(
    base_intervention: float,
    gain_intervention: float,
    base_control: float,
    gain_control: float,
    n_per_group: int = 5,
    n_sessions: int = N_SESSIONS,
    n_positive: int = 18,
    seed: int = 0,
    binomial_noise: bool = True,
) -> stats.TrialPanel:
    """Panel-level sensitivity simulator for desk-scale statistics.

    The detection probability ramps linearly from base to base + gain
    over the sessions.  With ``binomial_noise`` each observation is a
    Binomial(n_positive, p)/n_positive draw; otherwise the probability
    itself is recorded (useful for exact improvement summaries).
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    rows = []
    for group, base, gain in (
        ("intervention", base_intervention, gain_intervention),
        ("control", base_control, gain_control),
    ):
        for i in range(n_per_group):
            for session in range(1, n_sessions + 1):
                p = min(1.0, base + gain * (session - 1) / (n_sessions - 1))
                if binomial_noise:
                    value = rng.binomial(n_positive, p) / n_positive
                else:
                    value = p
                rows.append(
                    stats.PanelRow(
                        subject_id=f"{group[:3]}{i:02d}",
                        group=group,
                        session_index=session,
                        values={"sensitivity": value},
                    )
                )
    return stats.TrialPanel(rows=rows)
