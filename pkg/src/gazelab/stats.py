"""Mixed-design (split-plot) ANOVA, improvement summaries, and power.

One between-subjects factor (group) crossed with one within-subjects
factor (session) on a balanced panel.  The group effect is tested
against subjects-within-group; session and interaction against the
within-subject residual.  No sphericity correction is applied.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import special, stats as spstats

GROUP = "group"
SESSION = "session"
INTERACTION = "interaction"
EFFECTS = (GROUP, SESSION, INTERACTION)

# relative floor below which an error term counts as degenerate
_DEGENERATE_EPS = 1e-12


class DegenerateVarianceError(ValueError):
    """Raised when an ANOVA error term has (numerically) zero variance."""


class UnbalancedPanelError(ValueError):
    """Raised when the panel is not a complete subject x session grid."""


@dataclass
class PanelRow:
    subject_id: str
    group: str
    session_index: int
    values: dict[str, float]


@dataclass
class TrialPanel:
    """Balanced subject x session table of metric values with group labels."""

    rows: list[PanelRow]

    def metrics(self) -> list[str]:
        names: list[str] = []
        for row in self.rows:
            for k in row.values:
                if k not in names:
                    names.append(k)
        return names

    def sessions(self) -> list[int]:
        return sorted({r.session_index for r in self.rows})

    def to_array(self, metric: str) -> tuple[list[str], list[str], np.ndarray]:
        """Return (group labels, subject ids, values[g, n, s]).

        Raises UnbalancedPanelError unless every subject has every
        session exactly once and groups have equal size.
        """
        sessions = self.sessions()
        subj_group: dict[str, str] = {}
        cell: dict[tuple[str, int], float] = {}
        for row in self.rows:
            prev = subj_group.setdefault(row.subject_id, row.group)
            if prev != row.group:
                raise UnbalancedPanelError(
                    f"subject {row.subject_id} appears in two groups"
                )
            key = (row.subject_id, row.session_index)
            if key in cell:
                raise UnbalancedPanelError(
                    f"duplicate observation for {row.subject_id} "
                    f"session {row.session_index}"
                )
            if metric not in row.values:
                raise KeyError(f"metric {metric!r} missing for {row.subject_id}")
            cell[key] = float(row.values[metric])

        groups = sorted(set(subj_group.values()))
        by_group: dict[str, list[str]] = {g: [] for g in groups}
        for subject in subj_group:
            by_group[subj_group[subject]].append(subject)
        sizes = {g: len(v) for g, v in by_group.items()}
        if len(set(sizes.values())) != 1:
            raise UnbalancedPanelError(f"unequal group sizes {sizes}")
        n = next(iter(sizes.values()))
        s = len(sessions)

        subjects: list[str] = []
        y = np.empty((len(groups), n, s))
        for gi, g in enumerate(groups):
            for ni, subject in enumerate(sorted(by_group[g])):
                subjects.append(subject)
                for si, sess in enumerate(sessions):
                    if (subject, sess) not in cell:
                        raise UnbalancedPanelError(
                            f"subject {subject} is missing session {sess}"
                        )
                    y[gi, ni, si] = cell[(subject, sess)]
        return groups, subjects, y


@dataclass
class EffectRow:
    df1: int
    df2: int
    ss: float
    ss_error: float
    F: float
    p: float
    partial_eta_squared: float


@dataclass
class AnovaTable:
    effects: dict[str, EffectRow]
    ss_total: float
    ss_subjects_within: float
    ss_error: float

    def __getitem__(self, effect: str) -> EffectRow:
        return self.effects[effect]


def f_sf(f_value: float, df1: int, df2: int) -> float:
    """Upper tail of the F distribution via the regularized incomplete beta."""
    if f_value <= 0:
        return 1.0
    x = df2 / (df2 + df1 * f_value)
    return float(special.betainc(df2 / 2.0, df1 / 2.0, x))


def split_plot_anova(y: np.ndarray) -> AnovaTable:
    """Split-plot decomposition of values y[group, subject, session]."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 3:
        raise ValueError("expected array of shape (groups, subjects, sessions)")
    g, n, s = y.shape
    if g < 2 or n < 2 or s < 2:
        raise UnbalancedPanelError(
            f"need >=2 groups, subjects per group, and sessions; got {g}x{n}x{s}"
        )

    grand = y.mean()
    subj_means = y.mean(axis=2)  # (g, n)
    group_means = y.mean(axis=(1, 2))  # (g,)
    session_means = y.mean(axis=(0, 1))  # (s,)
    cell_means = y.mean(axis=1)  # (g, s)

    ss_total = float(((y - grand) ** 2).sum())
    ss_group = float(n * s * ((group_means - grand) ** 2).sum())
    ss_subj_within = float(s * ((subj_means - group_means[:, None]) ** 2).sum())
    ss_session = float(g * n * ((session_means - grand) ** 2).sum())
    ss_inter = float(
        n
        * (
            (cell_means - group_means[:, None] - session_means[None, :] + grand) ** 2
        ).sum()
    )
    ss_error = ss_total - ss_group - ss_subj_within - ss_session - ss_inter
    ss_error = max(ss_error, 0.0)

    df_group = g - 1
    df_subj = g * (n - 1)
    df_session = s - 1
    df_inter = (g - 1) * (s - 1)
    df_error = (s - 1) * g * (n - 1)

    scale = ss_total / (g * n * s)
    if ss_subj_within <= _DEGENERATE_EPS * max(scale, 1e-300) or ss_total == 0.0:
        raise DegenerateVarianceError(
            "subjects-within-group variance is zero; F for the group effect "
            "is undefined"
        )
    if ss_error <= _DEGENERATE_EPS * max(scale, 1e-300):
        raise DegenerateVarianceError(
            "within-subject residual variance is zero; session/interaction F "
            "is undefined"
        )

    ms_subj = ss_subj_within / df_subj
    ms_error = ss_error / df_error

    def row(ss_effect: float, df1: int, ss_err: float, df2: int) -> EffectRow:
        f_value = (ss_effect / df1) / (ss_err / df2)
        return EffectRow(
            df1=df1,
            df2=df2,
            ss=ss_effect,
            ss_error=ss_err,
            F=f_value,
            p=f_sf(f_value, df1, df2),
            partial_eta_squared=ss_effect / (ss_effect + ss_err),
        )

    effects = {
        GROUP: row(ss_group, df_group, ss_subj_within, df_subj),
        SESSION: row(ss_session, df_session, ss_error, df_error),
        INTERACTION: row(ss_inter, df_inter, ss_error, df_error),
    }
    return AnovaTable(
        effects=effects,
        ss_total=ss_total,
        ss_subjects_within=ss_subj_within,
        ss_error=ss_error,
    )


def mixed_anova(panel: TrialPanel, metric: str) -> AnovaTable:
    """Two-way mixed ANOVA (between: group, within: session) on one metric."""
    _, _, y = panel.to_array(metric)
    return split_plot_anova(y)


@dataclass
class GroupImprovement:
    baseline_mean: float
    final_mean: float
    absolute_change: float
    relative_change: float


def improvement_summary(
    panel: TrialPanel, metric: str
) -> dict[str, GroupImprovement]:
    """Per-group change from the first to the last session."""
    groups, _, y = panel.to_array(metric)
    out: dict[str, GroupImprovement] = {}
    for gi, g in enumerate(groups):
        baseline = float(y[gi, :, 0].mean())
        final = float(y[gi, :, -1].mean())
        absolute = final - baseline
        if baseline == 0.0:
            raise ZeroDivisionError(
                f"group {g}: baseline mean is zero, relative change undefined"
            )
        out[g] = GroupImprovement(
            baseline_mean=baseline,
            final_mean=final,
            absolute_change=absolute,
            relative_change=absolute / baseline,
        )
    return out


def two_sample_t_power(n: int, d: float, alpha: float) -> float:
    """Power of a two-sided two-sample t test with n per group, effect d."""
    df = 2 * n - 2
    nc = d * np.sqrt(n / 2.0)
    tcrit = spstats.t.ppf(1 - alpha / 2.0, df)
    return float(
        spstats.nct.sf(tcrit, df, nc) + spstats.nct.cdf(-tcrit, df, nc)
    )


def power_sample_size(
    delta: float, sd: float, alpha: float = 0.05, power: float = 0.8
) -> int:
    """Smallest n per group so a two-sided two-sample t test reaches ``power``.

    Starts from the normal approximation and refines with the exact
    noncentral-t power.
    """
    if delta <= 0 or sd <= 0:
        raise ValueError("delta and sd must be positive")
    if not (0 < alpha < 1 and 0 < power < 1):
        raise ValueError("alpha and power must lie in (0, 1)")
    d = delta / sd
    z = spstats.norm.ppf(1 - alpha / 2.0) + spstats.norm.ppf(power)
    n = max(2, int(np.ceil(2.0 * (z / d) ** 2)))
    while n > 2 and two_sample_t_power(n - 1, d, alpha) >= power:
        n -= 1
    while two_sample_t_power(n, d, alpha) < power:
        n += 1
    return n


def anova_tables_to_csv(tables: dict[str, AnovaTable]) -> str:
    """CSV with columns Variable, Source, DF1, DF2, F, p-value, eta-squared."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["Variable", "Source", "DF1", "DF2", "F", "p-value", "eta-squared"])
    labels = {GROUP: "Group", SESSION: "Session", INTERACTION: "Interaction"}
    for variable, table in tables.items():
        for effect in EFFECTS:
            row = table[effect]
            writer.writerow(
                [
                    variable,
                    labels[effect],
                    row.df1,
                    row.df2,
                    f"{row.F:.3f}",
                    f"{row.p:.4g}",
                    f"{row.partial_eta_squared:.3f}",
                ]
            )
    return out.getvalue()


def panel_to_csv(panel: TrialPanel) -> str:
    metrics = panel.metrics()
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["subject_id", "group", "session_index", *metrics])
    for row in sorted(
        panel.rows, key=lambda r: (r.group, r.subject_id, r.session_index)
    ):
        writer.writerow(
            [row.subject_id, row.group, row.session_index]
            + [repr(row.values[m]) for m in metrics]
        )
    return out.getvalue()


def panel_from_csv(text: str) -> TrialPanel:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError("empty panel CSV") from None
    if header[:3] != ["subject_id", "group", "session_index"]:
        raise ValueError(f"bad panel header {header!r}")
    metrics = header[3:]
    rows = []
    for raw in reader:
        if not raw:
            continue
        rows.append(
            PanelRow(
                subject_id=raw[0],
                group=raw[1],
                session_index=int(raw[2]),
                values={m: float(v) for m, v in zip(metrics, raw[3:])},
            )
        )
    return TrialPanel(rows=rows)
