"""Render a feedback report for one simulated subject-session.

Builds a tiny cohort (four residents plus one faculty reference), then
writes the HTML/Markdown/JSON report with its heatmap and DTW panels to
demo_report_out/, and prints the session-over-session change table.
"""

from pathlib import Path

from gazelab import report, trial
from gazelab.cli import _outcomes_from_bundle

config = trial.TrialConfig(n_per_group=2, seed=12, width=64, height=64)
config.intervention.learning_rate = 0.12
sim = trial.simulate_trial(config)

session1 = [b for (sid, k), b in sorted(sim.bundles.items()) if k == 1]
ref = report.build_cohort_reference(session1, sim.roles)

bundle = sim.bundles[("int00", 1)]
out_dir = Path(__file__).parent / "demo_report_out"
paths = report.render_report(
    bundle, ref, _outcomes_from_bundle(bundle), out_dir
)
print("report written:")
for kind, path in paths.items():
    print(f"  {kind:8s} {path}")

print("\nchange vs session 1 for int00:")
subject_bundles = [sim.bundles[("int00", k)] for k in range(1, 5)]
for row in report.change_table(subject_bundles):
    changes = "  ".join(f"{c:+7.1f}%" for c in row.percent_change)
    print(f"  {row.metric:20s} {changes}   {row.label}")
