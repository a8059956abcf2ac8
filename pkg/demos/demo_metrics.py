"""Walk one simulated reading session through the full metrics pipeline.

Generates a synthetic subject, segments the gaze log by case, and prints
the five session metrics plus a few per-case details.  Everything is
seeded, so the numbers are stable run to run.
"""

from gazelab import metrics, preprocess, trial

pool = trial.make_case_pool(seed=3, width=128, height=128)
cases = {c.case_id: c for c in pool}
casesets = trial.build_casesets(pool, seed=3)

profile = trial.SubjectProfile(
    base_sensitivity=0.45,
    learning_rate=0.1,
    scan_speed_s=3.0,
    coverage_propensity=0.5,
    interruption_rate=0.05,
    seed=3,
)

recording, annotations = trial.simulate_session(
    profile, casesets[0], cases, session_index=1, subject_id="demo"
)
print(f"recording: {len(recording.samples)} samples over "
      f"{len(recording.segments)} cases")

per_case = preprocess.segment_by_case(recording, cases)
bundle = metrics.session_metrics(
    "demo", 1, per_case, annotations, list(cases.values())
)

print(f"sensitivity        {bundle.sensitivity:.4f}")
print(f"lung coverage      {bundle.coverage:.4f}")
print(f"heterogeneity      {bundle.heterogeneity_mean:.4f} "
      f"(sd {bundle.heterogeneity_std:.4f}, DTW units)")
print(f"interruptions      {bundle.interruptions}")
print(f"mean review time   {bundle.mean_review_time_s:.2f} s")

print("\nfirst five cases:")
for d in bundle.per_case[:5]:
    print(f"  {d.case_id:14s} {d.case_class:10s} "
          f"{d.review_time_s:6.2f} s  {d.call}")

print(f"\nheatmap grid {bundle.heatmap.gw}x{bundle.heatmap.gh}, "
      f"cell peak {bundle.heatmap.cells.max()} of {bundle.heatmap.n_scans} scans")
