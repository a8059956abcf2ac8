"""End-to-end synthetic trial: enrollment, four sessions, panel, ANOVA.

The intervention arm gets a positive learning rate; the control arm does
not.  The run is small (2 per arm) so it finishes in a few seconds while
still exercising the whole pipeline, including the faculty reference
subject used for feedback reports.
"""

from gazelab import stats, trial

config = trial.TrialConfig(n_per_group=2, seed=12, width=64, height=64)
config.intervention.learning_rate = 0.12
config.control.learning_rate = 0.01

sim = trial.simulate_trial(config)

print("enrollment:")
for sid, role in sim.plan.subjects:
    arm = sim.plan.assignment.get(sid, "reference")
    print(f"  {sid}  {role:9s} -> {arm}")

print("\nsensitivity by subject and session:")
for sid in sorted({r.subject_id for r in sim.panel.rows}):
    values = [
        f"{b.sensitivity:.3f}"
        for (s, k), b in sorted(sim.bundles.items())
        if s == sid
    ]
    print(f"  {sid}: {'  '.join(values)}")

table = stats.mixed_anova(sim.panel, "sensitivity")
print("\nANOVA on sensitivity:")
for name in stats.EFFECTS:
    row = table[name]
    print(f"  {name:12s} F({row.df1},{row.df2}) = {row.F:.3f}, "
          f"p = {row.p:.4g}, eta^2 = {row.partial_eta_squared:.3f}")
