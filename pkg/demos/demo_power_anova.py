"""Sample-size planning and the mixed-design ANOVA, on a desk-scale panel.

Reproduces the planning numbers first (17 per group for a one-SD effect),
then simulates a 2 groups x 5 subjects x 4 sessions sensitivity panel with
binomial noise over 18 positive cases and runs the split-plot ANOVA on it.
"""

from gazelab import stats, trial

n = stats.power_sample_size(delta=1.0, sd=1.0, alpha=0.05, power=0.8)
print(f"n per group for d=1.0 at alpha=0.05, power=0.8: {n}")
print(f"achieved power at that n: {stats.two_sample_t_power(n, 1.0, 0.05):.4f}")

panel = trial.simulate_sensitivity_panel(
    base_intervention=31 / 90,
    gain_intervention=35 / 90,
    base_control=30 / 90,
    gain_control=5 / 90,
    seed=0,
)
table = stats.mixed_anova(panel, "sensitivity")
print("\nSource        DF1  DF2        F        p     eta^2")
for name in stats.EFFECTS:
    row = table[name]
    print(f"{name:12s} {row.df1:4d} {row.df2:4d} {row.F:8.3f} "
          f"{row.p:8.4g} {row.partial_eta_squared:9.3f}")

summary = stats.improvement_summary(panel, "sensitivity")
for group, s in summary.items():
    print(f"\n{group}: baseline {s.baseline_mean:.4f}, "
          f"final {s.final_mean:.4f}, "
          f"absolute +{s.absolute_change * 100:.2f} pp, "
          f"relative +{s.relative_change * 100:.1f}%")
