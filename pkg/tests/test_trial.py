import numpy as np
import pytest

from gazelab import ingest, metrics, preprocess, stats, trial
from gazelab.ingest import ValidationError
from gazelab.trial import (
    SessionCaseSet,
    SubjectProfile,
    TrialConfig,
    block_randomize,
    build_casesets,
    make_case_pool,
    simulate_session,
    simulate_sensitivity_panel,
    simulate_trial,
    validate_caseset,
)


class TestBlockRandomize:
    def test_deterministic_for_fixed_seed(self):
        subjects = [(f"s{i}", "resident") for i in range(6)] + [
            (f"f{i}", "faculty") for i in range(2)
        ]
        a = block_randomize(subjects, seed=42)
        b = block_randomize(subjects, seed=42)
        assert a.assignment == b.assignment
        assert set(a.assignment.values()) <= {"intervention", "control"}
        assert set(a.assignment) == {sid for sid, _ in subjects}

    def test_empty_roster(self):
        plan = block_randomize([], seed=1)
        assert plan.assignment == {}

    def test_unknown_role_rejected(self):
        with pytest.raises(ValidationError, match="unknown role"):
            block_randomize([("x", "student")], seed=0)

    def test_intervention_fraction_near_half(self):
        subjects = [(f"s{i}", "resident") for i in range(10_000)]
        plan = block_randomize(subjects, seed=3)
        frac = sum(
            1 for g in plan.assignment.values() if g == "intervention"
        ) / len(subjects)
        assert abs(frac - 0.5) < 0.015

    def test_role_blocks_are_independent(self):
        # faculty assignments must not shift when residents are added
        faculty = [(f"f{i}", "faculty") for i in range(20)]
        base = block_randomize(faculty, seed=9)
        mixed = block_randomize([("r0", "resident")] + faculty, seed=9)
        for sid, _ in faculty:
            assert mixed.assignment[sid] == base.assignment[sid]


class TestCasePool:
    def test_pool_composition(self):
        pool = make_case_pool(seed=0, width=64, height=64)
        assert len(pool) == 132
        by_class = {}
        for c in pool:
            by_class[c.case_class] = by_class.get(c.case_class, 0) + 1
        assert by_class == {"nodule": 72, "normal": 36, "distractor": 24}
        for c in pool:
            if c.case_class == "nodule":
                assert c.lung_mask.any()
                assert 0 <= c.nodule.cx < c.width

    def test_pool_deterministic(self):
        a = make_case_pool(seed=5, width=64, height=64)
        b = make_case_pool(seed=5, width=64, height=64)
        assert [c.case_id for c in a] == [c.case_id for c in b]
        assert (a[0].lung_mask == b[0].lung_mask).all()


class TestBuildCasesets:
    def test_four_valid_disjoint_sessions(self):
        pool = make_case_pool(seed=1, width=64, height=64)
        cases = {c.case_id: c for c in pool}
        sets = build_casesets(pool, seed=1)
        assert [s.session_index for s in sets] == [1, 2, 3, 4]
        seen = set()
        for s in sets:
            validate_caseset(s, cases)
            assert len(s.case_ids) == 33
            classes = [cases[cid].case_class for cid in s.case_ids]
            assert classes.count("nodule") == 18
            assert classes.count("normal") == 9
            assert classes.count("distractor") == 6
            subtleties = [
                cases[cid].subtlety for cid in s.case_ids
                if cases[cid].case_class == "nodule"
            ]
            assert sorted(set(subtleties)) == [2, 3, 4]
            assert all(subtleties.count(v) == 6 for v in (2, 3, 4))
            # drawn without replacement across sessions
            assert not (set(s.case_ids) & seen)
            seen.update(s.case_ids)

    def test_deterministic(self):
        pool = make_case_pool(seed=2, width=64, height=64)
        a = build_casesets(pool, seed=8)
        b = build_casesets(pool, seed=8)
        assert [s.case_ids for s in a] == [s.case_ids for s in b]

    def test_insufficient_stratum_named_in_error(self):
        pool = [
            c for c in make_case_pool(seed=0, width=64, height=64)
            if not (c.case_class == "nodule" and c.subtlety == 3)
        ]
        with pytest.raises(ValidationError,
                           match="insufficient pool: stratum 'nodule subtlety 3'"):
            build_casesets(pool, seed=0)

    def test_validate_caseset_rejects_short_session(self):
        pool = make_case_pool(seed=0, width=64, height=64)
        cases = {c.case_id: c for c in pool}
        with pytest.raises(ValidationError, match="expected 33"):
            validate_caseset(SessionCaseSet(1, [pool[0].case_id]), cases)


def _small_setup(seed=0):
    pool = make_case_pool(seed=seed, width=64, height=64)
    cases = {c.case_id: c for c in pool}
    casesets = build_casesets(pool, seed=seed)
    return pool, cases, casesets


def _profile(**kw):
    defaults = dict(base_sensitivity=0.5, learning_rate=0.0, scan_speed_s=1.0,
                    coverage_propensity=0.4, interruption_rate=0.0, seed=0)
    defaults.update(kw)
    return SubjectProfile(**defaults)


def _session_bundle(profile, seed=0, session=1):
    _, cases, casesets = _small_setup(seed)
    rec, ann = simulate_session(profile, casesets[session - 1], cases, session,
                                subject_id="s", seed=seed)
    per_case = preprocess.segment_by_case(rec, cases)
    return metrics.session_metrics("s", session, per_case, ann,
                                   list(cases.values()))


class TestSimulateSession:
    def test_certain_detector_hits_everything(self):
        b = _session_bundle(_profile(base_sensitivity=1.0))
        assert b.sensitivity == 1.0

    def test_blind_detector_hits_nothing(self):
        b = _session_bundle(_profile(base_sensitivity=0.0))
        assert b.sensitivity == 0.0

    def test_zero_interruption_rate_means_zero_interruptions(self):
        b = _session_bundle(_profile(interruption_rate=0.0))
        assert b.interruptions == 0

    def test_positive_interruption_rate_produces_some(self):
        b = _session_bundle(_profile(interruption_rate=0.5, scan_speed_s=4.0))
        assert b.interruptions > 0

    def test_learning_raises_detection_probability(self):
        p = _profile(base_sensitivity=0.3, learning_rate=0.1)
        assert p.detection_probability(1) == pytest.approx(0.3)
        assert p.detection_probability(4) == pytest.approx(0.6)
        capped = _profile(base_sensitivity=0.9, learning_rate=0.2)
        assert capped.detection_probability(4) == 1.0

    def test_recording_round_trips_through_csv_layer(self):
        _, cases, casesets = _small_setup()
        rec, ann = simulate_session(_profile(), casesets[0], cases, 1,
                                    subject_id="s", seed=3)
        text = ingest.serialize_gaze_log(rec)
        again = ingest.parse_gaze_log(text, subject_id="s", session_index=1,
                                      segments=rec.segments)
        assert len(again.samples) == len(rec.samples)
        assert again.samples[0].t_ms == rec.samples[0].t_ms
        ann_again = ingest.parse_annotations(
            ingest.serialize_annotations(ann), list(cases.values())
        )
        assert ann_again.marks == ann.marks

    def test_sensitivity_converges_to_detection_probability(self):
        # pool the 18 positives over several seeds: LLN at p=0.5
        hits = 0
        total = 0
        for seed in range(12):
            b = _session_bundle(_profile(base_sensitivity=0.5), seed=seed)
            hits += round(b.sensitivity * 18)
            total += 18
        assert abs(hits / total - 0.5) < 0.1

    def test_gaze_stays_inside_image(self):
        _, cases, casesets = _small_setup()
        rec, _ = simulate_session(_profile(), casesets[0], cases, 1, seed=5)
        for s in rec.samples:
            if s.valid:
                assert 0 <= s.x < 64 and 0 <= s.y < 64


class TestSimulateTrial:
    def test_small_trial_shape(self):
        cfg = TrialConfig(n_per_group=2, seed=4, width=64, height=64)
        out = simulate_trial(cfg)
        panel_subjects = {r.subject_id for r in out.panel.rows}
        assert panel_subjects == {"int00", "int01", "ctl00", "ctl01"}
        assert len(out.panel.rows) == 4 * 4  # 4 subjects x 4 sessions
        assert out.roles["fac00"] == "faculty"
        assert ("fac00", 1) in out.bundles
        assert all("fac00" != r.subject_id for r in out.panel.rows)
        t = stats.mixed_anova(out.panel, "sensitivity")
        assert (t["group"].df1, t["group"].df2) == (1, 2)

    def test_trial_deterministic(self):
        cfg = TrialConfig(n_per_group=2, seed=4, width=64, height=64)
        a = simulate_trial(cfg)
        b = simulate_trial(cfg)
        for key in a.bundles:
            assert metrics.bundle_to_json(a.bundles[key]) == metrics.bundle_to_json(
                b.bundles[key]
            )
        assert stats.panel_to_csv(a.panel) == stats.panel_to_csv(b.panel)

    def test_one_per_group_rejected(self):
        with pytest.raises(ValidationError, match="at least 2"):
            simulate_trial(TrialConfig(n_per_group=1, seed=0))

    def test_config_json_round_trip(self):
        cfg = TrialConfig(n_per_group=3, seed=9, width=128, height=128)
        cfg.intervention.learning_rate = 0.07
        again = TrialConfig.from_json(cfg.to_json())
        assert again == cfg


class TestSensitivityPanel:
    def test_noise_free_panel_reproduces_ramp(self):
        panel = simulate_sensitivity_panel(
            31 / 90, 35 / 90, 30 / 90, 5 / 90, binomial_noise=False
        )
        out = stats.improvement_summary(panel, "sensitivity")
        assert out["intervention"].absolute_change == pytest.approx(35 / 90, rel=1e-12)
        assert out["intervention"].relative_change == pytest.approx(35 / 31, rel=1e-12)
        assert out["control"].absolute_change == pytest.approx(5 / 90, rel=1e-12)

    def test_noisy_panel_values_are_valid_proportions(self):
        panel = simulate_sensitivity_panel(0.4, 0.3, 0.4, 0.0, seed=2)
        for row in panel.rows:
            v = row.values["sensitivity"]
            assert 0.0 <= v <= 1.0
            assert round(v * 18) == pytest.approx(v * 18)

    def test_seed_controls_noise(self):
        a = simulate_sensitivity_panel(0.4, 0.3, 0.4, 0.0, seed=1)
        b = simulate_sensitivity_panel(0.4, 0.3, 0.4, 0.0, seed=1)
        c = simulate_sensitivity_panel(0.4, 0.3, 0.4, 0.0, seed=2)
        assert stats.panel_to_csv(a) == stats.panel_to_csv(b)
        assert stats.panel_to_csv(a) != stats.panel_to_csv(c)
