import filecmp

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from overtake import core_types as ct
from overtake.core_types import ManeuverLabel
from overtake.synthgen import (
    DISTRACTOR_KINDS,
    HEAVY_TRAFFIC,
    LIGHT_TRAFFIC,
    ConditionProfile,
    DatasetConfig,
    ScenarioKind,
    ScenarioSpec,
    TruckConfig,
    demo_config,
    generate_dataset,
    generate_trace,
    scenario_trace,
)
from overtake.trigger import DEFAULT_RULE, scan

ZERO_NOISE = (0.0,) * ct.N_CONTINUOUS


def at(tr, t):
    return tr.values[tr.index_of(t)]


class TestDeterminism:
    def test_same_seed_same_trace(self):
        a = scenario_trace(ScenarioKind.OVERTAKE, LIGHT_TRAFFIC, 11)
        b = scenario_trace(ScenarioKind.OVERTAKE, LIGHT_TRAFFIC, 11)
        assert a == b

    def test_different_seed_differs(self):
        a = scenario_trace(ScenarioKind.OVERTAKE, LIGHT_TRAFFIC, 11)
        b = scenario_trace(ScenarioKind.OVERTAKE, LIGHT_TRAFFIC, 12)
        assert not np.array_equal(a.values, b.values)

    def test_files_byte_identical(self, tmp_path):
        cfg = demo_config(3, per_class_per_truck=5)
        ma = generate_dataset(cfg, tmp_path / "a")
        mb = generate_dataset(cfg, tmp_path / "b", workers=2)
        assert ma.entries == mb.entries
        for e in ma.entries:
            assert filecmp.cmp(tmp_path / "a" / e.path, tmp_path / "b" / e.path, shallow=False)
        assert filecmp.cmp(tmp_path / "a" / "manifest.json", tmp_path / "b" / "manifest.json", shallow=False)


class TestTriggerGuarantee:
    @pytest.mark.parametrize("kind", list(ScenarioKind))
    @pytest.mark.parametrize("profile", [LIGHT_TRAFFIC, HEAVY_TRAFFIC])
    def test_fires_at_designated_instant(self, kind, profile):
        for seed in range(5):
            raw = generate_trace(ScenarioSpec(kind, profile, trigger_time_s=31.4, seed=seed))
            fired = scan(raw, DEFAULT_RULE)
            assert fired and fired[0] == pytest.approx(31.4)

    def test_logging_window_must_fit(self):
        with pytest.raises(ValueError, match="logging window"):
            generate_trace(ScenarioSpec(ScenarioKind.OVERTAKE, trigger_time_s=10.0))

    def test_cruise_follow_always_triggers(self, demo):
        segs, _ = demo
        follow = [s for s in segs if "CruiseFollow" in s.file_id]
        assert len(follow) == 40
        assert all(s.values[200, ct.LANE_CHANGE] == 1 for s in follow)


class TestOvertakeShape:
    @pytest.fixture
    def overtakes(self, demo):
        segs, m = demo
        return [s for s, e in zip(segs, m.entries) if e.label is ManeuverLabel.OVERTAKE]

    def test_class_and_count(self, overtakes):
        assert len(overtakes) == 200

    def test_lead_vehicle_gone_after_passing(self, overtakes):
        assert all(at(s, 2.0)[ct.DIST] == ct.NO_VEHICLE_DIST_M for s in overtakes)

    def test_lead_vehicle_close_at_trigger(self, overtakes):
        assert all(at(s, 0.0)[ct.DIST] < 50 for s in overtakes)

    def test_speed_near_ninety(self, overtakes):
        v = np.array([s.values[:, ct.SPEED].mean() for s in overtakes])
        assert np.all((v > 75) & (v < 100))

    def test_rel_speed_dips_then_lateral_spike(self, overtakes):
        for s in overtakes:
            pre = s.values[s.index_of(-5.0):s.index_of(0.0) + 1]
            assert pre[:, ct.REL_SPEED].min() < 0
            post = s.values[s.index_of(0.0):s.index_of(3.0) + 1]
            assert post[:, ct.LAT_ACC].max() > 0.3


class TestConditions:
    def test_cruise_control_releases_pedal(self):
        prof = ConditionProfile(cruise_control_prob=1.0)
        tr = scenario_trace(ScenarioKind.CRUISE_FOLLOW, prof, 4)
        assert np.median(tr.values[:, ct.PEDAL]) == 0.0

    def test_light_vs_heavy_pedal(self, demo):
        segs, m = demo
        pooled = {}
        for s, e in zip(segs, m.entries):
            if e.label is ManeuverLabel.NO_OVERTAKE:
                pooled.setdefault(e.condition, []).append(s.values[:, ct.PEDAL])
        assert np.median(np.concatenate(pooled["mirror-like"])) == 0.0
        assert np.median(np.concatenate(pooled["cms-like"])) > 50.0

    @settings(max_examples=25)
    @given(st.integers(0, 2**32), st.sampled_from(list(ScenarioKind)), st.sampled_from([LIGHT_TRAFFIC, HEAVY_TRAFFIC]))
    def test_values_within_declared_ranges(self, seed, kind, profile):
        tr = scenario_trace(kind, profile, seed)
        # CanTrace validates on construction; spell out the bounds anyway
        assert np.all(tr.values >= ct._LOWS) and np.all(tr.values <= ct._HIGHS)
        assert len(tr) == 651

    def test_noise_free_classes_separate(self):
        quiet = ConditionProfile(noise_sigma=ZERO_NOISE)
        pos = np.array([scenario_trace(ScenarioKind.OVERTAKE, quiet, s).values[:201, :7].mean(0) for s in range(10)])
        neg = np.array([scenario_trace(k, quiet, s).values[:201, :7].mean(0)
                        for k in DISTRACTOR_KINDS for s in range(2)])
        differs = np.abs(pos.mean(0) - neg.mean(0)) > 1e-6
        assert differs.sum() >= 4

    def test_invalid_profile(self):
        with pytest.raises(ValueError):
            ConditionProfile(cruise_control_prob=1.5)
        with pytest.raises(ValueError):
            ConditionProfile(traffic_density="jammed")


class TestConfig:
    def test_counts_respected(self, tmp_path):
        cfg = DatasetConfig((TruckConfig("tx", counts={ScenarioKind.OVERTAKE: 10, ScenarioKind.CRUISE_FOLLOW: 10}),))
        m = generate_dataset(cfg, tmp_path)
        assert m.counts() == {"tx": (10, 10)}
        assert (tmp_path / "manifest.json").exists()

    def test_unknown_kind_lists_valid(self):
        with pytest.raises(ValueError, match="valid kinds: Overtake, LeftTurnIntersection"):
            DatasetConfig.from_json({"trucks": [{"truck": "t", "counts": {"Tailgate": 3}}]})

    def test_profile_override_from_json(self):
        cfg = DatasetConfig.from_json({"profiles": {"mine": {"base": "heavy", "pedal_bias_pct": 50}},
                                       "trucks": [{"truck": "t", "profile": "mine"}]})
        assert cfg.profiles["mine"].heavy and cfg.profiles["mine"].pedal_bias_pct == 50

    def test_demo_shape(self, demo):
        segs, m = demo
        assert len(segs) == 400
        assert m.counts() == {t: (50, 50) for t in ("t1", "t2", "t3", "t4")}
        assert {e.condition for e in m.entries} == {"mirror-like", "cms-like"}
