"""Scenario-based generator of synthetic 10 Hz CAN traces.

Each scenario places a lane-change activation at ``trigger_time_s`` so that the
logger precondition fires there, and shapes the continuous signals around it
with ramps and Gaussian bumps. Template time is ``(t - trigger) / warp`` with a
per-file warp in [0.8, 1.2]. Overtakes look the same under every profile; the
no-overtake scenarios depend on the :class:`ConditionProfile`, which is what
the distribution-shift experiment relies on.

The RNG is numpy ``PCG64`` seeded per file (see :mod:`overtake.seeding`).
"""

from __future__ import annotations

import enum
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import core_types as ct
from .core_types import CanTrace, DatasetManifest, ManeuverLabel, ManifestEntry
from .seeding import derive_seed
from .trigger import DEFAULT_RULE, crop_log, scan


class ScenarioKind(enum.Enum):
    OVERTAKE = "Overtake"
    LEFT_TURN_INTERSECTION = "LeftTurnIntersection"
    EXIT_LANE_AVOID = "ExitLaneAvoid"
    GIVE_WAY_MERGE = "GiveWayMerge"
    PASS_STATIONARY = "PassStationary"
    CRUISE_FOLLOW = "CruiseFollow"

    @property
    def label(self) -> ManeuverLabel:
        return ManeuverLabel.OVERTAKE if self is ScenarioKind.OVERTAKE else ManeuverLabel.NO_OVERTAKE

    @classmethod
    def parse(cls, name: str) -> "ScenarioKind":
        for k in cls:
            if name in (k.value, k.name):
                return k
        valid = ", ".join(k.value for k in cls)
        raise ValueError(f"unknown scenario kind {name!r}; valid kinds: {valid}")


DISTRACTOR_KINDS = tuple(k for k in ScenarioKind if k is not ScenarioKind.OVERTAKE)

# pedal, dist, speed ahead, rel speed, speed, lat acc, lon acc
DEFAULT_NOISE = (2.0, 1.5, 1.0, 0.05, 0.3, 0.08, 0.03)


@dataclass(frozen=True)
class ConditionProfile:
    cruise_control_prob: float = 0.7
    traffic_density: str = "light"
    base_speed_kmh: float = 76.0
    pedal_bias_pct: float = 20.0
    noise_sigma: tuple[float, ...] = DEFAULT_NOISE

    def __post_init__(self):
        if not 0.0 <= self.cruise_control_prob <= 1.0:
            raise ValueError("cruise_control_prob must lie in [0, 1]")
        if self.traffic_density not in ("light", "heavy"):
            raise ValueError("traffic_density must be 'light' or 'heavy'")
        if len(self.noise_sigma) != ct.N_CONTINUOUS or any(s < 0 for s in self.noise_sigma):
            raise ValueError("noise_sigma needs 7 non-negative values")
        object.__setattr__(self, "noise_sigma", tuple(float(s) for s in self.noise_sigma))

    @property
    def heavy(self) -> bool:
        return self.traffic_density == "heavy"


LIGHT_TRAFFIC = ConditionProfile()
HEAVY_TRAFFIC = ConditionProfile(cruise_control_prob=0.1, traffic_density="heavy",
                                 base_speed_kmh=84.0, pedal_bias_pct=66.0)
PROFILES = {"light": LIGHT_TRAFFIC, "heavy": HEAVY_TRAFFIC}


@dataclass(frozen=True)
class ScenarioSpec:
    kind: ScenarioKind
    profile: ConditionProfile = LIGHT_TRAFFIC
    duration_s: float = 80.0
    trigger_time_s: float = 25.0
    seed: int = 0

    def validate(self) -> None:
        if self.duration_s < ct.PRE_TRIGGER_S + ct.POST_TRIGGER_S:
            raise ValueError(f"duration {self.duration_s} s is shorter than the 65 s logging window")
        if not (ct.PRE_TRIGGER_S <= self.trigger_time_s <= self.duration_s - ct.POST_TRIGGER_S):
            raise ValueError(
                f"trigger time {self.trigger_time_s} s outside [20, {self.duration_s - ct.POST_TRIGGER_S:g}] s; "
                "the logging window does not fit"
            )
        if abs(self.trigger_time_s * 10 - round(self.trigger_time_s * 10)) > 1e-9:
            raise ValueError("trigger time must lie on the 0.1 s sample grid")


def _bump(s, center, width):
    return np.exp(-0.5 * ((s - center) / width) ** 2)


def _ramp(s, center, width):
    return 1.0 / (1.0 + np.exp(-(s - center) / width))


def _window(tau, start, stop):
    return ((tau >= start - 1e-9) & (tau < stop - 1e-9)).astype(float)


def _overtake(tau, s, rng, prof):
    n = len(tau)
    out = np.zeros((n, 10))
    v0 = rng.uniform(80.0, 92.0)
    speed = v0 + rng.uniform(0.0, 3.0) * _ramp(s, 3.0, 2.0)
    # most drivers commit hard; some pull out hesitantly from further back
    hesitant = rng.random() < 0.25
    if hesitant:
        closing, d_trig = rng.uniform(1.0, 6.0), rng.uniform(28.0, 44.0)
        p0, p1 = rng.uniform(30.0, 60.0), rng.uniform(50.0, 85.0)
    else:
        closing, d_trig = rng.uniform(3.0, 14.0), rng.uniform(15.0, 44.0)
        p0, p1 = rng.uniform(35.0, 70.0), rng.uniform(85.0, 100.0)
    jump = rng.uniform(0.3, 2.0)  # seconds after the trigger
    # closing in on the vehicle ahead; flat before 30 s ahead of the trigger
    d_pre = d_trig + closing / 3.6 * np.clip(-tau, -jump, 30.0)
    dist = np.where(tau < jump, d_pre, ct.NO_VEHICLE_DIST_M)
    ahead = np.where(tau < jump, speed - closing, ct.NO_VEHICLE_DIST_M)
    if rng.random() < 0.3:
        t_new = rng.uniform(6.0, 15.0)
        d_new = rng.uniform(110.0, 180.0) - 0.8 * np.clip(tau - t_new, 0, None)
        late = tau >= t_new
        dist = np.where(late, d_new, dist)
        ahead = np.where(late, speed + rng.uniform(-5.0, 8.0), ahead)
    a_neg = rng.uniform(0.4, 3.0)
    rel = -a_neg * _bump(s, -0.3, 1.0) + 0.6 * a_neg * _bump(s, 2.6, 1.2)
    lat = 0.05 + rng.uniform(0.5, 1.6) * _bump(s, 0.0, 0.8) - rng.uniform(0.3, 0.9) * _bump(s, 3.0, 1.2)
    lon = 0.02 + (rng.random() < 0.3) * 0.2 * _bump(s, 0.0, 1.5)
    pedal = p0 + (p1 - p0) * _ramp(s, -8.0, 2.5) - rng.uniform(0.0, 12.0) * _ramp(s, 4.0, 1.0)
    out[:, ct.PEDAL] = pedal
    out[:, ct.DIST] = dist
    out[:, ct.SPEED_AHEAD] = ahead
    out[:, ct.REL_SPEED] = rel
    out[:, ct.SPEED] = speed
    out[:, ct.LAT_ACC] = lat
    out[:, ct.LON_ACC] = lon
    out[:, ct.LANE_CHANGE] = _window(tau, 0.0, rng.uniform(2.0, 5.0))
    if rng.random() < 0.6:
        out[:, ct.LEFT_IND] = _window(tau, -rng.uniform(1.0, 3.0), rng.uniform(2.0, 4.0))
    if rng.random() < 0.5:
        t_ret = rng.uniform(12.0, 25.0)
        out[:, ct.RIGHT_IND] = _window(tau, t_ret, t_ret + 3.0)
    return out, -1.0


def _no_overtake(kind, tau, s, rng, prof):
    n = len(tau)
    out = np.zeros((n, 10))
    heavy = prof.heavy

    v0 = max(prof.base_speed_kmh + rng.uniform(-10.0, 10.0), 58.0)
    slope = rng.uniform(0.05, 0.25)  # km/h per second, slight increase over time
    speed = v0 + slope * tau
    lon = np.full(n, slope / 3.6)

    cruise = rng.random() < prof.cruise_control_prob
    if cruise:
        pedal = np.zeros(n)
    else:
        pedal = prof.pedal_bias_pct + rng.uniform(-20.0, 25.0) + 5.0 * np.sin(2 * np.pi * tau / rng.uniform(15, 40))

    if heavy:
        dist = rng.uniform(30.0, 85.0) + 4.0 * np.sin(2 * np.pi * tau / rng.uniform(20, 50))
    else:
        dist = rng.uniform(70.0, 150.0) + 8.0 * np.sin(2 * np.pi * tau / rng.uniform(20, 50))
        if rng.random() < 0.25:
            gap = rng.uniform(5.0, 30.0)
            dist = np.where(tau > gap, ct.NO_VEHICLE_DIST_M, dist)
    ahead = speed + rng.uniform(-3.0, 5.0)

    if heavy or rng.random() < 0.25:
        amp = rng.uniform(0.5, 2.0) if heavy else rng.uniform(0.3, 1.2)
        rel = -amp * _bump(s, -0.2, 1.0) + 0.2 * amp * _bump(s, 2.5, 1.5)
        sign = -1.0
    else:
        amp = rng.uniform(0.3, 1.5)
        rel = amp * _bump(s, 0.0, 1.2)
        sign = 1.0
    lat = 0.05 + rng.uniform(0.3, 0.9) * _bump(s, 0.5, 1.5)
    lane_len = rng.uniform(1.0, 3.0)
    left_p = 0.3

    if kind is ScenarioKind.LEFT_TURN_INTERSECTION:
        v_trig = rng.uniform(55.0, 65.0)
        speed = v_trig + rng.uniform(0.15, 0.5) * np.clip(-tau, 0.0, 30.0) + 0.3 * np.clip(tau, 0.0, 20.0)
        lon = np.where(tau < 0, -rng.uniform(0.1, 0.4), 0.3 * _bump(s, 6.0, 3.0))
        lat = 0.05 + rng.uniform(1.0, 2.0) * _ramp(s, 0.0, 0.6) * (1 - _ramp(s, 6.0, 0.8))
        dist = np.where(tau > rng.uniform(3.0, 6.0), ct.NO_VEHICLE_DIST_M, dist)
        if not cruise:
            pedal = pedal * (0.3 + 0.7 * _ramp(s, 5.0, 1.5))
        left_p = 0.9
        lane_len = rng.uniform(2.0, 4.0)
    elif kind is ScenarioKind.EXIT_LANE_AVOID:
        dist = dist + (0.0 if heavy else rng.uniform(10.0, 30.0))
        lat = 0.05 + rng.uniform(0.4, 0.9) * _bump(s, 0.0, 0.9) - rng.uniform(0.1, 0.4) * _bump(s, 3.0, 1.2)
        left_p = 0.7
    elif kind is ScenarioKind.GIVE_WAY_MERGE:
        dip = rng.uniform(3.0, 8.0)
        speed = speed - dip * _ramp(s, -4.0, 2.0)
        lon = lon - dip / 3.6 / 4.0 * _bump(s, -4.0, 2.0)
        if not cruise:
            pedal = pedal * (1 - 0.7 * _bump(s, -4.0, 2.5))
        lat = 0.05 + rng.uniform(0.2, 0.6) * _bump(s, 0.5, 1.5)
    elif kind is ScenarioKind.PASS_STATIONARY:
        v_trig = rng.uniform(56.0, 68.0)
        speed = v_trig + 0.1 * tau
        lon = np.full(n, 0.1 / 3.6)
        d_trig = rng.uniform(25.0, 60.0)
        appear = rng.uniform(6.0, 10.0)
        d_pre = d_trig + v_trig / 3.6 * (-tau)
        dist = np.where(tau < -appear, ct.NO_VEHICLE_DIST_M, d_pre)
        dist = np.where(tau >= rng.uniform(0.5, 2.5), ct.NO_VEHICLE_DIST_M, dist)
        ahead = np.where(dist < ct.NO_VEHICLE_DIST_M, rng.uniform(0.0, 5.0), ct.NO_VEHICLE_DIST_M)
        if not cruise:
            pedal = pedal * (1 - 0.5 * _bump(s, -3.0, 4.0))
        lat = 0.05 + rng.uniform(0.6, 1.2) * _bump(s, 0.0, 1.0) - rng.uniform(0.2, 0.6) * _bump(s, 3.5, 1.5)
        left_p = 0.5
    elif kind is ScenarioKind.CRUISE_FOLLOW:
        lat = 0.05 + rng.uniform(0.2, 0.5) * _bump(s, 0.3, 1.0)
        lane_len = rng.uniform(0.5, 1.5)
        left_p = 0.1

    no_vehicle = dist >= ct.NO_VEHICLE_DIST_M
    ahead = np.where(no_vehicle, ct.NO_VEHICLE_DIST_M, ahead)
    out[:, ct.PEDAL] = pedal
    out[:, ct.DIST] = dist
    out[:, ct.SPEED_AHEAD] = ahead
    out[:, ct.REL_SPEED] = rel
    out[:, ct.SPEED] = speed
    out[:, ct.LAT_ACC] = lat
    out[:, ct.LON_ACC] = lon
    out[:, ct.LANE_CHANGE] = _window(tau, 0.0, lane_len)
    if rng.random() < left_p:
        out[:, ct.LEFT_IND] = _window(tau, -rng.uniform(0.5, 4.0), rng.uniform(1.0, 5.0))
    return out, sign


def generate_trace(spec: ScenarioSpec) -> CanTrace:
    """Unlabeled trace in absolute time; the trigger fires at ``spec.trigger_time_s``."""
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    n = int(round(spec.duration_s * ct.SAMPLE_RATE_HZ)) + 1
    t = np.round(np.arange(n) * ct.SAMPLE_PERIOD_S, 10)
    tau = np.round(t - spec.trigger_time_s, 10)
    warp = rng.uniform(0.8, 1.2)
    s = tau / warp
    if spec.kind is ScenarioKind.OVERTAKE:
        vals, sign = _overtake(tau, s, rng, spec.profile)
    else:
        vals, sign = _no_overtake(spec.kind, tau, s, rng, spec.profile)

    sigma = np.asarray(spec.profile.noise_sigma)
    released = vals[:, ct.PEDAL] <= 0.0
    no_vehicle = vals[:, ct.DIST] >= ct.NO_VEHICLE_DIST_M
    vals[:, : ct.N_CONTINUOUS] += rng.standard_normal((n, ct.N_CONTINUOUS)) * sigma
    # released pedal and "no vehicle ahead" are exact codes, not noisy readings
    vals[released, ct.PEDAL] = 0.0
    vals[no_vehicle, ct.DIST] = ct.NO_VEHICLE_DIST_M
    vals[no_vehicle, ct.SPEED_AHEAD] = ct.NO_VEHICLE_DIST_M

    k = int(round(spec.trigger_time_s * ct.SAMPLE_RATE_HZ))
    # make the trigger instant unambiguous regardless of noise
    vals[k, ct.REL_SPEED] = sign * max(abs(vals[k, ct.REL_SPEED]), 0.3)
    vals[k, ct.SPEED] = max(vals[k, ct.SPEED], 52.0)
    vals[k, ct.DIST] = min(vals[k, ct.DIST], 190.0)
    vals = np.clip(vals, ct._LOWS, ct._HIGHS)
    return CanTrace(t, vals)


def scenario_trace(kind: ScenarioKind, profile: ConditionProfile, seed: int, duration_s: float = 80.0) -> CanTrace:
    """Logged, labeled segment for one scenario (trigger time drawn from the seed)."""
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "trigger")))
    trig = round(rng.uniform(ct.PRE_TRIGGER_S + 2.0, duration_s - ct.POST_TRIGGER_S - 2.0), 1)
    raw = generate_trace(ScenarioSpec(kind, profile, duration_s, trig, seed))
    fired = scan(raw, DEFAULT_RULE)
    if not fired:
        raise RuntimeError(f"{kind.value} trace (seed {seed}) never triggered")
    return crop_log(raw, fired[0]).trace.with_meta(label=kind.label)


@dataclass(frozen=True)
class TruckConfig:
    truck: str
    profile: str = "light"
    condition: str = "mirror-like"
    counts: dict = field(default_factory=dict)


@dataclass(frozen=True)
class DatasetConfig:
    trucks: tuple[TruckConfig, ...]
    master_seed: int = 0
    duration_s: float = 80.0
    profiles: dict = field(default_factory=lambda: dict(PROFILES))

    @classmethod
    def from_json(cls, doc: dict) -> "DatasetConfig":
        profiles = dict(PROFILES)
        for name, p in (doc.get("profiles") or {}).items():
            base = PROFILES.get(p.get("base", name), LIGHT_TRAFFIC)
            kw = {k: v for k, v in p.items() if k != "base"}
            if "noise_sigma" in kw:
                kw["noise_sigma"] = tuple(kw["noise_sigma"])
            profiles[name] = replace(base, **kw)
        trucks = []
        for tr in doc["trucks"]:
            counts = {ScenarioKind.parse(k): int(v) for k, v in tr.get("counts", {}).items()}
            if any(v < 0 for v in counts.values()):
                raise ValueError("scenario counts must be non-negative")
            if tr.get("profile", "light") not in profiles:
                raise ValueError(f"unknown profile {tr.get('profile')!r}")
            trucks.append(TruckConfig(str(tr["truck"]), tr.get("profile", "light"),
                                      tr.get("condition", "mirror-like"), counts))
        return cls(tuple(trucks), int(doc.get("master_seed", 0)), float(doc.get("duration_s", 80.0)), profiles)


def demo_config(master_seed: int = 0, per_class_per_truck: int = 50) -> DatasetConfig:
    """Four trucks, two per condition; 200 overtake and 200 no-overtake files."""
    per_kind = per_class_per_truck // len(DISTRACTOR_KINDS)
    counts = {ScenarioKind.OVERTAKE: per_class_per_truck}
    counts.update({k: per_kind for k in DISTRACTOR_KINDS})
    trucks = (
        TruckConfig("t1", "light", "mirror-like", counts),
        TruckConfig("t2", "light", "mirror-like", counts),
        TruckConfig("t3", "heavy", "cms-like", counts),
        TruckConfig("t4", "heavy", "cms-like", counts),
    )
    return DatasetConfig(trucks, master_seed)


def _plan(config: DatasetConfig):
    jobs = []
    for tr in config.trucks:
        idx = 0
        for kind in ScenarioKind:
            for _ in range(tr.counts.get(kind, 0)):
                seed = derive_seed(config.master_seed, tr.truck, idx)
                name = f"{tr.truck}/{tr.truck}_{idx:04d}_{kind.value}.csv"
                jobs.append((name, tr.truck, tr.condition, kind, config.profiles[tr.profile], seed))
                idx += 1
    return jobs


def _make_file(job, out_dir: Path, duration_s: float):
    name, truck, condition, kind, profile, seed = job
    trace = scenario_trace(kind, profile, seed, duration_s).with_meta(truck_id=truck, file_id=Path(name).stem)
    path = out_dir / name
    path.parent.mkdir(parents=True, exist_ok=True)
    ct.save_trace(trace, path)
    return ManifestEntry(name, truck, kind.label, condition)


def generate_dataset(config: DatasetConfig, out_dir, workers: int = 1) -> DatasetManifest:
    """Write every trace plus ``manifest.json`` under ``out_dir``.

    Per-file seeds are ``derive_seed(master_seed, truck, index)`` where
    ``index`` counts files within the truck in ``ScenarioKind`` order, so the
    output does not depend on ``workers``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = _plan(config)
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            entries = list(ex.map(_make_file, jobs, [out_dir] * len(jobs), [config.duration_s] * len(jobs)))
    else:
        entries = [_make_file(j, out_dir, config.duration_s) for j in jobs]
    manifest = DatasetManifest(tuple(entries), root=out_dir)
    ct.save_manifest(manifest, out_dir / "manifest.json")
    return manifest


def generate_segments(config: DatasetConfig) -> tuple[list[CanTrace], DatasetManifest]:
    """In-memory variant of :func:`generate_dataset` (no files written)."""
    traces, entries = [], []
    for name, truck, condition, kind, profile, seed in _plan(config):
        traces.append(scenario_trace(kind, profile, seed, config.duration_s)
                      .with_meta(truck_id=truck, file_id=Path(name).stem))
        entries.append(ManifestEntry(name, truck, kind.label, condition))
    return traces, DatasetManifest(tuple(entries))


def load_config(path) -> tuple[DatasetConfig, dict]:
    doc = json.loads(Path(path).read_text())
    return DatasetConfig.from_json(doc), doc
