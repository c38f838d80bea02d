"""Data-logger emulation: precondition trigger scan and fixed-length log crop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_types import (
    DIST,
    LANE_CHANGE,
    LOGGED_SAMPLES,
    POST_TRIGGER_S,
    PRE_TRIGGER_S,
    REL_SPEED,
    SAMPLE_RATE_HZ,
    SPEED,
    CanTrace,
    logged_time_axis,
)


class WindowOutOfBounds(ValueError):
    pass


@dataclass(frozen=True)
class TriggerRule:
    """Conjunctive precondition; all comparisons are strict.

    With ``magnitude_rel_speed`` the relative-speed test is ``|v| > threshold``,
    otherwise ``v > threshold``.
    """

    min_speed_kmh: float = 50.0
    max_dist_m: float = 200.0
    min_abs_rel_speed_kmh: float = 0.1
    lane_change_required: bool = True
    magnitude_rel_speed: bool = True
    refractory_s: float = POST_TRIGGER_S

    def __post_init__(self):
        for name in ("min_speed_kmh", "max_dist_m", "min_abs_rel_speed_kmh", "refractory_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


DEFAULT_RULE = TriggerRule()


def qualifying(trace: CanTrace, rule: TriggerRule = DEFAULT_RULE) -> np.ndarray:
    """Boolean mask of samples where every trigger condition holds."""
    v = trace.values
    rel = np.abs(v[:, REL_SPEED]) if rule.magnitude_rel_speed else v[:, REL_SPEED]
    mask = (v[:, SPEED] > rule.min_speed_kmh) & (v[:, DIST] < rule.max_dist_m) & (rel > rule.min_abs_rel_speed_kmh)
    if rule.lane_change_required:
        mask &= v[:, LANE_CHANGE] == 1.0
    return mask


def scan(trace: CanTrace, rule: TriggerRule = DEFAULT_RULE) -> list[float]:
    """Times where the conditions become jointly true (rising edges).

    After an accepted trigger, edges closer than ``rule.refractory_s`` are
    ignored so that logs never overlap in their post-trigger part.
    """
    mask = qualifying(trace, rule)
    prev = np.concatenate(([False], mask[:-1]))
    edges = np.flatnonzero(mask & ~prev)
    out: list[float] = []
    last = None
    for i in edges:
        t = float(trace.t[i])
        if last is not None and t - last < rule.refractory_s - 1e-9:
            continue
        out.append(t)
        last = t
    return out


@dataclass(frozen=True)
class LoggedSegment:
    trace: CanTrace
    trigger_index: int = PRE_TRIGGER_S * SAMPLE_RATE_HZ


def crop_log(trace: CanTrace, trigger_time: float) -> LoggedSegment:
    """Cut [trigger - 20 s, trigger + 45 s] and re-base time so the trigger is t=0."""
    try:
        k = trace.index_of(trigger_time)
    except IndexError:
        raise WindowOutOfBounds(f"trigger time {trigger_time} is not inside the trace") from None
    lo = k - PRE_TRIGGER_S * SAMPLE_RATE_HZ
    hi = k + POST_TRIGGER_S * SAMPLE_RATE_HZ
    if lo < 0 or hi >= len(trace):
        raise WindowOutOfBounds(
            f"log window [{trigger_time - PRE_TRIGGER_S:g}, {trigger_time + POST_TRIGGER_S:g}] s "
            f"does not fit in trace [{trace.t[0]:g}, {trace.t[-1]:g}] s"
        )
    seg = CanTrace(logged_time_axis(), trace.values[lo:hi + 1], truck_id=trace.truck_id,
                   file_id=trace.file_id, label=trace.label)
    assert len(seg) == LOGGED_SAMPLES
    return LoggedSegment(seg)


def as_segment(trace: CanTrace) -> LoggedSegment:
    """Wrap an already-logged trace (t spans exactly [-20, 45])."""
    if len(trace) != LOGGED_SAMPLES or abs(trace.t[0] + PRE_TRIGGER_S) > 1e-6:
        raise WindowOutOfBounds("trace is not a logged [-20, 45] s segment")
    return LoggedSegment(trace)
