"""Per-slice affect labels and head-motion variance from per-frame face tracking."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .timeline import (AFFECT_BEHAVIORS, Behavior, BehaviorSeries, SliceGrid)

AUS = ("AU1", "AU2", "AU4", "AU5", "AU6", "AU7", "AU12", "AU15",
       "AU23", "AU25", "AU26", "AU45")
CONFIDENCE_GATE = 0.80
INTENSITY_ACTIVE = 1.0

HEAD_CHANNELS = {"pitch": Behavior.HEAD_NOD, "yaw": Behavior.HEAD_TURN,
                 "roll": Behavior.HEAD_TILT}


@dataclass(frozen=True)
class FrameObservation:
    participant: str
    timestamp_ms: int
    au_active: frozenset = field(default_factory=frozenset)
    pitch: float = 0.0
    yaw: float = 0.0
    roll: float = 0.0
    confidence: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "au_active", frozenset(self.au_active))
        unknown = self.au_active - set(AUS)
        if unknown:
            raise ValueError(f"unknown action units: {sorted(unknown)}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be in [0, 1]")
        if not all(math.isfinite(a) for a in (self.pitch, self.yaw, self.roll)):
            raise ValueError("head angles must be finite")


@dataclass(frozen=True)
class AffectRule:
    name: str
    required: frozenset
    forbidden: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "required", frozenset(self.required))
        object.__setattr__(self, "forbidden", frozenset(self.forbidden))
        if self.required & self.forbidden:
            raise ValueError(f"{self.name}: an AU cannot be both required and forbidden")

    def matches(self, active: frozenset) -> bool:
        return self.required <= active and not (self.forbidden & active)


# Most specific first: joy's preconditions are a subset of delight's.
DEFAULT_RULES = (
    AffectRule("delight", {"AU7", "AU12", "AU25", "AU26"}, {"AU45"}),
    AffectRule("surprise", {"AU1", "AU2", "AU5", "AU26"}),
    AffectRule("confusion", {"AU4", "AU7"}, {"AU12"}),
    AffectRule("flow", {"AU23", "AU5", "AU7"}, {"AU15", "AU45", "AU2"}),
    AffectRule("joy", {"AU6", "AU12"}),
)


def active_from_intensity(intensities: dict[str, float],
                          threshold: float = INTENSITY_ACTIVE) -> frozenset:
    """AU set active at ``intensity >= threshold``; 0/1 inputs pass through."""
    return frozenset(au for au, v in intensities.items() if v >= threshold)


def confidence_gate(frames: Iterable[FrameObservation],
                    threshold: float = CONFIDENCE_GATE) -> list[FrameObservation]:
    """Keep frames tracked with confidence strictly above ``threshold``."""
    return [f for f in frames if f.confidence > threshold]


def classify_affect(frame: FrameObservation,
                    rules: Sequence[AffectRule] = DEFAULT_RULES) -> str | None:
    for rule in rules:
        if rule.matches(frame.au_active):
            return rule.name
    return None


def dominant_affect(frames: Iterable[FrameObservation],
                    rules: Sequence[AffectRule] = DEFAULT_RULES) -> str | None:
    """Most frequent expressed affect; unmatched frames do not compete."""
    counts = Counter(classify_affect(f, rules) for f in frames)
    counts.pop(None, None)
    if not counts:
        return None
    priority = {r.name: i for i, r in enumerate(rules)}
    return min(counts, key=lambda lab: (-counts[lab], priority[lab]))


def head_variance(frames: Sequence[FrameObservation], channel: str) -> float:
    """Population variance of one head angle; 0 with fewer than two frames."""
    if channel not in HEAD_CHANNELS:
        raise ValueError(f"channel must be one of {sorted(HEAD_CHANNELS)}")
    if len(frames) < 2:
        return 0.0
    return float(np.var([getattr(f, channel) for f in frames]))


def slice_features(frames: Sequence[FrameObservation], participant: str,
                   grid: SliceGrid,
                   rules: Sequence[AffectRule] = DEFAULT_RULES) -> list[BehaviorSeries]:
    """Affect indicators and head variances per slice for one participant.

    Slices with no frame surviving the confidence gate are NaN (missing).
    """
    kept = [f for f in confidence_gate(frames) if f.participant == participant]
    buckets: list[list[FrameObservation]] = [[] for _ in range(grid.n_slices)]
    if kept:
        idx = grid.index_of([f.timestamp_ms for f in kept])
        for f, k in zip(kept, idx):
            if k >= 0:
                buckets[k].append(f)

    affect = {b: np.full(grid.n_slices, np.nan) for b in AFFECT_BEHAVIORS}
    head = {b: np.full(grid.n_slices, np.nan) for b in HEAD_CHANNELS.values()}
    for k, bucket in enumerate(buckets):
        if not bucket:
            continue
        label = dominant_affect(bucket, rules)
        for b in AFFECT_BEHAVIORS:
            affect[b][k] = 1.0 if b.value == label else 0.0
        for channel, b in HEAD_CHANNELS.items():
            head[b][k] = head_variance(bucket, channel)

    return ([BehaviorSeries(participant, b, v, grid) for b, v in affect.items()]
            + [BehaviorSeries(participant, b, v, grid) for b, v in head.items()])
