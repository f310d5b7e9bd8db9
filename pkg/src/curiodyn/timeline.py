"""Participants, slice grids and time-aligned per-participant series.

Timestamps are integer milliseconds. Slice ``k`` of a grid covers the
half-open interval ``[origin + k*width, origin + (k+1)*width)``. Missing
slices are stored as NaN, never as zero, since zero is a real value for
binary behaviours.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import IncompatibleGrid, TooShort


class Behavior(str, Enum):
    """Behaviour channels carried by a :class:`BehaviorSeries`."""

    # verbal (pre-annotated; polarity variants kept as separate channels)
    UNCERTAINTY = "uncertainty"
    ARGUMENT = "argument"
    JUSTIFICATION = "justification"
    SUGGESTION = "suggestion"
    AGREEMENT = "agreement"
    QUESTION_ON_TASK = "question_asking_on_task"
    QUESTION_SOCIAL = "question_asking_social"
    IDEA_VERBALIZATION = "idea_verbalization"
    SHARING_FINDINGS = "sharing_findings"
    HYPOTHESIS_GENERATION = "hypothesis_generation"
    TASK_SENTIMENT_POSITIVE = "task_sentiment_positive"
    TASK_SENTIMENT_NEGATIVE = "task_sentiment_negative"
    EVALUATION_POSITIVE = "evaluation_positive"
    EVALUATION_NEGATIVE = "evaluation_negative"
    # facial affect (dominant expression per slice)
    JOY = "joy"
    DELIGHT = "delight"
    SURPRISE = "surprise"
    CONFUSION = "confusion"
    FLOW = "flow"
    # head motion variance
    HEAD_NOD = "head_nod"
    HEAD_TURN = "head_turn"
    HEAD_TILT = "lateral_head_inclination"
    # turn taking
    TURN_INDEGREE = "turn_taking_indegree"
    TURN_OUTDEGREE = "turn_taking_outdegree"
    # derived from ground-truth curiosity
    CURIOSITY_INCREASE_MAINTAIN = "curiosity_increase_maintain"

    @property
    def binary(self) -> bool:
        return self not in _REAL_VALUED


_REAL_VALUED = frozenset(
    {Behavior.HEAD_NOD, Behavior.HEAD_TURN, Behavior.HEAD_TILT,
     Behavior.TURN_INDEGREE, Behavior.TURN_OUTDEGREE}
)

VERBAL_BEHAVIORS = tuple(Behavior)[:14]
AFFECT_BEHAVIORS = (Behavior.JOY, Behavior.DELIGHT, Behavior.SURPRISE,
                    Behavior.CONFUSION, Behavior.FLOW)
HEAD_BEHAVIORS = (Behavior.HEAD_NOD, Behavior.HEAD_TURN, Behavior.HEAD_TILT)
TURN_BEHAVIORS = (Behavior.TURN_INDEGREE, Behavior.TURN_OUTDEGREE)


@dataclass(frozen=True)
class Participant:
    id: str
    group_id: str


@dataclass(frozen=True)
class SliceGrid:
    """Fixed-width slices; ``slice_width`` in seconds, ``origin`` in ms."""

    n_slices: int
    slice_width: float = 10.0
    origin: int = 0

    def __post_init__(self):
        if self.slice_width <= 0:
            raise ValueError("slice_width must be positive")
        if self.n_slices < 0:
            raise ValueError("n_slices must be non-negative")
        if self.width_ms != self.slice_width * 1000:
            raise ValueError("slice_width must be a whole number of milliseconds")

    @property
    def width_ms(self) -> int:
        return int(round(self.slice_width * 1000))

    def bounds(self, k: int) -> tuple[int, int]:
        start = self.origin + k * self.width_ms
        return start, start + self.width_ms

    def index_of(self, t_ms) -> np.ndarray:
        """Slice index of each timestamp; -1 outside the grid."""
        t = np.asarray(t_ms, dtype=np.int64)
        k = np.floor_divide(t - self.origin, self.width_ms)
        return np.where((t >= self.origin) & (k < self.n_slices), k, -1)

    def starts_s(self) -> np.ndarray:
        """Slice start times in seconds relative to the origin."""
        return np.arange(self.n_slices) * self.slice_width

    @classmethod
    def covering(cls, end_ms: int, slice_width: float = 10.0, origin: int = 0):
        """Smallest grid starting at ``origin`` that contains ``end_ms``."""
        width_ms = int(round(slice_width * 1000))
        n = max(0, -(-(int(end_ms) - origin) // width_ms))
        return cls(n_slices=n, slice_width=slice_width, origin=origin)


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BehaviorSeries:
    participant: str
    behavior: Behavior
    values: np.ndarray
    grid: SliceGrid

    def __post_init__(self):
        object.__setattr__(self, "behavior", Behavior(self.behavior))
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values.ndim != 1 or len(self.values) != self.grid.n_slices:
            raise ValueError(
                f"expected {self.grid.n_slices} values, got shape {self.values.shape}")
        present = self.values[~np.isnan(self.values)]
        if self.behavior.binary and not np.isin(present, (0.0, 1.0)).all():
            raise ValueError(f"{self.behavior.value} is binary; values must be 0/1")
        if not self.behavior.binary and (present < 0).any():
            raise ValueError(f"{self.behavior.value} must be non-negative")

    @property
    def name(self) -> str:
        return f"{self.participant}:{self.behavior.value}"


@dataclass(frozen=True)
class CuriositySeries:
    participant: str
    ratings: np.ndarray
    grid: SliceGrid = field(default=None)

    def __post_init__(self):
        ratings = _frozen(self.ratings, dtype=np.int64)
        object.__setattr__(self, "ratings", ratings)
        if self.grid is None:
            object.__setattr__(self, "grid", SliceGrid(n_slices=len(ratings)))
        if len(ratings) != self.grid.n_slices:
            raise ValueError("ratings length must equal grid.n_slices")
        if not np.isin(ratings, (0, 1, 2)).all():
            raise ValueError("curiosity ratings must be in {0, 1, 2}")


def align(series: BehaviorSeries, target: SliceGrid) -> BehaviorSeries:
    """Resample ``series`` onto a coarser grid sharing its origin.

    Binary channels aggregate by max, real channels by mean; NaN slices are
    ignored and a target slice with no observed source slice stays NaN.
    """
    src = series.grid
    if src == target:
        return series
    ratio = target.width_ms / src.width_ms
    if src.origin != target.origin or ratio != int(ratio):
        raise IncompatibleGrid(
            f"cannot align width {src.slice_width}s/origin {src.origin} "
            f"onto width {target.slice_width}s/origin {target.origin}")
    ratio = int(ratio)
    padded = np.full(target.n_slices * ratio, np.nan)
    n = min(len(padded), src.n_slices)
    padded[:n] = series.values[:n]
    blocks = padded.reshape(target.n_slices, ratio)
    observed = ~np.isnan(blocks).all(axis=1)
    out = np.full(target.n_slices, np.nan)
    if observed.any():
        reduce = np.nanmax if series.behavior.binary else np.nanmean
        out[observed] = reduce(blocks[observed], axis=1)
    return BehaviorSeries(series.participant, series.behavior, out, target)


# increase (0->1, 0->2, 1->2) or maintenance (1->1, 2->2); 0->0 is neither
_RISE_OR_HOLD = frozenset({(0, 1), (0, 2), (1, 2), (1, 1), (2, 2)})


def to_transition_series(c: CuriositySeries) -> BehaviorSeries:
    """Binary series marking curiosity increase or maintenance.

    Element ``t`` describes the move from slice ``t`` to ``t+1`` and is placed
    on slice ``t`` of a grid with the same origin and one slice fewer.
    Note that staying at 0 (0->0) is *not* maintenance and maps to 0.
    """
    r = c.ratings
    if len(r) < 2:
        raise TooShort("need at least 2 slices to form transitions")
    values = [1.0 if (int(a), int(b)) in _RISE_OR_HOLD else 0.0
              for a, b in zip(r[:-1], r[1:])]
    grid = SliceGrid(len(values), c.grid.slice_width, c.grid.origin)
    return BehaviorSeries(c.participant, Behavior.CURIOSITY_INCREASE_MAINTAIN,
                          values, grid)
