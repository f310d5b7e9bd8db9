"""Floor-exchange turns and weighted in/out-degree metrics per slice.

Speakers are nodes; a handover from one speaker to the next distinct
speaker is an edge weighted by how long the first speaker held the floor.
Per participant and slice:

* indegree  = activity**(1 - a_in)  * silence**a_in,       a_in  = -0.5
* outdegree = participation**(1 - a_out) * talkativeness**a_out, a_out = +0.5
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import OverlapWithinSpeaker
from .timeline import Behavior, BehaviorSeries, SliceGrid

ALPHA_IN = -0.5
ALPHA_OUT = 0.5
MERGE_GAP_MS = 300
EPS_S = 1e-3


@dataclass(frozen=True)
class TurnRecord:
    speaker: str
    start: int
    end: int
    next_speaker: str | None = None
    gap_to_next_s: float = 0.0

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError("turn end must be after start")
        if self.gap_to_next_s < 0:
            raise ValueError("gap_to_next_s must be non-negative")

    @property
    def duration_s(self) -> float:
        return (self.end - self.start) / 1000.0


@dataclass(frozen=True)
class TurnMetrics:
    activity: float
    silence: float
    participation_equality: float
    talkativeness: float

    @property
    def indegree(self) -> float:
        return weighted_degree(self.activity, self.silence, ALPHA_IN)

    @property
    def outdegree(self) -> float:
        return weighted_degree(self.participation_equality, self.talkativeness, ALPHA_OUT)


def weighted_degree(count: float, weight: float, alpha: float, eps: float = EPS_S) -> float:
    """``count**(1-alpha) * weight**alpha``; zero count gives 0, weight floored at eps."""
    if count <= 0:
        return 0.0
    return float(count ** (1.0 - alpha) * max(weight, eps) ** alpha)


def segment_turns(speech: Iterable[tuple[str, int, int]],
                  merge_gap_ms: int = MERGE_GAP_MS) -> list[TurnRecord]:
    """Merge each speaker's intervals closer than ``merge_gap_ms`` into turns."""
    per_speaker: dict[str, list[tuple[int, int]]] = defaultdict(list)
    for who, start, end in speech:
        per_speaker[who].append((int(start), int(end)))

    merged = []
    for who, intervals in per_speaker.items():
        intervals.sort()
        cur_start, cur_end = intervals[0]
        for start, end in intervals[1:]:
            if start < cur_end:
                raise OverlapWithinSpeaker(
                    f"{who}: [{start}, {end}] overlaps [{cur_start}, {cur_end}]")
            if start - cur_end < merge_gap_ms:
                cur_end = end
            else:
                merged.append((cur_start, cur_end, who))
                cur_start, cur_end = start, end
        merged.append((cur_start, cur_end, who))
    merged.sort(key=lambda t: (t[0], t[2]))

    turns = []
    for i, (start, end, who) in enumerate(merged):
        nxt = next((m for m in merged[i + 1:] if m[2] != who), None)
        if nxt is None:
            turns.append(TurnRecord(who, start, end))
        else:
            turns.append(TurnRecord(who, start, end, nxt[2], max(0, nxt[0] - end) / 1000.0))
    return turns


def turn_metrics(turns: Sequence[TurnRecord], participant: str,
                 window: tuple[int, int]) -> TurnMetrics:
    """Components for ``participant`` over turns starting in ``[t0, t1)`` ms."""
    t0, t1 = window
    in_slice = [t for t in turns if t0 <= t.start < t1]
    to_me = [t for t in in_slice if t.speaker != participant and t.next_speaker == participant]
    mine = [t for t in in_slice if t.speaker == participant and t.next_speaker is not None]
    return TurnMetrics(
        activity=float(len({t.speaker for t in to_me})),
        silence=sum(t.duration_s for t in to_me),
        participation_equality=float(len({t.next_speaker for t in mine})),
        talkativeness=sum(t.duration_s for t in mine),
    )


def turn_metric_series(turns: Sequence[TurnRecord], participants: Iterable[str],
                       grid: SliceGrid) -> list[BehaviorSeries]:
    out = []
    for p in participants:
        indeg = np.zeros(grid.n_slices)
        outdeg = np.zeros(grid.n_slices)
        for k in range(grid.n_slices):
            m = turn_metrics(turns, p, grid.bounds(k))
            indeg[k], outdeg[k] = m.indegree, m.outdegree
        out.append(BehaviorSeries(p, Behavior.TURN_INDEGREE, indeg, grid))
        out.append(BehaviorSeries(p, Behavior.TURN_OUTDEGREE, outdeg, grid))
    return out
