"""Ground-truth curiosity from thin-slice crowd ratings, plus reliability stats.

Pipeline: drop raters who rate implausibly fast, pick the most reliable
rater subset per HIT by ICC(2,1), then resolve each slice to one label with
inverse-marginal-frequency weighting (counters label over/under-use).
"""
from __future__ import annotations

import itertools
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (DegenerateInput, EmptyCorpus, InsufficientPairs,
                     LengthMismatch, MissingProfile, TooFewRaters)
from .timeline import CuriositySeries, SliceGrid

LABELS = (0, 1, 2)
FAST_RATER_SD = 1.5
BIAS_EPS = 1e-6


@dataclass(frozen=True)
class Rating:
    rater_id: str
    label: int
    rating_time_s: float

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be in {LABELS}, got {self.label!r}")
        if not self.rating_time_s > 0:
            raise ValueError("rating_time_s must be positive")


@dataclass(frozen=True)
class RatingSet:
    """All ratings of one slice of one participant, within one HIT."""

    hit_id: str
    slice_index: int
    ratings: tuple[Rating, ...]
    participant_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "ratings", tuple(self.ratings))
        if not self.ratings:
            raise ValueError("a RatingSet needs at least one rating")

    @property
    def raters(self) -> tuple[str, ...]:
        return tuple(r.rater_id for r in self.ratings)

    def restricted_to(self, raters: Iterable[str]) -> "RatingSet":
        keep = set(raters)
        return RatingSet(self.hit_id, self.slice_index,
                         tuple(r for r in self.ratings if r.rater_id in keep),
                         self.participant_id)


@dataclass(frozen=True)
class RaterProfile:
    rater_id: str
    label_frequency: Mapping[int, float]
    mean_rating_time_s: float


@dataclass(frozen=True)
class ReliabilityReport:
    hit_id: str
    icc: float
    chosen_subset: tuple[str, ...]
    subset_icc: Mapping[tuple[str, ...], float] = field(default_factory=dict)

    @property
    def n_subsets_evaluated(self) -> int:
        return len(self.subset_icc)


@dataclass(frozen=True)
class AuditStats:
    percent_unchanged: float
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def fp_fn_ratio(self) -> float:
        # fn == 0 is reported as infinite, per the audit convention
        return math.inf if self.fn == 0 else self.fp / self.fn


def _rater_mean_times(sets: Sequence[RatingSet]) -> dict[str, float]:
    times = defaultdict(list)
    for s in sets:
        for r in s.ratings:
            times[r.rater_id].append(r.rating_time_s)
    return {k: float(np.mean(v)) for k, v in times.items()}


def filter_raters(sets: Sequence[RatingSet], n_sd: float = FAST_RATER_SD) -> list[RatingSet]:
    """Remove ratings of raters whose mean rating time is below mean - n_sd*SD.

    Mean and (population) SD are taken over per-rater mean times across the
    whole corpus. A set is never emptied: if every rater in it was removed,
    the slowest of them is kept.
    """
    if not sets:
        raise EmptyCorpus("no rating sets")
    mean_times = _rater_mean_times(sets)
    t = np.array(list(mean_times.values()))
    cutoff = t.mean() - n_sd * t.std()
    fast = {r for r, m in mean_times.items() if m < cutoff}
    out = []
    for s in sets:
        kept = [r for r in s.ratings if r.rater_id not in fast]
        if not kept:
            slowest = max(s.raters, key=lambda rid: (mean_times[rid], rid))
            kept = [r for r in s.ratings if r.rater_id == slowest]
        out.append(RatingSet(s.hit_id, s.slice_index, tuple(kept), s.participant_id))
    return out


def rater_profiles(sets: Sequence[RatingSet]) -> dict[str, RaterProfile]:
    counts: dict[str, Counter] = defaultdict(Counter)
    for s in sets:
        for r in s.ratings:
            counts[r.rater_id][r.label] += 1
    mean_times = _rater_mean_times(sets)
    profiles = {}
    for rid, c in counts.items():
        total = sum(c.values())
        freq = {lab: c[lab] / total for lab in LABELS}
        profiles[rid] = RaterProfile(rid, freq, mean_times[rid])
    return profiles


def icc(matrix) -> float:
    """ICC(2,1): two-way random effects, absolute agreement, single measure.

    ``matrix`` is items x raters with no missing cells.
    """
    x = np.asarray(matrix, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise DegenerateInput("icc needs at least 2 items and 2 raters")
    if np.isnan(x).any():
        raise DegenerateInput("icc does not accept missing cells")
    n, k = x.shape
    grand = x.mean()
    row_means = x.mean(axis=1)
    col_means = x.mean(axis=0)
    ss_rows = k * np.sum((row_means - grand) ** 2)
    ss_cols = n * np.sum((col_means - grand) ** 2)
    if ss_rows == 0 and ss_cols == 0:
        raise DegenerateInput("no between-item or between-rater variance; ICC undefined")
    if (x == x[:, :1]).all():
        return 1.0
    ss_err = np.sum((x - row_means[:, None] - col_means[None, :] + grand) ** 2)
    ms_rows = ss_rows / (n - 1)
    ms_cols = ss_cols / (k - 1)
    ms_err = ss_err / ((n - 1) * (k - 1))
    denom = ms_rows + (k - 1) * ms_err + k * (ms_cols - ms_err) / n
    if denom == 0:
        raise DegenerateInput("ICC denominator is zero")
    return float((ms_rows - ms_err) / denom)


def _hit_matrix(hit_sets: Sequence[RatingSet], raters: Sequence[str]) -> np.ndarray:
    """Items x raters matrix restricted to items every rater in ``raters`` rated."""
    rows = []
    for s in hit_sets:
        by_rater = {r.rater_id: r.label for r in s.ratings}
        if all(rid in by_rater for rid in raters):
            rows.append([by_rater[rid] for rid in raters])
    return np.array(rows, dtype=float).reshape(-1, len(raters))


def select_subset(hit_sets: Sequence[RatingSet]) -> ReliabilityReport:
    """Choose the rater subset (size >= 2) with the highest ICC over a HIT.

    ``hit_sets`` are all the slices of one HIT. Ties go to the larger subset,
    then to the lexicographically smallest sorted rater ids. Subsets whose
    ICC is undefined are skipped; if none is defined the full set is
    returned with NaN ICC.
    """
    if not hit_sets:
        raise EmptyCorpus("empty HIT")
    raters = sorted({rid for s in hit_sets for rid in s.raters})
    if len(raters) < 2:
        raise TooFewRaters(f"HIT {hit_sets[0].hit_id} has {len(raters)} rater(s)")
    scores: dict[tuple[str, ...], float] = {}
    for size in range(2, len(raters) + 1):
        for subset in itertools.combinations(raters, size):
            m = _hit_matrix(hit_sets, subset)
            try:
                scores[subset] = icc(m)
            except DegenerateInput:
                scores[subset] = math.nan
    defined = {s: v for s, v in scores.items() if not math.isnan(v)}
    if not defined:
        return ReliabilityReport(hit_sets[0].hit_id, math.nan, tuple(raters), scores)
    best = min(defined, key=lambda s: (-defined[s], -len(s), s))
    return ReliabilityReport(hit_sets[0].hit_id, defined[best], best, scores)


def bias_corrected_label(rating_set: RatingSet, profiles: Mapping[str, RaterProfile],
                         eps: float = BIAS_EPS) -> int:
    """Label with the largest sum of inverse rater-label frequencies.

    A rater who rarely uses a label gets more weight when they do use it.
    Ties resolve to the higher label.
    """
    weight = dict.fromkeys(LABELS, 0.0)
    for r in rating_set.ratings:
        try:
            freq = profiles[r.rater_id].label_frequency[r.label]
        except KeyError:
            raise MissingProfile(r.rater_id) from None
        weight[r.label] += 1.0 / max(freq, eps)
    return max(LABELS, key=lambda lab: (weight[lab], lab))


def krippendorff_alpha(labels) -> float:
    """Nominal Krippendorff's alpha; ``labels`` is items x raters, NaN = missing."""
    x = np.asarray(labels, dtype=float)
    if x.ndim != 2:
        raise ValueError("labels must be a 2-D items x raters array")
    values = np.unique(x[~np.isnan(x)])
    index = {v: i for i, v in enumerate(values)}
    coincidence = np.zeros((len(values), len(values)))
    for row in x:
        present = row[~np.isnan(row)]
        m = len(present)
        if m < 2:
            continue
        counts = np.zeros(len(values))
        for v in present:
            counts[index[v]] += 1
        pairs = np.outer(counts, counts) - np.diag(counts)
        coincidence += pairs / (m - 1)
    n = coincidence.sum()
    if n == 0:
        raise InsufficientPairs("no item has two or more ratings")
    n_c = coincidence.sum(axis=1)
    observed = n - np.trace(coincidence)
    expected = (n * n - np.sum(n_c ** 2)) / (n - 1)
    if expected == 0:
        # a single category used throughout: agreement is perfect
        return 1.0
    return float(1.0 - observed / expected)


def audit_machine_labels(machine: Sequence[int], human: Sequence[int]) -> AuditStats:
    """Compare machine labels with human-corrected labels (binary)."""
    m = np.asarray(machine, dtype=int)
    h = np.asarray(human, dtype=int)
    if m.shape != h.shape:
        raise LengthMismatch(f"{len(m)} machine vs {len(h)} human labels")
    if not (np.isin(m, (0, 1)).all() and np.isin(h, (0, 1)).all()):
        raise ValueError("audit labels must be binary")
    pct = 100.0 * float(np.mean(m == h)) if len(m) else 100.0
    return AuditStats(
        percent_unchanged=pct,
        tp=int(np.sum((m == 1) & (h == 1))),
        tn=int(np.sum((m == 0) & (h == 0))),
        fp=int(np.sum((m == 1) & (h == 0))),
        fn=int(np.sum((m == 0) & (h == 1))),
    )


def summarize_audits(stats: Iterable[AuditStats]) -> dict[str, float]:
    """Mean/SD of percent-unchanged and of finite FP/FN ratios across categories."""
    stats = list(stats)
    pct = np.array([s.percent_unchanged for s in stats])
    ratios = np.array([s.fp_fn_ratio for s in stats if math.isfinite(s.fp_fn_ratio)])
    nan = math.nan
    return {
        "percent_unchanged_mean": float(pct.mean()) if len(pct) else nan,
        "percent_unchanged_sd": float(pct.std(ddof=1)) if len(pct) > 1 else nan,
        "fp_fn_ratio_mean": float(ratios.mean()) if len(ratios) else nan,
        "fp_fn_ratio_sd": float(ratios.std(ddof=1)) if len(ratios) > 1 else nan,
    }


@dataclass
class GroundTruth:
    series: dict[str, CuriositySeries]
    reports: list[ReliabilityReport]
    profiles: dict[str, RaterProfile]

    @property
    def mean_icc(self) -> float:
        vals = [r.icc for r in self.reports if not math.isnan(r.icc)]
        return float(np.mean(vals)) if vals else math.nan


def ground_truth(sets: Sequence[RatingSet], slice_width: float = 10.0) -> GroundTruth:
    """Full aggregation: rater filter, per-HIT subset choice, bias-corrected label.

    Slices nobody rated are filled from the previous rated slice of the same
    participant (or the next one at the start), since the curiosity series
    must be complete.
    """
    filtered = filter_raters(sets)
    profiles = rater_profiles(filtered)
    by_hit: dict[str, list[RatingSet]] = defaultdict(list)
    for s in filtered:
        by_hit[s.hit_id].append(s)

    reports = []
    labels: dict[str, dict[int, int]] = defaultdict(dict)
    for hit_id in sorted(by_hit):
        hit_sets = by_hit[hit_id]
        n_raters = len({rid for s in hit_sets for rid in s.raters})
        if n_raters >= 2:
            report = select_subset(hit_sets)
            reports.append(report)
            chosen = report.chosen_subset
        else:
            chosen = tuple({rid for s in hit_sets for rid in s.raters})
        for s in hit_sets:
            sub = s.restricted_to(chosen)
            if not sub.ratings:
                sub = s
            labels[s.participant_id][s.slice_index] = bias_corrected_label(sub, profiles)

    series = {}
    for pid, by_slice in sorted(labels.items()):
        n = max(by_slice) + 1
        filled = _fill_gaps([by_slice.get(k) for k in range(n)])
        series[pid] = CuriositySeries(pid, filled, SliceGrid(n, slice_width))
    return GroundTruth(series, reports, profiles)


def _fill_gaps(values: list) -> list[int]:
    first = next(v for v in values if v is not None)
    out, last = [], first
    for v in values:
        last = v if v is not None else last
        out.append(last)
    return out
