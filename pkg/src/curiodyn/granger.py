"""Conditional Granger causality between behaviour and curiosity-transition series.

The strength of a link ``from -> to | cond`` is the classical log ratio of
the residual variance of ``to`` regressed on its own lags and the lags of
``cond`` (restricted) to the same regression with the lags of ``from``
added (full). Significance comes from the F-test of the nested regressions.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import SingularDesign, TooShort
from .timeline import BehaviorSeries, SliceGrid, align

P_MAX = 5
LEVEL = 0.01
DIRECTIONS = (("inter", "to_curiosity"), ("inter", "from_curiosity"),
              ("intra", "to_curiosity"), ("intra", "from_curiosity"))


@dataclass(frozen=True)
class VarModel:
    order: int
    coefs: np.ndarray       # (p, k, k); coefs[l][i, j]: lag l+1 of j on i
    intercept: np.ndarray   # (k,)
    sigma: np.ndarray       # (k, k) residual covariance (ML, divided by T_eff)
    channels: tuple[str, ...]
    n_obs: int


@dataclass(frozen=True)
class GrangerResult:
    source: str
    target: str
    conditioned_on: tuple[str, ...]
    g_value: float
    p_value: float
    level: float = LEVEL
    standardized_strength: float = math.nan
    direction: str = ""
    order: int = 1

    @property
    def significant(self) -> bool:
        return self.p_value < self.level


def _lagged(x: np.ndarray, p: int, start: int) -> np.ndarray:
    """Columns [x_{t-1}, ..., x_{t-p}] for t = start..T-1."""
    T = x.shape[0]
    return np.hstack([x[start - lag:T - lag] for lag in range(1, p + 1)])


def _ols(X: np.ndarray, Y: np.ndarray):
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise SingularDesign("design matrix is rank deficient")
    beta, *_ = np.linalg.lstsq(X, Y, rcond=None)
    return beta, Y - X @ beta


def _as_matrix(series) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if np.isnan(x).any():
        raise ValueError("series contain missing values")
    return x


def _fit_order(x: np.ndarray, p: int, start: int):
    T, k = x.shape
    Y = x[start:]
    X = np.hstack([np.ones((T - start, 1)), _lagged(x, p, start)])
    beta, resid = _ols(X, Y)
    return beta, resid


def select_order(series, p_max: int = P_MAX) -> int:
    """Lag order in 1..p_max minimising BIC on a common estimation sample."""
    x = _as_matrix(series)
    T, k = x.shape
    p_max = min(p_max, (T - 2) // (k + 1))
    if p_max < 1:
        raise TooShort(f"T={T} too short for a VAR on {k} channels")
    n = T - p_max
    best, best_bic = 1, math.inf
    for p in range(1, p_max + 1):
        _, resid = _fit_order(x, p, p_max)
        sigma = resid.T @ resid / n
        sign, logdet = np.linalg.slogdet(sigma)
        if sign <= 0:
            raise SingularDesign("singular residual covariance")
        bic = logdet + math.log(n) * p * k * k / n
        if bic < best_bic - 1e-12:
            best, best_bic = p, bic
    return best


def fit_var(series, p: int | str = "auto", p_max: int = P_MAX,
            channels: Sequence[str] | None = None) -> VarModel:
    """Least-squares VAR(p) with intercept; ``series`` is time x channels."""
    x = _as_matrix(series)
    T, k = x.shape
    if p == "auto":
        p = select_order(x, p_max)
    p = int(p)
    if p < 1:
        raise ValueError("VAR order must be >= 1")
    if T <= k * p + 1:
        raise TooShort(f"T={T} must exceed channels*p+1={k * p + 1}")
    beta, resid = _fit_order(x, p, p)
    coefs = beta[1:].reshape(p, k, k).transpose(0, 2, 1)
    names = tuple(channels) if channels else tuple(str(i) for i in range(k))
    return VarModel(p, coefs, beta[0], resid.T @ resid / (T - p), names, T - p)


def conditional_granger(series: Mapping[str, np.ndarray] | np.ndarray, source, target,
                        conditioning: Sequence = (), level: float = LEVEL,
                        p: int | str = "auto", p_max: int = P_MAX) -> GrangerResult:
    """Test ``source -> target`` given the past of ``conditioning``.

    ``series`` maps channel names to equal-length 1-D arrays (or is a
    time x channel array indexed by column). With ``p="auto"`` the lag order
    is chosen by BIC on the joint VAR of all involved channels.
    """
    if source == target:
        raise ValueError("source and target must differ")
    conditioning = tuple(conditioning)
    if source in conditioning or target in conditioning:
        raise ValueError("source/target cannot be in the conditioning set")

    def col(name):
        return np.asarray(series[name] if isinstance(series, Mapping) else series[:, name], float)

    tgt, src = col(target), col(source)
    cond = np.column_stack([col(c) for c in conditioning]) if conditioning else np.zeros((len(tgt), 0))
    joint = np.column_stack([tgt, cond, src])
    if np.isnan(joint).any():
        raise ValueError("series contain missing values")
    T = joint.shape[0]
    if p == "auto":
        p = select_order(joint, p_max)
    p = int(p)
    k = joint.shape[1]
    if T <= k * p + 1:
        raise TooShort(f"T={T} must exceed channels*p+1={k * p + 1}")

    y = tgt[p:]
    ones = np.ones((T - p, 1))
    X_r = np.hstack([ones, _lagged(joint[:, :-1], p, p)])
    X_f = np.hstack([X_r, _lagged(joint[:, -1:], p, p)])
    _, res_r = _ols(X_r, y)
    _, res_f = _ols(X_f, y)
    rss_r, rss_f = float(res_r @ res_r), float(res_f @ res_f)
    if rss_f <= 0:
        raise SingularDesign("target is perfectly predicted")
    dof = (T - p) - X_f.shape[1]
    F = ((rss_r - rss_f) / p) / (rss_f / dof)
    return GrangerResult(
        source=str(source), target=str(target), conditioned_on=tuple(map(str, conditioning)),
        g_value=math.log(rss_r / rss_f), p_value=float(stats.f.sf(F, p, dof)),
        level=level, order=p)


def standardize(results: Sequence[GrangerResult]) -> list[GrangerResult]:
    """Divide each g-value by the batch maximum (negative round-off clipped to 0)."""
    if not results:
        return []
    top = max(r.g_value for r in results)
    return [replace(r, standardized_strength=(max(r.g_value, 0.0) / top if top > 0 else 0.0))
            for r in results]


def _is_constant(x: np.ndarray) -> bool:
    return bool(np.nanmax(x) == np.nanmin(x))


def causality_table(behaviors: Iterable[BehaviorSeries],
                    transitions: Iterable[BehaviorSeries],
                    groups: Mapping[str, str],
                    directions: Sequence[tuple[str, str]] | tuple[str, str] = DIRECTIONS,
                    level: float = LEVEL, granularity_s: float = 60.0,
                    p: int | str = "auto", p_max: int = P_MAX) -> list[GrangerResult]:
    """Significant behaviour <-> curiosity-transition links over the four quadrants.

    ``groups`` maps participant id to group id. Series are first aggregated
    to ``granularity_s`` (max for binary, mean for real channels). For each
    quadrant:

    * inter/to_curiosity:  other's behaviour -> own transitions | own same behaviour
    * inter/from_curiosity: other's transitions -> own behaviour | own transitions
    * intra/to_curiosity:  own behaviour -> own transitions | others' same behaviour
    * intra/from_curiosity: own transitions -> own behaviour | others' transitions

    Strength is standardised over all significant links returned by this
    call; results are sorted by strength, strongest first. Links whose
    series are constant or too short are skipped.
    """
    if directions and isinstance(directions[0], str):
        directions = (tuple(directions),)
    beh = {}
    for s in behaviors:
        beh[(s.participant, s.behavior.value)] = _coarse(s, granularity_s)
    trans = {s.participant: _coarse(s, granularity_s) for s in transitions}
    kinds = sorted({b for _, b in beh})

    found = []
    for who in sorted(trans):
        mates = sorted(q for q in trans if q != who and groups.get(q) == groups.get(who))
        for kind, (scope, way) in itertools.product(kinds, directions):
            if (who, kind) not in beh:
                continue
            own_b, own_t = f"{who}:{kind}", f"{who}:transition"
            if scope == "inter":
                for other in mates:
                    if (other, kind) not in beh:
                        continue
                    oth_b, oth_t = f"{other}:{kind}", f"{other}:transition"
                    if way == "to_curiosity":
                        link = (oth_b, own_t, [own_b])
                    else:
                        link = (oth_t, own_b, [own_t])
                    found.append(((scope, way), link))
            else:
                others = [m for m in mates if (m, kind) in beh]
                if way == "to_curiosity":
                    link = (own_b, own_t, [f"{m}:{kind}" for m in others])
                else:
                    link = (own_t, own_b, [f"{m}:transition" for m in mates])
                found.append(((scope, way), link))

    lookup = {f"{w}:{k}": v for (w, k), v in beh.items()}
    lookup.update({f"{w}:transition": v for w, v in trans.items()})
    results = []
    for (scope, way), (src, tgt, cond) in found:
        arrays = _complete_rows({n: lookup[n] for n in [src, tgt, *cond]})
        if arrays is None or _is_constant(arrays[src]) or _is_constant(arrays[tgt]):
            continue
        cond = [c for c in cond if not _is_constant(arrays[c])]
        try:
            r = conditional_granger(arrays, src, tgt, cond, level=level, p=p, p_max=p_max)
        except (SingularDesign, TooShort):
            continue
        if r.significant:
            results.append(replace(r, direction=f"{scope}/{way}"))
    return sorted(standardize(results),
                  key=lambda r: (-r.standardized_strength, r.direction, r.source, r.target))


def _coarse(s: BehaviorSeries, width_s: float) -> np.ndarray:
    if s.grid.slice_width == width_s:
        return np.asarray(s.values)
    ratio = int(round(width_s / s.grid.slice_width))
    target = SliceGrid(-(-s.grid.n_slices // ratio), width_s, s.grid.origin)
    return np.asarray(align(s, target).values)


def _complete_rows(arrays: dict[str, np.ndarray]) -> dict[str, np.ndarray] | None:
    """Longest stretch of consecutive time points with every channel observed."""
    n = min(len(v) for v in arrays.values())
    stacked = np.column_stack([v[:n] for v in arrays.values()])
    ok = ~np.isnan(stacked).any(axis=1)
    best, run_start = (0, 0), None
    for t, flag in enumerate(np.append(ok, False)):
        if flag and run_start is None:
            run_start = t
        elif not flag and run_start is not None:
            if t - run_start > best[1] - best[0]:
                best = (run_start, t)
            run_start = None
    lo, hi = best
    if hi - lo < 4:
        return None
    return {k: stacked[lo:hi, i] for i, k in enumerate(arrays)}


def table_csv(results: Sequence[GrangerResult]) -> str:
    """CSV with columns direction, from, to, standardized_strength, p_value."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["direction", "from", "to", "standardized_strength", "p_value"])
    for r in results:
        w.writerow([r.direction, r.source, r.target,
                    f"{r.standardized_strength:.6f}", f"{r.p_value:.6g}"])
    return buf.getvalue()
