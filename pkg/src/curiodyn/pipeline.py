"""End-to-end pipeline: ingest CSVs, run the enabled stages, write reports.

Stages run in the fixed order annotate -> features -> turntaking -> ctsem ->
granger. A later stage computes what it needs from earlier ones even when
they are not enabled; only enabled stages write their outputs. Everything
is ingested and validated before any file is written.
"""
from __future__ import annotations

import hashlib
import json
import logging
import platform
import sys
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import io as cio
from .annotation import ground_truth, rater_profiles
from .ctsem import CtsemDataset, CtsemModelSpec, ParticipantData, compare_models, fit
from .errors import ConfigError, CuriodynError, IngestionError
from .granger import causality_table, table_csv
from .nonverbal import slice_features
from .timeline import Behavior, BehaviorSeries, SliceGrid, to_transition_series
from .turntaking import segment_turns, turn_metric_series, turn_metrics

logger = logging.getLogger(__name__)

STAGES = ("annotate", "features", "turntaking", "ctsem", "granger")
INPUTS = ("ratings", "frames", "speech", "verbal", "participants", "ctsem_spec")
EXIT_OK, EXIT_CONFIG, EXIT_INGEST, EXIT_NONCONVERGENCE = 0, 2, 3, 4


@dataclass
class PipelineConfig:
    ratings: str | None = None
    frames: str | None = None
    speech: str | None = None
    verbal: str | None = None
    participants: str | None = None
    ctsem_spec: str | None = None
    out_dir: str = "out"
    slice_width: float = 10.0
    granger_granularity: float = 60.0
    level: float = 0.01
    seed: int = 0
    ctsem_restarts: int = 5
    stages: list = field(default_factory=lambda: list(STAGES))

    def __post_init__(self):
        if not self.slice_width > 0 or not self.granger_granularity > 0:
            raise ConfigError("slice widths must be positive")
        ratio = self.granger_granularity / self.slice_width
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("granger_granularity must be a multiple of slice_width")
        if not 0 < self.level < 1:
            raise ConfigError("level must be in (0, 1)")
        unknown = set(self.stages) - set(STAGES)
        if unknown:
            raise ConfigError(f"unknown stages {sorted(unknown)}")

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "PipelineConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        doc.update({k: v for k, v in overrides.items() if v is not None})
        for key in INPUTS + ("out_dir",):
            if doc.get(key) and not Path(doc[key]).is_absolute():
                doc[key] = str(path.parent / doc[key])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def check_paths(self):
        for key in INPUTS:
            p = getattr(self, key)
            if p and not Path(p).is_file():
                raise ConfigError(f"{key}: file not found: {p}")


@dataclass
class Corpus:
    rating_sets: list = field(default_factory=list)
    frames: list = field(default_factory=list)
    speech: list = field(default_factory=list)
    verbal: list = field(default_factory=list)
    groups: dict = field(default_factory=dict)
    spec_doc: dict | None = None
    diagnostics: list = field(default_factory=list)

    @property
    def errors(self):
        return [d for d in self.diagnostics if d.severity == "error"]

    def participants(self) -> list[str]:
        ids = set(self.groups)
        ids |= {s.participant_id for s in self.rating_sets}
        ids |= {f.participant for f in self.frames}
        ids |= {p for p, *_ in self.speech}
        ids |= {p for p, *_ in self.verbal}
        return sorted(ids)

    def grid(self, slice_width: float) -> SliceGrid:
        width_ms = int(round(slice_width * 1000))
        n = 0
        n = max([n] + [s.slice_index + 1 for s in self.rating_sets])
        n = max([n] + [k + 1 for _, k, *_ in self.verbal])
        n = max([n] + [f.timestamp_ms // width_ms + 1 for f in self.frames])
        n = max([n] + [-(-end // width_ms) for _, _, end in self.speech])
        return SliceGrid(n, slice_width)


def ingest(cfg: PipelineConfig, strict: bool = True) -> Corpus:
    """Parse every configured input. With ``strict`` any error raises."""
    corpus = Corpus()
    readers = {"ratings": cio.read_ratings, "frames": cio.read_frames,
               "speech": cio.read_speech, "verbal": cio.read_verbal,
               "participants": cio.read_participants}
    for key, reader in readers.items():
        path = getattr(cfg, key)
        if not path:
            continue
        try:
            parsed = reader(path)
        except IngestionError as exc:
            if strict:
                raise
            corpus.diagnostics.append(cio.Diagnostic(Path(path).name, None, str(exc)))
            continue
        corpus.diagnostics.extend(parsed.diagnostics)
        if key == "ratings":
            corpus.rating_sets = parsed.records
        elif key == "participants":
            corpus.groups = dict(parsed.records)
        else:
            setattr(corpus, key, parsed.records)
    if cfg.ctsem_spec:
        try:
            corpus.spec_doc = json.loads(Path(cfg.ctsem_spec).read_text(encoding="utf-8"))
            CtsemModelSpec.from_dict(corpus.spec_doc)
        except (OSError, ValueError, CuriodynError) as exc:
            if strict:
                raise IngestionError(f"ctsem_spec: {exc}") from exc
            corpus.diagnostics.append(cio.Diagnostic(Path(cfg.ctsem_spec).name, None, str(exc)))
    _cross_check(corpus, cfg)
    if strict and corpus.errors:
        shown = "\n".join(str(d) for d in corpus.errors[:20])
        raise IngestionError(f"{len(corpus.errors)} input error(s):\n{shown}")
    return corpus


def _cross_check(corpus: Corpus, cfg: PipelineConfig):
    present = {
        "ratings": {s.participant_id for s in corpus.rating_sets},
        "frames": {f.participant for f in corpus.frames},
        "speech": {p for p, *_ in corpus.speech},
        "verbal": {p for p, *_ in corpus.verbal},
    }
    everyone = set().union(*present.values())
    for key, ids in present.items():
        if not getattr(cfg, key):
            continue
        for pid in sorted(everyone - ids):
            corpus.diagnostics.append(cio.Diagnostic(
                key, None, f"participant {pid} has no rows in this modality", "warning"))
    if corpus.groups:
        for pid in sorted(everyone - set(corpus.groups)):
            corpus.diagnostics.append(cio.Diagnostic(
                "participants", None, f"participant {pid} has no group", "error"))
    else:
        corpus.groups = {pid: "G0" for pid in everyone}
        if everyone:
            corpus.diagnostics.append(cio.Diagnostic(
                "participants", None, "no participants file; all in one group G0", "warning"))


def validate(cfg: PipelineConfig) -> dict:
    """Schema-check every input without running any stage."""
    try:
        corpus = ingest(cfg, strict=False)
    except CuriodynError as exc:
        return {"errors": [str(exc)], "warnings": [], "row_counts": {}}
    grid = corpus.grid(cfg.slice_width)
    rated = defaultdict(set)
    for s in corpus.rating_sets:
        rated[s.participant_id].add(s.slice_index)
    missing_rate = {pid: 1.0 - len(rated.get(pid, ())) / grid.n_slices if grid.n_slices else 0.0
                    for pid in corpus.participants()} if cfg.ratings else {}
    raters = {rid: {"mean_rating_time_s": p.mean_rating_time_s,
                    "label_frequency": {str(k): v for k, v in p.label_frequency.items()}}
              for rid, p in sorted(rater_profiles(corpus.rating_sets).items())}
    return {
        "errors": [str(d) for d in corpus.errors],
        "warnings": [str(d) for d in corpus.diagnostics if d.severity == "warning"],
        "row_counts": {
            "rating_sets": len(corpus.rating_sets), "frames": len(corpus.frames),
            "speech": len(corpus.speech), "verbal": len(corpus.verbal),
            "participants": len(corpus.groups),
        },
        "n_slices": grid.n_slices,
        "missing_slice_rate": missing_rate,
        "raters": raters,
    }


# -- stages -----------------------------------------------------------------

class _Stages:
    """Lazily computed intermediate products shared between stages."""

    def __init__(self, corpus: Corpus, cfg: PipelineConfig):
        self.corpus, self.cfg = corpus, cfg
        self.grid = corpus.grid(cfg.slice_width)
        self._cache = {}

    def _once(self, key, make):
        if key not in self._cache:
            self._cache[key] = make()
        return self._cache[key]

    def truth(self):
        return self._once("truth", lambda: ground_truth(self.corpus.rating_sets, self.cfg.slice_width))

    def features(self) -> list[BehaviorSeries]:
        def make():
            out = []
            frame_people = {f.participant for f in self.corpus.frames}
            for pid in sorted(frame_people):
                out.extend(slice_features(self.corpus.frames, pid, self.grid))
            verbal = defaultdict(lambda: np.full(self.grid.n_slices, np.nan))
            for pid, k, behavior, value in self.corpus.verbal:
                verbal[(pid, behavior)][k] = value
            out.extend(BehaviorSeries(pid, b, v, self.grid)
                       for (pid, b), v in sorted(verbal.items(), key=lambda kv: (kv[0][0], kv[0][1].value)))
            return out
        return self._once("features", make)

    def turns(self):
        def make():
            by_group = defaultdict(list)
            for pid, start, end in self.corpus.speech:
                by_group[self.corpus.groups.get(pid, "G0")].append((pid, start, end))
            turns, series = {}, []
            for g in sorted(by_group):
                turns[g] = segment_turns(by_group[g])
                members = sorted(p for p, grp in self.corpus.groups.items() if grp == g)
                series.extend(turn_metric_series(turns[g], members, self.grid))
            return turns, series
        return self._once("turns", make)

    def behavior_series(self) -> list[BehaviorSeries]:
        return self.features() + (self.turns()[1] if self.corpus.speech else [])

    # -- outputs --
    def ground_truth_csv(self) -> str:
        rows = [(pid, k, int(r)) for pid, s in sorted(self.truth().series.items())
                for k, r in enumerate(s.ratings)]
        return cio.to_csv(("participant_id", "slice_index", "curiosity"), rows)

    def features_csv(self) -> str:
        rows = [(s.participant, k, s.behavior.value, float(v))
                for s in self.features() for k, v in enumerate(s.values)]
        return cio.to_csv(("participant_id", "slice_index", "behavior", "value"), rows)

    def turn_metrics_csv(self) -> str:
        turns, _ = self.turns()
        rows = []
        for g in sorted(turns):
            members = sorted(p for p, grp in self.corpus.groups.items() if grp == g)
            for pid in members:
                for k in range(self.grid.n_slices):
                    m = turn_metrics(turns[g], pid, self.grid.bounds(k))
                    rows.append((pid, k, *map(float, (m.activity, m.silence, m.participation_equality,
                                 m.talkativeness, m.indegree, m.outdegree))))
        return cio.to_csv(("participant_id", "slice_index", "activity", "silence",
                           "participation_equality", "talkativeness",
                           "turn_taking_indegree", "turn_taking_outdegree"), rows)

    def ctsem(self) -> tuple[dict, bool]:
        doc = dict(self.corpus.spec_doc or {})
        tdpred = [Behavior(b) for b in doc.pop("tdpred", [])]
        series = {(s.participant, s.behavior): s.values for s in self.behavior_series()}
        parts = []
        for pid, c in sorted(self.truth().series.items()):
            n = c.grid.n_slices
            chi = np.zeros((n, len(tdpred)))
            for j, b in enumerate(tdpred):
                v = series.get((pid, b))
                if v is not None:
                    chi[:, j] = np.nan_to_num(np.asarray(v[:n], dtype=float), nan=0.0)
            parts.append(ParticipantData(pid, self.corpus.groups.get(pid, "G0"),
                                         np.arange(n) * self.cfg.slice_width,
                                         c.ratings.astype(float), chi))
        data = CtsemDataset(tuple(parts))
        doc.setdefault("groups", data.groups)
        doc["n_tdpred"] = len(tdpred)
        spec = CtsemModelSpec.from_dict(doc)
        fits = {}
        for name, variant in (("constrained", spec.constrained()), ("free", spec.unconstrained())):
            fits[name] = fit(variant, data, init="spec", n_restarts=self.cfg.ctsem_restarts,
                             seed=self.cfg.seed)
        cmp = compare_models(fits["constrained"], fits["free"])
        report = {
            "tdpred": [b.value for b in tdpred],
            "constrained": fits["constrained"].to_dict(),
            "free": fits["free"].to_dict(),
            "comparison": {"aic_constrained": cmp.aic_constrained, "aic_free": cmp.aic_free,
                           "delta_aic": cmp.delta_aic, "preferred": cmp.preferred},
        }
        return report, all(f.converged for f in fits.values())

    def granger_csv(self) -> str:
        transitions = [to_transition_series(c) for c in self.truth().series.values()
                       if c.grid.n_slices >= 2]
        results = causality_table(self.behavior_series(), transitions, self.corpus.groups,
                                  level=self.cfg.level,
                                  granularity_s=self.cfg.granger_granularity)
        return table_csv(results)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run(cfg: PipelineConfig) -> int:
    """Run the pipeline and write reports into ``cfg.out_dir``; returns an exit code."""
    cfg.check_paths()
    corpus = ingest(cfg)
    st = _Stages(corpus, cfg)
    outputs: dict[str, str] = {}
    status = EXIT_OK
    enabled = [s for s in STAGES if s in cfg.stages]
    if "annotate" in enabled:
        outputs["ground_truth.csv"] = st.ground_truth_csv()
    if "features" in enabled:
        outputs["features.csv"] = st.features_csv()
    if "turntaking" in enabled:
        outputs["turn_metrics.csv"] = st.turn_metrics_csv()
    if "ctsem" in enabled:
        report, converged = st.ctsem()
        outputs["ctsem_fit.json"] = json.dumps(report, indent=2, sort_keys=True) + "\n"
        if not converged:
            status = EXIT_NONCONVERGENCE
    if "granger" in enabled:
        outputs["granger_table.csv"] = st.granger_csv()

    manifest = {
        "inputs": {k: {"path": getattr(cfg, k), "sha256": _sha256(getattr(cfg, k))}
                   for k in INPUTS if getattr(cfg, k)},
        "seed": cfg.seed,
        "stages": enabled,
        "outputs": sorted(outputs),
        "config": {k: v for k, v in asdict(cfg).items() if k not in INPUTS},
        "versions": {"curiodyn": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": _version("scipy"),
                     "numba": _version("numba")},
    }
    outputs["run_manifest.json"] = json.dumps(manifest, indent=2, sort_keys=True) + "\n"

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in outputs.items():
        (out / name).write_text(text, encoding="utf-8")
    return status


def _version(mod: str) -> str:
    return getattr(sys.modules.get(mod) or __import__(mod), "__version__", "unknown")


def write_corpus(corpus: dict, out_dir: str | Path, seed: int) -> Path:
    """Write a :func:`simgen.simulate_corpus` result plus a ready-to-run config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("participants", "ratings", "frames", "speech", "verbal"):
        header, rows = corpus[name]
        (out / f"{name}.csv").write_text(cio.to_csv(header, rows), encoding="utf-8")
    (out / "ctsem_spec.json").write_text(json.dumps(corpus["spec"], indent=2) + "\n", encoding="utf-8")
    config = {name: f"{name}.csv" for name in ("participants", "ratings", "frames", "speech", "verbal")}
    config.update(ctsem_spec="ctsem_spec.json", out_dir="results", seed=seed)
    path = out / "config.json"
    path.write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    return path
