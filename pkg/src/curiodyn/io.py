"""CSV ingestion and emission for the pipeline's file formats.

Every reader checks the header first (a bad header raises
:class:`IngestionError` immediately) and then collects per-row problems as
:class:`Diagnostic` entries carrying the 1-based data row number.
"""
from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .annotation import Rating, RatingSet
from .errors import IngestionError
from .nonverbal import AUS, FrameObservation, active_from_intensity
from .timeline import Behavior

RATINGS_COLUMNS = ("hit_id", "slice_index", "participant_id", "rater_id", "rating", "rating_time_s")
AU_COLUMNS = tuple(f"au{int(a[2:]):02d}" for a in AUS)
FRAMES_COLUMNS = ("participant_id", "timestamp_ms", *AU_COLUMNS, "pitch", "yaw", "roll", "confidence")
SPEECH_COLUMNS = ("participant_id", "start_ms", "end_ms")
VERBAL_COLUMNS = ("participant_id", "slice_index", "behavior", "value")
PARTICIPANTS_COLUMNS = ("participant_id", "group_id")


@dataclass(frozen=True)
class Diagnostic:
    file: str
    row: int | None
    message: str
    severity: str = "error"

    def __str__(self):
        where = f"{self.file}:{self.row}" if self.row is not None else self.file
        return f"{self.severity}: {where}: {self.message}"


@dataclass
class Parsed:
    records: list
    diagnostics: list[Diagnostic] = field(default_factory=list)

    @property
    def errors(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.severity == "error"]


def read_rows(path: str | Path, required: Sequence[str]) -> list[dict]:
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = [c for c in required if c not in header]
            if missing:
                raise IngestionError(f"{path.name}: header lacks columns {missing}")
            return list(reader)
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestionError(f"{path}: {exc}") from exc


def _parse(path, required, convert) -> Parsed:
    name = Path(path).name
    out = Parsed([])
    for i, row in enumerate(read_rows(path, required), start=1):
        try:
            out.records.append(convert(row))
        except (ValueError, TypeError, KeyError) as exc:
            out.diagnostics.append(Diagnostic(name, i, str(exc)))
    return out


def _int(row, key) -> int:
    v = float(row[key])
    if not v.is_integer():
        raise ValueError(f"{key} must be an integer, got {row[key]!r}")
    return int(v)


def _float(row, key) -> float:
    v = float(row[key])
    if not math.isfinite(v):
        raise ValueError(f"{key} must be finite")
    return v


def read_ratings(path) -> Parsed:
    """Rows grouped into one :class:`RatingSet` per (hit, participant, slice)."""
    def convert(row):
        label = _int(row, "rating")
        if label not in (0, 1, 2):
            raise ValueError(f"rating must be 0, 1 or 2, got {row['rating']!r}")
        return (row["hit_id"], row["participant_id"], _int(row, "slice_index"),
                Rating(row["rater_id"], label, _float(row, "rating_time_s")))

    parsed = _parse(path, RATINGS_COLUMNS, convert)
    grouped = defaultdict(list)
    for hit, pid, k, rating in parsed.records:
        grouped[(hit, pid, k)].append(rating)
    parsed.records = [RatingSet(hit, k, tuple(r), pid)
                      for (hit, pid, k), r in sorted(grouped.items())]
    return parsed


def read_frames(path) -> Parsed:
    def convert(row):
        intens = {au: _float(row, col) for au, col in zip(AUS, AU_COLUMNS)}
        return FrameObservation(
            row["participant_id"], _int(row, "timestamp_ms"), active_from_intensity(intens),
            _float(row, "pitch"), _float(row, "yaw"), _float(row, "roll"),
            _float(row, "confidence"))
    return _parse(path, FRAMES_COLUMNS, convert)


def read_speech(path) -> Parsed:
    def convert(row):
        start, end = _int(row, "start_ms"), _int(row, "end_ms")
        if end <= start:
            raise ValueError("end_ms must exceed start_ms")
        return (row["participant_id"], start, end)
    return _parse(path, SPEECH_COLUMNS, convert)


def read_verbal(path) -> Parsed:
    """Long-format pre-annotated verbal labels: one binary value per row."""
    verbal = {b.value for b in Behavior if b.binary} - {Behavior.CURIOSITY_INCREASE_MAINTAIN.value}

    def convert(row):
        if row["behavior"] not in verbal:
            raise ValueError(f"unknown behavior {row['behavior']!r}")
        value = _int(row, "value")
        if value not in (0, 1):
            raise ValueError("verbal labels must be 0 or 1")
        k = _int(row, "slice_index")
        if k < 0:
            raise ValueError("slice_index must be non-negative")
        return (row["participant_id"], k, Behavior(row["behavior"]), value)
    return _parse(path, VERBAL_COLUMNS, convert)


def read_participants(path) -> Parsed:
    parsed = _parse(path, PARTICIPANTS_COLUMNS,
                    lambda row: (row["participant_id"], row["group_id"]))
    seen = set()
    for i, (pid, _) in enumerate(parsed.records, start=1):
        if pid in seen:
            parsed.diagnostics.append(Diagnostic(Path(path).name, i, f"duplicate participant {pid}"))
        seen.add(pid)
    return parsed


def to_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v
