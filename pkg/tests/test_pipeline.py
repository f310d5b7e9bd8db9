import json
from pathlib import Path

import pytest

from curiodyn import io as cio
from curiodyn.cli import main
from curiodyn.errors import ConfigError, IngestionError
from curiodyn.pipeline import INPUTS, PipelineConfig, validate, write_corpus
from curiodyn.simgen import simulate_corpus

ARTIFACTS = {"ground_truth.csv", "features.csv", "turn_metrics.csv", "ctsem_fit.json",
             "granger_table.csv", "run_manifest.json"}


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    write_corpus(simulate_corpus(seed=3, n_groups=2, n_per_group=2, n_slices=60), d, seed=3)
    return d


def _write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


# -- readers ----------------------------------------------------------------

def test_ratings_reader_groups_and_reports_rows(tmp_path):
    f = _write(tmp_path / "r.csv",
               "hit_id,slice_index,participant_id,rater_id,rating,rating_time_s\n"
               "h,0,p,A,1,30\nh,0,p,B,2,31\nh,1,p,A,3,30\nh,1,p,B,x,30\n")
    parsed = cio.read_ratings(f)
    assert len(parsed.records) == 1 and parsed.records[0].raters == ("A", "B")
    assert [d.row for d in parsed.errors] == [3, 4]
    assert "rating must be 0, 1 or 2" in str(parsed.errors[0])


def test_bad_header_raises(tmp_path):
    f = _write(tmp_path / "s.csv", "participant,start_ms,end_ms\np,0,10\n")
    with pytest.raises(IngestionError):
        cio.read_speech(f)


def test_frames_reader_thresholds_intensity(tmp_path):
    header = ",".join(cio.FRAMES_COLUMNS)
    aus = ["0"] * len(cio.AU_COLUMNS)
    aus[cio.AU_COLUMNS.index("au06")] = "2.5"
    aus[cio.AU_COLUMNS.index("au12")] = "1"
    aus[cio.AU_COLUMNS.index("au04")] = "0.9"
    f = _write(tmp_path / "f.csv", header + "\np,100," + ",".join(aus) + ",0.1,0.2,0.3,0.9\n")
    (fr,) = cio.read_frames(f).records
    assert fr.au_active == {"AU6", "AU12"}
    assert (fr.timestamp_ms, fr.confidence) == (100, 0.9)


def test_verbal_and_participants_readers(tmp_path):
    v = _write(tmp_path / "v.csv", "participant_id,slice_index,behavior,value\n"
               "p,0,agreement,1\np,1,shouting,1\np,2,agreement,2\n")
    parsed = cio.read_verbal(v)
    assert len(parsed.records) == 1 and [d.row for d in parsed.errors] == [2, 3]
    pf = _write(tmp_path / "p.csv", "participant_id,group_id\na,g\na,h\n")
    assert [d.row for d in cio.read_participants(pf).errors] == [2]


def test_csv_writer_round_trips_floats():
    text = cio.to_csv(("a", "b"), [(0.1, float("nan")), (1, "x")])
    assert text == "a,b\n0.1,\n1,x\n"


# -- config -----------------------------------------------------------------

def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig(level=1.5)
    with pytest.raises(ConfigError):
        PipelineConfig(slice_width=10, granger_granularity=25)
    with pytest.raises(ConfigError):
        PipelineConfig(stages=["annotate", "dance"])
    with pytest.raises(ConfigError):
        PipelineConfig.load(_write(tmp_path / "c.json", '{"colour": 1}'))
    with pytest.raises(ConfigError):
        PipelineConfig(ratings=str(tmp_path / "nope.csv")).check_paths()


def test_config_resolves_relative_paths(corpus_dir):
    cfg = PipelineConfig.load(corpus_dir / "config.json", seed=9)
    assert Path(cfg.ratings) == corpus_dir / "ratings.csv"
    assert cfg.seed == 9


# -- validate ---------------------------------------------------------------

def test_validate_clean_corpus(corpus_dir):
    report = validate(PipelineConfig.load(corpus_dir / "config.json"))
    assert report["errors"] == []
    assert report["row_counts"]["participants"] == 4
    assert set(report["missing_slice_rate"].values()) == {0.0}
    assert all("mean_rating_time_s" in r for r in report["raters"].values())


def test_validate_flags_bad_rating_with_row(corpus_dir, tmp_path):
    lines = (corpus_dir / "ratings.csv").read_text().splitlines()
    parts = lines[5].split(",")
    parts[4] = "3"
    lines[5] = ",".join(parts)
    _write(tmp_path / "ratings.csv", "\n".join(lines) + "\n")
    cfg = PipelineConfig.load(corpus_dir / "config.json")
    cfg.ratings = str(tmp_path / "ratings.csv")
    report = validate(cfg)
    assert len(report["errors"]) == 1 and "ratings.csv:5" in report["errors"][0]


def test_modality_gap_is_warning(corpus_dir, tmp_path):
    speech = (corpus_dir / "speech.csv").read_text().splitlines()
    kept = [speech[0]] + [ln for ln in speech[1:] if not ln.startswith("G1P1,")]
    _write(tmp_path / "speech.csv", "\n".join(kept) + "\n")
    cfg = PipelineConfig.load(corpus_dir / "config.json")
    cfg.speech = str(tmp_path / "speech.csv")
    report = validate(cfg)
    assert report["errors"] == []
    assert any("G1P1" in w and w.startswith("warning: speech") for w in report["warnings"])


def test_validate_never_raises_on_bad_header(tmp_path):
    r = _write(tmp_path / "ratings.csv", "nonsense\n1\n")
    report = validate(PipelineConfig(ratings=str(r)))
    assert report["errors"] and "header" in report["errors"][0]


# -- run via the CLI --------------------------------------------------------

def test_run_end_to_end(corpus_dir, tmp_path):
    out = tmp_path / "out"
    code = main(["run", "--config", str(corpus_dir / "config.json"), "--out", str(out)])
    assert code == 0
    assert {p.name for p in out.iterdir()} == ARTIFACTS
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert set(manifest["inputs"]) == {"ratings", "frames", "speech", "verbal", "participants",
                                       "ctsem_spec"}
    assert all(len(v["sha256"]) == 64 for v in manifest["inputs"].values())
    fit = json.loads((out / "ctsem_fit.json").read_text())
    assert fit["comparison"]["preferred"] in ("constrained", "free")
    assert (out / "granger_table.csv").read_text().startswith(
        "direction,from,to,standardized_strength,p_value\n")


def test_run_without_stages_writes_only_manifest(corpus_dir, tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", str(corpus_dir / "config.json"), "--out", str(out),
                 "--stages", ""]) == 0
    assert [p.name for p in out.iterdir()] == ["run_manifest.json"]


def test_run_single_stage(corpus_dir, tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", str(corpus_dir / "config.json"), "--out", str(out),
                 "--stages", "turntaking"]) == 0
    assert {p.name for p in out.iterdir()} == {"turn_metrics.csv", "run_manifest.json"}


def test_malformed_header_fails_fast(corpus_dir, tmp_path):
    cfg = json.loads((corpus_dir / "config.json").read_text())
    cfg.update({k: str(corpus_dir / cfg[k]) for k in INPUTS if k in cfg})
    _write(tmp_path / "frames.csv", "participant_id,timestamp\n")
    cfg["frames"] = str(tmp_path / "frames.csv")
    cfg["out_dir"] = str(tmp_path / "out")
    path = _write(tmp_path / "config.json", json.dumps(cfg))
    assert main(["run", "--config", str(path)]) == 3
    assert not (tmp_path / "out").exists()


def test_config_error_exit_code(tmp_path):
    path = _write(tmp_path / "config.json", json.dumps({"ratings": "missing.csv"}))
    assert main(["run", "--config", str(path)]) == 2
    assert main(["validate", "--config", str(tmp_path / "absent.json")]) == 2


def test_simulate_command(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path / "c"), "--seed", "1", "--slices", "20"]) == 0
    assert capsys.readouterr().out.strip().endswith("config.json")
    assert main(["validate", "--config", str(tmp_path / "c" / "config.json")]) == 0
