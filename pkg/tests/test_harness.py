"""Config parsing, deterministic output files, and the CLI contract."""
import csv
import json
import math

import pytest

from bpre import cli, harness, streams
from bpre.env_model import DEFAULT_PARAMS
from bpre.errors import (DegenerateSample, NonintegrableTail, ParseError,
                         ValidationError)
from bpre.harness import RunConfig, config_hash, parse_config, run
from bpre.mixture import ISConfig

MINIMAL = 'experiment = "validate"\n[model]\n'


def read_jsonl(path):
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f]


def canon_lines(path):
    """JSONL lines with the volatile wall_time field removed."""
    out = []
    for d in read_jsonl(path):
        d.pop("wall_time", None)
        out.append(json.dumps(d, sort_keys=True))
    return out


# ---------------------------------------------------------------------------
# parsing

def test_minimal_config_fills_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.experiment == "validate"
    assert cfg.model == DEFAULT_PARAMS
    assert cfg.samples == 200_000
    assert cfg.seed == 0
    assert cfg.batches == 1
    assert cfg.is_config is None


def test_duplicate_key_is_a_parse_error_with_position():
    with pytest.raises(ParseError) as exc:
        parse_config('experiment = "survival"\nseed = 1\nseed = 2\n')
    assert exc.value.line == 3
    assert exc.value.column is not None


def test_malformed_toml_is_a_parse_error():
    with pytest.raises(ParseError):
        parse_config("experiment = [unterminated\n")


def test_unknown_top_level_key_rejected():
    with pytest.raises(ParseError, match="unknown top-level"):
        parse_config('experiment = "validate"\ntypo_key = 1\n')


def test_shallow_tail_is_a_validation_error():
    with pytest.raises(ValidationError) as exc:
        parse_config('experiment = "validate"\n[model]\nbeta = 2\n')
    assert isinstance(exc.value.__cause__, NonintegrableTail)


def test_n_and_n_list_conflict():
    with pytest.raises(ParseError, match="not both"):
        parse_config('experiment = "c0"\nn = 5\nn_list = [5]\n')


def test_is_config_point_law_parses():
    cfg = parse_config(
        'experiment = "survival"\nn = 4\n'
        '[is_config]\nmixture_weight = 0.4\n'
        'jump_index_law = ["point", 2]\ndelta = 0.25\n')
    assert cfg.is_config == ISConfig(0.4, ("point", 2), 0.25)


def test_is_config_unknown_key_rejected():
    with pytest.raises(ParseError, match="is_config"):
        parse_config('experiment = "survival"\n[is_config]\nweight = 0.4\n')


def test_cli_subcommand_overrides_config_experiment():
    cfg = parse_config('experiment = "survival"\nn = 5\n', experiment="c0")
    assert cfg.experiment == "c0"


def test_run_config_invariants():
    with pytest.raises(ValidationError):
        RunConfig(experiment="nope")
    with pytest.raises(ValidationError):
        RunConfig(samples=0)
    with pytest.raises(ValidationError):
        RunConfig(batches=0)
    with pytest.raises(ValidationError):
        RunConfig(seed=-1)
    with pytest.raises(ValidationError):
        RunConfig(seed=2 ** 64)
    # sweep experiments pick up their default horizons
    assert RunConfig(experiment="c0").n_list == (30, 60)
    assert RunConfig(experiment="validate").n_list == ()


def test_config_hash_ignores_routing_fields(tmp_path):
    base = RunConfig(experiment="survival", n_list=(5,), samples=1000, seed=2)
    same = RunConfig(experiment="survival", n_list=(5,), samples=1000, seed=2,
                     batches=8, out_dir=str(tmp_path))
    other = RunConfig(experiment="survival", n_list=(5,), samples=2000, seed=2)
    assert config_hash(base) == config_hash(same)
    assert config_hash(base) != config_hash(other)


def test_split_streams_reexported():
    assert harness.split_streams is streams.split_streams


# ---------------------------------------------------------------------------
# running and output files

def test_rerun_reproduces_bytes(tmp_path):
    a = RunConfig(experiment="survival", n_list=(3,), samples=4000, seed=11,
                  out_dir=str(tmp_path / "a"))
    b = RunConfig(experiment="survival", n_list=(3,), samples=4000, seed=11,
                  out_dir=str(tmp_path / "b"))
    run(a)
    run(b)
    assert canon_lines(tmp_path / "a" / "results.jsonl") == \
        canon_lines(tmp_path / "b" / "results.jsonl")
    # the CSV has no volatile fields at all
    assert (tmp_path / "a" / "summary.csv").read_bytes() == \
        (tmp_path / "b" / "summary.csv").read_bytes()


def test_batches_cannot_change_estimates(tmp_path):
    a = RunConfig(experiment="survival", n_list=(3,), samples=4000, seed=11,
                  batches=1, out_dir=str(tmp_path / "a"))
    b = RunConfig(experiment="survival", n_list=(3,), samples=4000, seed=11,
                  batches=8, out_dir=str(tmp_path / "b"))
    run(a)
    run(b)
    assert canon_lines(tmp_path / "a" / "results.jsonl") == \
        canon_lines(tmp_path / "b" / "results.jsonl")
    assert (tmp_path / "a" / "summary.csv").read_bytes() == \
        (tmp_path / "b" / "summary.csv").read_bytes()


def test_survival_record_contents(tmp_path):
    cfg = RunConfig(experiment="survival", n_list=(5,), samples=3000,
                    seed=4, out_dir=str(tmp_path))
    result = run(cfg)
    methods = [r["method"] for r in result.records if "method" in r]
    assert "survival-naive" in methods
    assert "survival-quenched" in methods
    assert "survival-tilted" in methods
    assert "survival-tilted-mix" in methods
    header = result.records[0]
    assert header["config_hash"] == config_hash(cfg)
    assert header["algorithm"] == streams.ALGORITHM
    assert "philox" in header["algorithm"]
    # every estimate line carries exactly the record schema
    for rec in read_jsonl(tmp_path / "results.jsonl"):
        if "method" in rec:
            assert set(rec) == {"method", "params_hash", "n", "samples",
                                "value", "stderr", "seed", "wall_time"}


def test_summary_csv_matches_jsonl(tmp_path):
    cfg = RunConfig(experiment="survival", n_list=(4,), samples=3000,
                    seed=4, out_dir=str(tmp_path))
    run(cfg)
    by_key = {}
    for rec in read_jsonl(tmp_path / "results.jsonl"):
        if "method" in rec:
            by_key[(rec["method"], rec["n"])] = rec
    with open(tmp_path / "summary.csv", newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == len(by_key)
    for row in rows:
        key = (row["method"], int(row["n"]) if row["n"] else None)
        rec = by_key[key]
        assert float(row["value"]) == rec["value"]
        assert float(row["stderr"]) == rec["stderr"]
        seen = [(r["method"], r["n"]) for r in rows]
    assert seen == sorted(seen)


def test_truncation_marker_on_estimator_error(tmp_path):
    # 300 samples fill one chunk block; the kappa jackknife needs two
    cfg = RunConfig(experiment="bigjump", n_list=(60,), samples=300,
                    seed=1, out_dir=str(tmp_path))
    with pytest.raises(DegenerateSample):
        run(cfg)
    lines = read_jsonl(tmp_path / "results.jsonl")
    assert lines[0]["type"] == "run"
    assert lines[-1]["type"] == "truncated"
    assert "DegenerateSample" in lines[-1]["reason"]


def test_validate_experiment_emits_model_record():
    result = run(RunConfig(experiment="validate"))
    model = [r for r in result.records if r.get("type") == "model"]
    assert len(model) == 1
    assert math.isclose(model[0]["m"], 0.7341949990673358, rel_tol=1e-12)


# ---------------------------------------------------------------------------
# CLI

def test_cli_success_writes_files(tmp_path, capsys):
    code = cli.main(["survival", "--n", "3", "--samples", "2000",
                     "--seed", "7", "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "survival-tilted" in out
    assert (tmp_path / "results.jsonl").exists()
    assert (tmp_path / "summary.csv").exists()


def test_cli_validate_prints_constants(capsys):
    assert cli.main(["validate"]) == 0
    out = capsys.readouterr().out
    assert "m = 0.7341949990673358" in out


def test_cli_missing_config_file_is_exit_2(capsys):
    assert cli.main(["survival", "--config", "/nonexistent.toml"]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_bad_model_is_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("[model]\nbeta = 2\n")
    assert cli.main(["validate", "--config", str(p)]) == 2
    assert "beta" in capsys.readouterr().err


def test_cli_duplicate_key_is_exit_2(tmp_path, capsys):
    p = tmp_path / "dup.toml"
    p.write_text("seed = 1\nseed = 2\n")
    assert cli.main(["survival", "--config", str(p)]) == 2
    assert "line" in capsys.readouterr().err


def test_cli_estimator_failure_is_exit_3(tmp_path, capsys):
    code = cli.main(["bigjump", "--n", "60", "--samples", "300",
                     "--seed", "1", "--out", str(tmp_path)])
    assert code == 3
    assert "estimator error" in capsys.readouterr().err


def test_cli_config_plus_flag_overrides(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text('experiment = "survival"\nn = 3\nsamples = 2000\nseed = 5\n')
    code = cli.main(["survival", "--config", str(p), "--seed", "9",
                     "--out", str(tmp_path / "o")])
    assert code == 0
    lines = read_jsonl(tmp_path / "o" / "results.jsonl")
    assert lines[0]["config"]["seed"] == 9
    assert lines[0]["config"]["samples"] == 2000
