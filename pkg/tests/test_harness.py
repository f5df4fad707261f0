import json
import os

import pytest
from hypothesis import given
from hypothesis import strategies as st

from glplab.codec import CSV_HEADER
from glplab.harness import (KINDS, ConfigError, RunError, default_config, load_config, parse_config, run_experiment,
                            serialize_config)
from glplab.harness.cli import main
from glplab.harness.config import SCHEMA
from glplab.harness.experiments import DRIVERS, at_least

SMALL_CODEC = """
kind = codec-bench
seeds = 0, 1
[codec]
T = 1
D = 1, 2
eps_tilde = 0.2
trials = 2000
"""

SMALL_COLLAPSE = """
kind = collapse-demo
[env]
dataset_size = 256
[model]
latent_dim = 3
hidden = 8
[train]
steps = 30
log_every = 10
eval_size = 100
"""


def test_minimal_config_gets_defaults():
    cfg = parse_config("kind = collapse-demo\n")
    assert cfg.kind == "collapse-demo" and cfg.seeds == (0,) and cfg.out is None
    assert cfg["train"]["steps"] == 3000 and cfg["model"]["hidden"] == (64, 64)
    assert cfg["planner"]["horizon"] == 12 and cfg["train"]["reg_weight"] == 0.0


def test_seed_ranges_and_comments():
    cfg = parse_config("kind = plan  # comment\nseeds = 0..19\n\n[planner]\nhorizon = 4\n")
    assert cfg.seeds == tuple(range(20)) and cfg["planner"]["horizon"] == 4


@pytest.mark.parametrize("text, fragment", [
    ("kind = plan\nunknown_key = 1\n", "line 2: unknown key 'unknown_key'"),
    ("kind = plan\n[train]\nsteps = many\n", "line 3"),
    ("kind = plan\n[nope]\n", "line 2: unknown section"),
    ("seeds = 1\n", "missing required key 'kind'"),
    ("kind = teleport\n", "line 1: unknown experiment kind"),
    ("kind = plan\nseeds = 1\nseeds = 2\n", "line 3: duplicate key"),
    ("kind = plan\njust text\n", "line 2: expected 'key = value'"),
    ("kind = plan\nseeds = ,\n", "seeds must be nonempty"),
])
def test_config_errors_name_the_line(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(text)


def test_every_kind_has_a_driver():
    assert set(KINDS) == set(DRIVERS)


def test_serialize_roundtrip_defaults():
    for kind in KINDS:
        cfg = default_config(kind)
        assert parse_config(serialize_config(cfg)) == cfg


@given(st.sampled_from(KINDS), st.lists(st.integers(0, 10**6), min_size=1, max_size=5),
       st.integers(1, 10**5), st.floats(1e-6, 1.0, allow_nan=False), st.lists(st.integers(1, 128), max_size=3),
       st.booleans())
def test_serialize_roundtrip_property(kind, seeds, steps, lr, hidden, with_out):
    text = (f"kind = {kind}\nseeds = {', '.join(map(str, seeds))}\n" + ("out = /tmp/x\n" if with_out else "")
            + f"[train]\nsteps = {steps}\nlr = {lr!r}\n[model]\nhidden = {', '.join(map(str, hidden))}\n")
    cfg = parse_config(text)
    again = parse_config(serialize_config(cfg))
    assert again == cfg and serialize_config(again) == serialize_config(cfg)


def test_at_least():
    assert at_least(0.9, 20) == 18 and at_least(0.9, 1) == 1 and at_least(0.95, 100) == 95


def test_codec_bench_run(tmp_path):
    report = run_experiment(parse_config(SMALL_CODEC), out=tmp_path)
    assert report.passed
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER) and len(lines) == 1 + 2 * 4
    assert all(line.endswith(",0") for line in lines[1:])
    assert (tmp_path / "verdict.txt").read_text().strip().endswith("VERDICT PASS")
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["seeds"] == [0, 1] and "numpy" in summary["versions"] and set(summary["wall_time_s"]) == {"0", "1"}
    assert parse_config(summary["config_text"]) == parse_config(SMALL_CODEC)
    assert sorted(p.name for p in (tmp_path / "seeds").iterdir()) == ["seed_0.csv", "seed_1.csv"]


def test_collapse_demo_schema_and_determinism(tmp_path):
    cfg = parse_config(SMALL_COLLAPSE)
    run_experiment(cfg, out=tmp_path / "a")
    run_experiment(cfg, out=tmp_path / "b")
    a, b = (tmp_path / "a" / "metrics.csv").read_bytes(), (tmp_path / "b" / "metrics.csv").read_bytes()
    assert a == b
    assert a.decode().splitlines()[0] == "seed,objective,step,latent_loss,gen_loss,roundtrip_eps,mean_std,effective_rank"


def test_failed_verdict_is_recorded(tmp_path):
    cfg = parse_config("kind = grad-check\n[gradcheck]\ncompositions = 2\nmax_error = 1e-30\n")
    report = run_experiment(cfg, out=tmp_path)
    assert not report.passed
    assert "VERDICT FAIL" in (tmp_path / "verdict.txt").read_text()


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("GLPLAB_OUT", str(tmp_path / "env-root"))
    report = run_experiment(parse_config("kind = grad-check\n[gradcheck]\ncompositions = 2\n"))
    assert report.out_dir == tmp_path / "env-root" and (report.out_dir / "metrics.csv").exists()


def test_unwritable_output_names_the_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(RunError, match=str(blocker)):
        run_experiment(parse_config("kind = grad-check\n[gradcheck]\ncompositions = 1\n"), out=blocker / "sub")


def test_cli_grad_check(tmp_path, capsys):
    assert main(["grad-check", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "max relative error" in out and "verdict PASS" in out


def test_cli_missing_config(tmp_path, capsys):
    assert main(["plan", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert "usage:" in capsys.readouterr().err


def test_cli_unknown_subcommand(capsys):
    assert main(["teleport"]) == 2
    assert "usage:" in capsys.readouterr().err


def test_cli_bad_config_and_kind_mismatch(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("kind = plan\nbogus = 1\n")
    assert main(["plan", "--config", str(bad)]) == 2
    other = tmp_path / "other.cfg"
    other.write_text("kind = codec-bench\n")
    assert main(["plan", "--config", str(other)]) == 2


def test_cli_codec_bench_with_seed_override(tmp_path, capsys):
    path = tmp_path / "c.cfg"
    path.write_text(SMALL_CODEC)
    assert main(["codec-bench", "--config", str(path), "--seed", "7", "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("seed 7:")
    assert [p.name for p in (tmp_path / "o" / "seeds").iterdir()] == ["seed_7.csv"]


def test_schema_keys_have_defaults_of_their_type():
    for section, keys in SCHEMA.items():
        for key, (parser, default) in keys.items():
            if default is not None and not isinstance(default, tuple):
                assert parser(str(default)) == default, (section, key)
