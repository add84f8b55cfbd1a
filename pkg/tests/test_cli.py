import csv
import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import operators
from oracles import infsup_svd
from snse.cli import DEFAULTS, ConfigError, config_hash, main, parse_config, serialize_config

CONFIGS = sorted((Path(__file__).parents[1] / "configs").glob("*.ini"))
SMOKE = Path(__file__).parents[1] / "configs" / "smoke.ini"
SECTIONS = "".join(f"[{s}]\n" for s in DEFAULTS)


def _with(text_overrides: dict) -> str:
    out = []
    for section in DEFAULTS:
        out.append(f"[{section}]")
        out += [f"{k} = {v}" for k, v in text_overrides.get(section, {}).items()]
    return "\n".join(out) + "\n"


def test_empty_sections_give_defaults():
    cfg = parse_config(SECTIONS)
    assert cfg.get("experiment", "N") == 64 and cfg.get("experiment", "levels") == 3
    plan = cfg.plan()
    assert plan.noise.kind == "multiplicative" and plan.noise.J == 16 and plan.noise.decay == 2.0
    assert plan.mu == 1.0 and plan.T == 0.5 and plan.R is None


def test_theta_range():
    assert parse_config(_with({"scheme": {"theta": 0.75}})).get("scheme", "theta") == 0.75
    with pytest.raises(ConfigError, match="theta"):
        parse_config(_with({"scheme": {"theta": 1.5}}))


@pytest.mark.parametrize("text,match", [
    (_with({"scheme": {"mu": 0}}), "mu"),
    (_with({"scheme": {"viscosity": 1}}), "viscosity"),
    (SECTIONS + "[extra]\n", "extra"),
    ("[mesh]\n[scheme]\n[noise]\n", "experiment"),
    (_with({"noise": {"kind": "cubic"}}), "kind"),
    (_with({"experiment": {"N": "many"}}), "N"),
    (_with({"experiment": {"xi": ""}}), "xi"),
    (_with({"scheme": {"T": "nan"}}), "T"),
    ("not a config", "malformed"),
])
def test_invalid_configs(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.name)
def test_shipped_configs_are_canonical(path):
    text = path.read_text()
    cfg = parse_config(text)
    assert serialize_config(cfg) == text
    assert parse_config(serialize_config(cfg)) == cfg


def test_keys_case_sensitive():
    with pytest.raises(ConfigError, match="t"):
        parse_config(_with({"scheme": {"t": 1.0}}))


@given(theta=st.floats(0, 1), mu=st.floats(1e-6, 1e6), n=st.integers(1, 64),
       xi=st.lists(st.floats(1e-6, 1e6), min_size=1, max_size=5),
       R=st.one_of(st.none(), st.floats(1e-3, 1e3)), seed=st.integers(0, 2 ** 64 - 1))
@settings(max_examples=50, deadline=None)
def test_round_trip(theta, mu, n, xi, R, seed):
    text = _with({"mesh": {"base_n": n},
                  "scheme": {"theta": repr(theta), "mu": repr(mu), "R": "none" if R is None else repr(R)},
                  "experiment": {"xi": ", ".join(map(repr, xi)), "seed": seed}})
    cfg = parse_config(text)
    again = parse_config(serialize_config(cfg))
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)
    assert cfg.plan().xi == tuple(xi)


# -- commands -------------------------------------------------------------------

def _run(args):
    code = main([str(a) for a in args])
    return code


def test_convergence_smoke(tmp_path):
    out = tmp_path / "run"
    assert _run(["--command", "convergence", "--config", SMOKE, "--out", out]) == 0
    for name in ("records.csv", "rates.csv", "exceedance.csv", "manifest.json"):
        assert (out / name).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_hash"] == config_hash(parse_config(SMOKE.read_text()))
    assert manifest["seed"] == 0 and manifest["command"] == "convergence"
    assert "numpy" in manifest["versions"]
    rows = list(csv.DictReader((out / "records.csv").open()))
    assert len(rows) == 32 * 3


def test_seed_override_changes_records(tmp_path):
    assert _run(["--command", "convergence", "--config", SMOKE, "--out", tmp_path / "a"]) == 0
    assert _run(["--command", "convergence", "--config", SMOKE, "--out", tmp_path / "b", "--seed", 5]) == 0
    assert (tmp_path / "a" / "records.csv").read_bytes() != (tmp_path / "b" / "records.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seed"] == 5


def test_infsup_command_matches_oracle(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text(_with({"mesh": {"base_n": 2}}))
    assert _run(["--command", "infsup", "--config", cfg, "--out", tmp_path]) == 0
    assert capsys.readouterr().out.count("beta_h=") == 3
    rows = list(csv.DictReader((tmp_path / "infsup.csv").open()))
    ops = operators(2)
    ref = infsup_svd(ops.A_free.toarray(), ops.B_free.toarray(), ops.pressure_mass)
    assert float(rows[0]["beta_h"]) == pytest.approx(ref, abs=1e-8)
    assert float(rows[0]["beta_h_dense"]) == pytest.approx(ref, abs=1e-8)


@pytest.mark.parametrize("command,outputs", [
    ("mesh-info", ["mesh_info.csv"]),
    ("single-run", ["trajectory.csv", "path.bin"]),
    ("project-rates", ["project_rates.csv"]),
    ("stability", ["stability.csv"]),
])
def test_other_commands(tmp_path, command, outputs):
    cfg = tmp_path / "c.ini"
    cfg.write_text(_with({"mesh": {"base_n": 2}, "scheme": {"steps_base": 1},
                          "noise": {"J": 4}, "experiment": {"N": 32}}))
    out = tmp_path / "out"
    assert _run(["--command", command, "--config", cfg, "--out", out]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["outputs"] == outputs
    for name in outputs:
        assert (out / name).stat().st_size > 0


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(_with({"scheme": {"theta": 1.5}}))
    assert _run(["--command", "convergence", "--config", cfg, "--out", tmp_path]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    payload = json.loads(err[0])
    assert payload["error"] == "ConfigError" and "theta" in payload["message"]


def test_missing_config_file(tmp_path, capsys):
    assert _run(["--command", "mesh-info", "--config", tmp_path / "nope.ini", "--out", tmp_path]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "ConfigError"


def test_module_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "few.ini"
    cfg.write_text(_with({"mesh": {"base_n": 2}, "scheme": {"steps_base": 1}, "experiment": {"N": 4}}))
    assert _run(["--command", "convergence", "--config", cfg, "--out", tmp_path]) == 1
    payload = json.loads(capsys.readouterr().err.strip())
    assert payload["error"] == "ExperimentError" and payload["command"] == "convergence"


@pytest.mark.parametrize("flags", [["--workers", "0"], ["--seed", "-1"], ["--seed", str(2 ** 64)]])
def test_flag_validation(tmp_path, flags):
    assert _run(["--command", "mesh-info", "--out", tmp_path, *flags]) == 2


def test_unknown_command():
    with pytest.raises(SystemExit):
        main(["--command", "dance"])


def test_output_directory_created(tmp_path, monkeypatch):
    monkeypatch.setenv("SNSE_LOG", "debug")
    out = tmp_path / "a" / "b"
    assert _run(["--command", "mesh-info", "--out", out]) == 0
    assert (out / "mesh_info.csv").exists()
