import csv
import json
import math
import subprocess
import sys

import pytest
from hypothesis import given, strategies as st

import cli_cases
from rcmlab.cli import dumps, fmt, main
from rcmlab.environment import constant_environment, load_environment, save_environment


def _read_json(path):
    return json.loads(path.read_text())


@pytest.mark.parametrize("command", list(cli_cases.CASES) + ["audit-all"])
def test_every_command_runs(tmp_path, command):
    out = tmp_path / command
    assert main(cli_cases.argv(command, out)) == 0
    man = _read_json(out / "manifest.json")
    assert man["command"] == command
    assert set(man["artifacts"]) == set(cli_cases.artifacts(out))
    assert {"timestamp", "wall_clock_seconds", "threads"} <= set(man["volatile"])
    assert len(man["config_sha256"]) == 64 and man["environment"]["n_sites"] > 0
    assert not (out / "error.json").exists()


def test_env_file_round_trip(tmp_path):
    out = tmp_path / "env"
    assert main(cli_cases.argv("env", out)) == 0
    env = load_environment(out / "env.jsonl")
    summary = _read_json(out / "env_summary.json")
    assert summary["n_edges"] == env.n_edges
    again = tmp_path / "again"
    assert main(["moments", "--env", str(out / "env.jsonl"), "--out", str(again)]) == 0
    man = _read_json(again / "manifest.json")
    assert man["environment_sha256"] == _read_json(out / "manifest.json")["environment_sha256"]


def test_npz_format(tmp_path):
    out = tmp_path / "npz"
    assert main(cli_cases.argv("env", out, ["--format", "npz"])) == 0
    assert (out / "env.npz").exists()


def test_llt_on_constant_lattice_decreases(tmp_path):
    path = tmp_path / "const.jsonl"
    save_environment(constant_environment(2, 64, "torus"), path)
    out = tmp_path / "llt"
    assert main(["llt", "--env", str(path), "--n", "4,8,16", "--out", str(out), "--no-plots"]) == 0
    with open(out / "llt_curve.csv") as fh:
        rows = list(csv.DictReader(fh))
    E = [float(r["E_n"]) for r in rows]
    assert [int(r["n"]) for r in rows] == [4, 8, 16]
    assert E[0] > E[1] > E[2]
    info = _read_json(out / "llt.json")
    assert info["verdict"] == "decreasing" and info["M_source"] == "corrector"


@pytest.mark.parametrize("command,extra,code", [
    ("wphi", ["--r", "1"], 2),
    ("corrector", ["--max-iter", "1"], 3),
    ("llt", ["--n", "2,4,8", "--t1", "1", "--t2", "2"], 4),
])
def test_exit_codes(tmp_path, command, extra, code):
    out = tmp_path / "err"
    assert main(cli_cases.argv(command, out, extra)) == code
    err = _read_json(out / "error.json")
    assert err["exit_code"] == code and err["message"]


def test_bad_flag_and_unknown_command(tmp_path):
    assert main(["moments", "--bogus", "1", "--out", str(tmp_path)]) == 2
    assert main(["frobnicate", "--out", str(tmp_path)]) == 2
    assert main(["corrector", "--boundary", "box", "--L", "6", "--out", str(tmp_path)]) == 2


def test_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("seed: 9\nmodel: {L: 10, ell_max: 5}\nsobolev: {trials: 3, R: 5}\n")
    out = tmp_path / "a"
    assert main(["sobolev", "--config", str(cfg), "--R", "4", "--out", str(out), "--no-plots"]) == 0
    conf = _read_json(out / "manifest.json")["config"]
    assert conf["seed"] == 9 and conf["L"] == 10 and conf["ell_max"] == 5.0
    assert conf["trials"] == 3 and conf["R"] == 4.0
    out = tmp_path / "b"
    assert main(["sobolev", "--config", str(cfg), "--seed", "2", "--out", str(out), "--no-plots"]) == 0
    assert _read_json(out / "manifest.json")["config"]["seed"] == 2


def test_config_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("sobolev: {trails: 3}\n")
    assert main(["sobolev", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2
    cfg.write_text("mystery: 1\n")
    assert main(["moments", "--config", str(cfg), "--out", str(tmp_path / "y")]) == 2
    err = _read_json(tmp_path / "y" / "error.json")
    assert "mystery" in err["message"]


@given(st.floats(allow_nan=True, allow_infinity=True))
def test_fmt_round_trips(x):
    s = fmt(x)
    back = float(s)
    assert (math.isnan(x) and math.isnan(back)) or back == x


def test_json_non_finite_as_strings():
    text = dumps({"a": math.inf, "b": [1.5, math.nan], "c": None})
    obj = json.loads(text)
    assert obj == {"a": "inf", "b": [1.5, "nan"], "c": None}


@pytest.mark.parametrize("command", ["wphi", "walk", "sobolev"])
def test_reruns_are_byte_identical(tmp_path, command):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(cli_cases.argv(command, a)) == 0
    assert main(cli_cases.argv(command, b)) == 0
    assert cli_cases.artifacts(a) == cli_cases.artifacts(b)
    assert cli_cases.stable_manifest(a) == cli_cases.stable_manifest(b)


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "rcmlab", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("rcm-lab ")
    res = subprocess.run([sys.executable, "-m", "rcmlab", "moments", "--L", "4", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and (tmp_path / "moments.csv").exists()
