import json
import subprocess
import sys
from pathlib import Path

import pytest

from stochapprox.cli import main

DATA = Path(__file__).parent / "data"


def run_cli(*argv):
    return main([str(a) for a in argv])


# -- run -------------------------------------------------------------------------

def test_run_reports_one_entry_per_seed(tmp_path):
    out = tmp_path / "r.json"
    assert run_cli("run", "--spec", "builtin:rm-linear", "--seeds", "0..9", "--horizon", 1000,
                   "--no-timestamp", "--out", out) == 0
    rep = json.loads(out.read_text())
    assert rep["schema_version"] == 1
    assert len(rep["per_seed"]) == 10
    assert [s["seed"] for s in rep["per_seed"]] == list(range(10))
    assert "timestamp" not in rep


def test_run_is_byte_identical(tmp_path):
    outs = []
    for i, jobs in enumerate((1, 1, 3)):
        out = tmp_path / f"r{i}.json"
        run_cli("run", "--spec", "builtin:rm-linear", "--seeds", "0..149", "--horizon", 500,
                "--checkpoints", "10,100", "--jobs", jobs, "--no-timestamp", "--out", out)
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_run_timestamp_is_opt_out(tmp_path):
    out = tmp_path / "r.json"
    run_cli("run", "--spec", "builtin:rm-linear", "--seeds", "0..1", "--horizon", 10, "--out", out)
    assert "timestamp" in json.loads(out.read_text())


def test_run_seed_base_shifts_seeds(tmp_path):
    out = tmp_path / "r.json"
    run_cli("--seed-base", 100, "run", "--spec", "builtin:rm-linear", "--seeds", "0..2", "--horizon", 10,
            "--no-timestamp", "--out", out)
    rep = json.loads(out.read_text())
    assert rep["seeds"] == {"first": 100, "last": 102, "count": 3}


def test_run_writes_trajectory_csv(tmp_path):
    run_cli("run", "--spec", "builtin:rm-linear", "--seeds", "3..4", "--horizon", 20, "--no-timestamp",
            "--out", tmp_path / "r.json", "--trajectories", tmp_path / "tr")
    lines = (tmp_path / "tr" / "seed_3.csv").read_text().splitlines()
    assert lines[0] == "n,x,t,w"
    assert len(lines) == 21
    assert lines[-1].endswith(",,")


def test_run_missing_spec_file(tmp_path, capsys):
    assert run_cli("run", "--spec", tmp_path / "nope.json") == 2
    assert "nope.json" in capsys.readouterr().err


@pytest.mark.parametrize("seeds", ["5..2", "a..b", "-1..3"])
def test_run_bad_seed_range(seeds):
    assert run_cli("run", "--spec", "builtin:rm-linear", "--seeds", seeds) == 2


def test_run_unknown_builtin():
    assert run_cli("run", "--spec", "builtin:nope") == 2


def test_run_problem_file_with_csv_schedule(tmp_path):
    (tmp_path / "a.csv").write_text("n,value\n" + "".join(f"{n},{1 / (n + 1)!r}\n" for n in range(1, 101)))
    (tmp_path / "p.json").write_text(json.dumps({
        "schema_version": 1, "id": "csv-rm", "type": "rm", "M": {"name": "linear", "params": {"k": 2, "c": 1}},
        "noise": {"kind": "zero"}, "schedule": {"csv": "a.csv"}, "x0": 0,
    }))
    out = tmp_path / "r.json"
    assert run_cli("run", "--spec", tmp_path / "p.json", "--seeds", "0..0", "--horizon", 100,
                   "--no-timestamp", "--out", out) == 0
    assert json.loads(out.read_text())["spec_id"] == "csv-rm"


# -- check -------------------------------------------------------------------------

def test_check_certified_instance(tmp_path):
    out = tmp_path / "l.json"
    assert run_cli("check", "--spec", "builtin:rm-linear", "--params", DATA / "params_blum.json",
                   "--no-timestamp", "--out", out) == 0
    led = json.loads(out.read_text())
    assert led["overall"] == "pass"
    assert set(led["hypotheses"]) == {"H7", "H8", "H10", "H11", "H12", "H13", "H14", "H15", "H16"}
    assert led["hypotheses"]["H7"]["status"] == "pass"


def test_check_gamma_zero_fails_h15(tmp_path, capsys):
    out = tmp_path / "l.json"
    assert run_cli("check", "--spec", "builtin:rm-linear", "--params", DATA / "params_gamma_zero.json",
                   "--no-timestamp", "--out", out) == 1
    led = json.loads(out.read_text())
    assert [t for t, e in led["hypotheses"].items() if e["status"] == "fail"] == ["H15"]
    assert "H15: fail" in capsys.readouterr().err


def test_check_malformed_params(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run_cli("check", "--spec", "builtin:rm-linear", "--params", bad) == 2


@pytest.mark.parametrize("params", [
    {"schema_version": 2, "construction": "blum"},
    {"construction": "magic"},
    {"alpha": "inv_n", "beta": "zero"},
    {"construction": "blum", "config": {"no_such_key": 1}},
    {"alpha": "inv_n", "beta": "zero", "gamma": "inv_n", "mode": "strong"},
])
def test_check_invalid_params_are_config_errors(tmp_path, params):
    f = tmp_path / "p.json"
    f.write_text(json.dumps(params))
    assert run_cli("check", "--spec", "builtin:rm-linear", "--params", f) == 2


def test_check_weak_mode_flag(tmp_path):
    out = tmp_path / "l.json"
    run_cli("check", "--spec", "builtin:rm-linear", "--params", DATA / "params_blum.json", "--mode", "weak",
            "--no-timestamp", "--out", out)
    assert json.loads(out.read_text())["mode"] == "weak"


# -- series / finprob ----------------------------------------------------------------

def test_series_rm_check_three_lines(capsys):
    assert run_cli("series", "rm-check", "--a", "harmonic1", "--horizon", 100_000) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3
    assert all("PASS" in ln for ln in lines)


def test_series_rm_check_flags_nonsummable_squares(capsys):
    assert run_cli("series", "rm-check", "--a", "inv_sqrt", "--horizon", 100_000) == 1
    lines = capsys.readouterr().out.splitlines()
    assert "FAIL" in lines[2] and "PASS" in lines[1]


def test_series_abel_dini_and_dubois(tmp_path, capsys):
    assert run_cli("series", "abel-dini", "--a", "one", "--horizon", 1000, "--out", tmp_path / "rho.csv") == 0
    assert "sum a_n rho_n" in capsys.readouterr().out
    assert (tmp_path / "rho.csv").read_text().splitlines()[0] == "n,value"
    assert run_cli("series", "dubois", "--a", "inv_n2", "--horizon", 1000) == 0


def test_series_unknown_sequence():
    assert run_cli("series", "rm-check", "--a", "nope") == 2


def test_finprob_selftest(capsys):
    assert run_cli("finprob", "selftest", "--trials", 1000, "--seed", 7) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_unknown_subcommand_exits_2():
    assert main(["frobnicate"]) == 2
    assert main(["run"]) == 2


def test_console_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "stochapprox", "series", "rm-check", "--a", "harmonic1",
                        "--horizon", "100000"], capture_output=True, text=True)
    assert r.returncode == 0
    assert len(r.stdout.splitlines()) == 3
    r = subprocess.run([sys.executable, "-m", "stochapprox", "bogus"], capture_output=True, text=True)
    assert r.returncode == 2
