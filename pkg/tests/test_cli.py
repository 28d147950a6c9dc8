import json

import numpy as np
import pytest

from conftest import heat_dict, jump_two_mode_dict
from switchpide.cli import main
from switchpide.outputs import csv_text, fmt, sha256_file


def write(tmp_path, name, data):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


@pytest.fixture
def ok_spec(tmp_path):
    return write(tmp_path, "ok.json", jump_two_mode_dict())


@pytest.fixture
def loop_spec(tmp_path):
    return write(tmp_path, "loop.json", {
        "dims": {"n": 1, "m": 2, "T": 1}, "p": 2, "K": 2, "modes": [{}, {}],
        "costs": [[0, 1], [-1, 0]], "terminal": ["0", "0"],
    })


def test_validate_ok(ok_spec, capsys):
    assert main(["validate", "--spec", ok_spec]) == 0
    out = capsys.readouterr().out
    assert "all 6 assumption groups passed" in out
    for tag in ("F2", "F3", "O1", "O2", "O3", "G"):
        assert f"({tag}) pass" in out


def test_validate_loop_fails_with_tag(loop_spec, capsys):
    assert main(["validate", "--spec", loop_spec]) == 2
    captured = capsys.readouterr()
    assert "(O1)" in captured.err
    assert "(O1) FAIL" in captured.out


def test_solve_refuses_invalid_problem(loop_spec, tmp_path, capsys):
    assert main(["solve", "--spec", loop_spec, "--box=-1,1", "--grid", "11,5", "--out", str(tmp_path / "o")]) == 2
    assert "(O1)" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        ["validate", "--spec", "X", "--bogus"],
        ["frobnicate"],
        [],
        ["solve", "--spec", "X", "--grid", "abc"],
    ],
)
def test_usage_errors_exit_64(argv, ok_spec):
    argv = [ok_spec if a == "X" else a for a in argv]
    assert main(argv) == 64


def test_malformed_spec_exit_64(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["validate", "--spec", str(bad)]) == 64
    assert main(["validate", "--spec", write(tmp_path, "missing.json", {"dims": {"n": 1}})]) == 64
    assert main(["validate", "--spec", str(tmp_path / "absent.json")]) == 64


def test_runtime_error_exit_1(tmp_path, capsys):
    spec = write(tmp_path, "heat.json", heat_dict(21, 5))
    assert main(["verify", "reg", "--spec", spec]) == 1
    assert "dyadic" in capsys.readouterr().err


def test_solve_heat_end_to_end(tmp_path):
    spec = write(tmp_path, "heat.json", heat_dict())
    out = tmp_path / "run"
    assert main(["solve", "--spec", spec, "--grid", "301,201", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["diagnostics.json", "manifest.json", "mode_0.csv"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["spec_sha256"] == sha256_file(spec)
    assert manifest["outputs"] == ["diagnostics.json", "mode_0.csv"]
    rows = np.genfromtxt(out / "mode_0.csv", delimiter=",", names=True)
    at = rows[(rows["t"] == 0.0) & (rows["x0"] == 0.0)]
    assert at["u"][0] == pytest.approx(2.0, abs=1e-3)
    assert np.all(rows["binding_mode"] == -1)
    assert (out / "mode_0.csv").read_bytes().count(b"\r") == 0


def test_outputs_byte_identical_on_rerun(ok_spec, tmp_path):
    for k in (1, 2):
        assert main(["solve", "--spec", ok_spec, "--grid", "31,11", "--out", str(tmp_path / f"r{k}")]) == 0
    for name in ("mode_0.csv", "mode_1.csv", "diagnostics.json"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


def test_mc_oracle_stdout_reproducible(tmp_path, capsys):
    spec = write(tmp_path, "j.json", {
        "dims": {"n": 1, "m": 1, "T": 1}, "p": 2, "K": 4, "modes": [{"sigma": 1}],
        "jumps": [{"kind": "finite-atoms", "atoms": [1.0], "weights": [1.0]}],
        "costs": [[0]], "terminal": ["x**2"],
    })
    outs = []
    for _ in range(2):
        assert main(["oracle", "mc", "--spec", spec, "--paths", "2000", "--seed", "5", "--threads", "2"]) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]
    assert outs[0].startswith("estimate,se,paths,seed\n")


def test_other_commands_run(ok_spec, tmp_path, capsys):
    plan = write(tmp_path, "plan.json", {"magnitude": 0.01, "directions": {"g": "1+exp(-x**2)"}})
    cases = [
        ["close-costs", "--spec", ok_spec, "--x", "0.5", "--x", "1"],
        ["quadrature-report", "--spec", ok_spec],
        ["barrier", "--spec", ok_spec, "--grid", "5,3"],
        ["calibrate", "--spec", ok_spec, "--grid", "7,3", "--out", str(tmp_path / "cal")],
        ["verify", "cd", "--spec", ok_spec, "--plan", plan, "--grid", "31,11"],
        ["verify", "cmp", "--spec", ok_spec, "--plan", plan, "--grid", "31,11"],
    ]
    for argv in cases:
        assert main(argv) == 0, argv
    out = capsys.readouterr().out
    assert "x0,t,c00,c01,c10,c11" in out
    assert (tmp_path / "cal" / "manifest.json").exists()


def test_dp_oracle_command(tmp_path, capsys):
    spec = write(tmp_path, "sw.json", {
        "dims": {"n": 1, "m": 2, "T": 1}, "p": 2, "K": 2, "modes": [{"f": 0}, {"f": 1}],
        "costs": [[0, 0.6], [0.6, 0]], "terminal": ["0", "0"],
    })
    assert main(["oracle", "dp", "--spec", spec, "--x0", "0"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "mode,value"
    assert float(out[1].split(",")[1]) == pytest.approx(0.4, abs=1e-12)


def test_float_format():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(True) == "1"
    assert csv_text(["a", "b"], [[1, 2.5]]) == "a,b\n1,2.5\n"
