import csv
import subprocess
import sys

import pytest

from nacond.anaconda import load_constants
from nacond.cli import EXIT_FAIL, EXIT_PASS, EXIT_USAGE, main

FAST = ["--n", "64", "--eps", "0.5", "--trials", "20", "--parallel", "1", "--no-timing"]


def test_uniformity_pass(tmp_path, capsys):
    out = tmp_path / "r.csv"
    code = main(["test-uniformity", *FAST, "--fixture", "uniform", "--out", str(out)])
    assert code == EXIT_PASS
    assert "PASS" in capsys.readouterr().out
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 20 and all(r["truth"] == "Equal" for r in rows)


def test_statistical_failure(tmp_path):
    cfg = tmp_path / "weak.cfg"
    cfg.write_text("c_T=0.1\nc_m=0.1\nc_eps=0.9\n")
    code = main(["test-uniformity", *FAST, "--fixture", "paninski", "--constants", str(cfg)])
    assert code == EXIT_FAIL


@pytest.mark.parametrize(
    "argv",
    [
        ["test-uniformity", "--n", "63", "--eps", "0.5", "--fixture", "paninski", "--parallel", "1"],
        ["test-uniformity", "--n", "64", "--eps", "0.5", "--fixture", "ramp-within", "--parallel", "1"],
        ["test-uniformity", "--n", "64", "--eps", "0.5", "--constants", "/nonexistent.cfg"],
        ["test-identity", "--n", "64", "--eps", "0.5", "--fixture", "file", "--parallel", "1"],
        ["test-equivalence", "--eps", "0.5"],
        ["verify", "--lemma", "nope"],
        ["bogus"],
    ],
)
def test_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


def test_help_exits_zero(capsys):
    assert main(["--help"]) == EXIT_PASS
    assert "test-uniformity" in capsys.readouterr().out


def test_verify_single(capsys):
    assert main(["verify", "--lemma", "dkw"]) == EXIT_PASS
    assert "[PASS] dkw" in capsys.readouterr().out


def test_calibrate_writes_loadable(tmp_path, capsys):
    out = tmp_path / "c.cfg"
    argv = ["calibrate", "--mode", "uniformity", "--n", "64", "--eps", "0.5", "--trials", "20",
            "--parallel", "1", "--budget", "40", "--out", str(out)]
    assert main(argv) == EXIT_PASS
    c = load_constants(out)
    assert out.read_text().startswith("# calibrated: mode=uniformity n=64")
    assert c.c_T > 0 and c.c_m > 0


def test_calibrate_budget_exhausted(capsys):
    argv = ["calibrate", "--mode", "uniformity", "--n", "64", "--eps", "0.5", "--budget", "0", "--parallel", "1"]
    assert main(argv) == EXIT_FAIL
    assert "FAIL" in capsys.readouterr().out


def test_entry_point():
    res = subprocess.run([sys.executable, "-m", "nacond.cli", "verify", "--lemma", "good-set"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "[PASS] good-set" in res.stdout
