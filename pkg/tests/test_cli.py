import json
import subprocess
import sys

import pytest

from homoglab.cli import main

BASE = """
[ensemble]
kind = "gaussian"
spectrum = "PowerLaw"
beta = 1.0
[grid]
d = 2
L = 32
[campaign]
kind = "Ahom"
radii = [2, 3, 4]
eps = [0.25, 0.125, 0.0625]
resolution = 2
[sampling]
N = 8
master_seed = 5
"""


@pytest.fixture
def cfg(tmp_path, monkeypatch):
    monkeypatch.setenv("HOMOGLAB_CACHE", str(tmp_path / "cache"))
    path = tmp_path / "exp.toml"
    path.write_text(BASE + f'[output]\ndir = "{tmp_path / "out"}"\n')
    return path


def run(*args):
    return main([str(a) for a in args])


def test_generate_and_corrector(cfg, tmp_path, capsys):
    assert run("generate", "--config", cfg, "--count", 2, "--threads", 1) == 0
    media = json.loads((tmp_path / "out" / "media.json").read_text())
    assert [s["index"] for s in media["samples"]] == [0, 1]
    assert (tmp_path / "out" / "medium_0001.hglb").exists()
    assert run("corrector", "--config", cfg, "--index", 1) == 0
    assert (tmp_path / "out" / "corrector_0001" / "corrector.json").exists()
    assert "ahom_sample" in capsys.readouterr().out


@pytest.mark.parametrize("command,kind", [("appendix-a", "AppendixA"), ("growth", "Growth"), ("avg-decay", "AvgDecay")])
def test_campaign_subcommands_override_kind(cfg, tmp_path, command, kind):
    out = tmp_path / command
    assert run(command, "--config", cfg, "--out", out, "--threads", 2) == 0
    assert json.loads((out / "report.json").read_text())["kind"] == kind
    assert run("plotdata", "--config", cfg, "--out", out) == 0
    assert (out / "plotdata" / "series.csv").exists()


def test_two_scale_and_probe(cfg, tmp_path):
    assert run("two-scale", "--config", cfg, "--out", tmp_path / "ts", "--threads", 1) == 0
    assert (tmp_path / "ts" / "plotdata").exists() is False
    assert run("plotdata", "--config", cfg, "--out", tmp_path / "ts") == 0
    assert (tmp_path / "ts" / "plotdata" / "ratio.csv").exists()
    assert run("helmholtz-probe", "--config", cfg, "--out", tmp_path / "hp") == 0


def test_seed_override_changes_hash(cfg, tmp_path):
    run("ahom", "--config", cfg, "--out", tmp_path / "a")
    run("ahom", "--config", cfg, "--out", tmp_path / "b", "--seed", 6)
    ha = json.loads((tmp_path / "a" / "manifest.json").read_text())["config_hash"]
    hb = json.loads((tmp_path / "b" / "manifest.json").read_text())["config_hash"]
    assert ha != hb


def test_config_errors_exit_64(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[grid]\nd = 7\n[sampling]\nN = -1\n")
    assert run("ahom", "--config", bad) == 64
    err = capsys.readouterr().err
    assert "grid" in err and "sampling.N" in err
    broken = tmp_path / "broken.toml"
    broken.write_text("[grid\n")
    assert run("ahom", "--config", broken) == 64
    assert "line 1" in capsys.readouterr().err
    assert run("ahom", "--config", tmp_path / "missing.toml") == 64


def test_plotdata_without_report_fails(cfg, tmp_path):
    assert run("plotdata", "--config", cfg, "--out", tmp_path / "nothing") == 1


def test_unwritable_output_is_a_hard_failure(cfg, tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert run("appendix-a", "--config", cfg, "--out", blocker / "x") == 1


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "homoglab.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for name in ("generate", "two-scale", "helmholtz-probe", "plotdata"):
        assert name in out.stdout
