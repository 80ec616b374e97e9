import os
from pathlib import Path

import numpy as np
import pytest

from tofusim import cli
from tofusim.propagator import PropagationError
from tofusim.rfgen import read_waveform

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
PAIR = str(CONFIGS / "alanine_pair.toml")
THREE = str(CONFIGS / "three_spin.toml")
SMALL = "golden-spiral:4:2"


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_shape_writes_manifest_and_samples(tmp_path):
    assert run("shape", "--config", PAIR, "--out", tmp_path, "--format", "three-column") == cli.EXIT_OK
    path = tmp_path / "tofu_three-column.shape"
    text = path.read_text()
    assert "manifest config_sha256" in text and "B_over_wr = 3" in text
    w = read_waveform(path)
    assert len(w) == 200


def test_dephase_table_round_trip_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run("dephase", "--config", PAIR, "--out", d, "--powder", SMALL, "--threads", 2) == 0
    raw = (a / "dephase.csv").read_bytes()
    assert raw == (b / "dephase.csv").read_bytes()
    header, cols = cli.read_table(a / "dephase.csv")
    assert list(cols) == ["T_seconds", "T_rotor_periods", "I_main", "I_reference"]
    assert cols["T_rotor_periods"][1:] == pytest.approx(16 * np.arange(1, 16))
    assert cols["T_rotor_periods"][-1] == 240
    assert header["command"] == "dephase"
    assert header["powder"] == SMALL
    assert "wall_time_s" not in header


def test_record_time_adds_wall_time(tmp_path):
    assert run("chart", "--out", tmp_path, "--record-time") == 0
    header, _ = cli.read_table(tmp_path / "chart.csv")
    assert float(header["wall_time_s"]) >= 0.0


def test_chart_defaults_and_fit_round_trip(tmp_path, capsys):
    assert run("chart", "--out", tmp_path) == 0
    _, cols = cli.read_table(tmp_path / "chart.csv")
    names = [k for k in cols if k.startswith("eta_")]
    assert names[0] == "eta_1.00A" and names[-1] == "eta_6.00A" and len(names) == 11
    capsys.readouterr()
    assert run("fit", "--input", tmp_path / "chart.csv", "--column", "eta_2.50A", "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "r_angstrom = 2.50" in out and "flag = ok" in out
    assert (tmp_path / "fit.txt").read_text().startswith("# tool = tofusim")


def test_fit_reads_main_reference_pairs(tmp_path, capsys):
    assert run("dephase", "--config", PAIR, "--out", tmp_path, "--powder", "golden-spiral:8:3") == 0
    capsys.readouterr()
    assert run("fit", "--input", tmp_path / "dephase.csv") == 0
    out = capsys.readouterr().out
    assert "series = eta_I" in out


def test_fit_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("# tool = x\nT_seconds,foo\n0.0,1.0\n")
    assert run("fit", "--input", bad) == cli.EXIT_CONFIG
    assert run("fit", "--input", tmp_path / "missing.csv") == cli.EXIT_CONFIG


def test_check_reports_resonance(tmp_path, capsys):
    assert run("check", "--config", THREE) == 0
    out = capsys.readouterr().out
    assert "I1: warn" in out
    assert "B = 4C + 2wr" in out
    assert "status = warn" in out


def test_fig1b_columns(tmp_path):
    assert run("fig1b", "--out", tmp_path, "--n-max", 2) == 0
    header, cols = cli.read_table(tmp_path / "fig1b.csv")
    assert set(cols) >= {"I3_tofu_main", "I3_tofu_control", "I3_postc7"}
    assert len(cols["I3_postc7"]) == 3
    assert header["control"] == "I2 removed"


def test_condition_flag_overrides(tmp_path):
    setup = cli.load_run(PAIR, condition="half", powder=SMALL, detection="abs")
    assert setup.params.tofu.condition == "half"
    assert setup.detection == "abs"
    assert len(setup.powder) == 8


@pytest.mark.parametrize(
    "extra, body",
    [
        ((), "[experiment]\nwobble = 1\n"),
        ((), "[experiment]\ndetection = 'phase'\n"),
        ((), "[experiment]\nlayouts = ['sideways']\n"),
        (("--powder", "nonsense:1:1"), ""),
        ((), "[experiment]\nb_over_wr = 0.5\n"),
    ],
)
def test_config_errors_exit_two(tmp_path, extra, body):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[[spin]]\nlabel = "S"\n[[spin]]\nlabel = "I"\n' + body)
    assert run("dephase", "--config", cfg, "--out", tmp_path, *extra) == cli.EXIT_CONFIG


def test_missing_config_exit_two(tmp_path):
    assert run("dephase", "--config", tmp_path / "none.toml", "--out", tmp_path) == cli.EXIT_CONFIG


@pytest.mark.skipif(os.geteuid() == 0, reason="permission bits are not enforced for root")
def test_unwritable_output_exit_two(tmp_path):
    locked = tmp_path / "locked"
    locked.mkdir(mode=0o500)
    assert run("chart", "--out", locked / "sub") == cli.EXIT_CONFIG


def test_output_path_is_a_file_exit_two(tmp_path):
    f = tmp_path / "file"
    f.write_text("")
    assert run("chart", "--out", f) == cli.EXIT_CONFIG


def test_numerical_failure_exit_three(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise PropagationError("crystallites 0..3: propagator not unitary")

    monkeypatch.setattr(cli, "run_dephasing_series", boom)
    assert run("dephase", "--config", PAIR, "--out", tmp_path, "--powder", SMALL) == cli.EXIT_NUMERIC


def test_table_writer_round_trip(tmp_path):
    m = cli.RunManifest("demo", parameters={"x": "1"})
    cols = {"a": np.array([0.1, 1 / 3]), "b": np.array([np.nan, -2.5e-17])}
    cli.write_table(tmp_path / "t.csv", m, cols)
    header, back = cli.read_table(tmp_path / "t.csv")
    assert header["x"] == "1"
    assert np.array_equal(back["a"], cols["a"])
    assert np.isnan(back["b"][0]) and back["b"][1] == cols["b"][1]
