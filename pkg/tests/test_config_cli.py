import json

import numpy as np
import pytest
from click.testing import CliRunner

from ioncavity.atom import Pol, mhz
from ioncavity.cli import main
from ioncavity.config import config_from_dict, load_config, load_toml, preset_text
from ioncavity.params import ConfigError, dd_paper, sd_paper


@pytest.fixture()
def runner():
    return CliRunner()


def _write_sd(tmp_path, edit=None):
    text = preset_text("sd_paper")
    if edit:
        text = edit(text)
    p = tmp_path / "cfg.toml"
    p.write_text(text)
    return p


# configuration files

def test_presets_equal_python_presets():
    assert load_config("sd_paper") == sd_paper()
    assert load_config("dd_paper") == dd_paper()


def test_mhz_and_complex_amplitudes(tmp_path):
    data = load_toml(_write_sd(tmp_path))
    data["params"]["drive"]["peak_rabi"] = 50.0
    data["params"]["drive"]["polarization_amplitudes"]["sigma_plus"] = [0.0, 0.7071067811865475]
    cfg = config_from_dict(data)
    assert cfg.params.drive.peak_rabi == 50.0
    assert cfg.params.drive.polarization_amplitudes[Pol.SIGMA_PLUS] == 0.7071067811865475j
    assert cfg.params.g0 == mhz(0.8)


def test_missing_required_field_named(tmp_path):
    data = load_toml(_write_sd(tmp_path))
    del data["params"]["drive"]["peak_rabi"]
    with pytest.raises(ConfigError, match=r"params\.drive\.peak_rabi"):
        config_from_dict(data)


def test_unknown_field_named(tmp_path):
    data = load_toml(_write_sd(tmp_path))
    data["params"]["cavity"]["finesse"] = 1
    with pytest.raises(ConfigError, match=r"params\.cavity\.finesse.*unknown field"):
        config_from_dict(data)


def test_invalid_value_named(tmp_path):
    data = load_toml(_write_sd(tmp_path))
    data["params"]["cavity"]["fock_cutoff"] = 0
    with pytest.raises(ConfigError, match=r"params\.cavity\.fock_cutoff"):
        config_from_dict(data)


# CLI

def test_missing_field_exit_code(runner, tmp_path):
    cfg = _write_sd(tmp_path, lambda t: t.replace("peak_rabi = {mhz = 11.0}\n", ""))
    res = runner.invoke(main, ["photon", str(cfg), "-o", str(tmp_path / "out")])
    assert res.exit_code == 2
    assert "params.drive.peak_rabi" in res.output
    assert not (tmp_path / "out").exists()


def test_missing_file_exit_code(runner, tmp_path):
    res = runner.invoke(main, ["photon", str(tmp_path / "nope.toml")])
    assert res.exit_code == 2


def test_dry_run_writes_nothing(runner, tmp_path):
    out = tmp_path / "out"
    res = runner.invoke(main, ["photon", "sd_paper", "-o", str(out), "--dry-run"])
    assert res.exit_code == 0
    assert json.loads(res.output)["params"]["scheme"] == "SD"
    assert not out.exists()
    res = runner.invoke(main, ["hom", "dd_paper", "-o", str(out), "--dry-run"])
    assert res.exit_code == 0 and not out.exists()


def test_photon_outputs_and_manifest(runner, tmp_path):
    out = tmp_path / "p"
    res = runner.invoke(main, ["photon", "sd_paper", "-o", str(out)])
    assert res.exit_code == 0, res.output
    for name in ("trajectory.csv", "profile.csv", "summary.json", "manifest.json"):
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text())
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "photon"
    assert man["config_hash"] == sd_paper().config_hash()
    assert set(man["outputs"]) == {"trajectory.csv", "profile.csv", "summary.json"}
    assert man["calibration"]["B_gauss"] == 4.0
    prof = np.loadtxt(out / "profile.csv", delimiter=",", skiprows=1)
    assert np.trapezoid(prof[:, 1], prof[:, 0]) == pytest.approx(1.0, rel=1e-9)
    assert 0 < summary["p_emit"] < 1

    # rerun: identical outputs and run hash
    out2 = tmp_path / "p2"
    runner.invoke(main, ["photon", "sd_paper", "-o", str(out2)])
    man2 = json.loads((out2 / "manifest.json").read_text())
    assert man2["run_hash"] == man["run_hash"]
    assert man2["outputs"] == man["outputs"]


def test_hom_command(runner, tmp_path):
    out = tmp_path / "h"
    res = runner.invoke(main, ["hom", "sd_paper", "-o", str(out), "--grid-n", "64"])
    assert res.exit_code == 0, res.output
    vis = json.loads((out / "visibility.json").read_text())
    assert 0 < vis["visibility"] < 1
    for name in ("g1.csv", "g2.csv", "grid_meta.json", "histogram.csv", "window_curve.csv", "manifest.json"):
        assert (out / name).exists()
    res = runner.invoke(main, ["hom", "sd_paper", "-o", str(tmp_path / "h90"), "--grid-n", "64", "--phi", "90"])
    assert res.exit_code == 0
    vis90 = json.loads((tmp_path / "h90" / "visibility.json").read_text())
    assert abs(vis90["visibility"]) < 1e-12


def test_hom_range_error_exit(runner, tmp_path):
    res = runner.invoke(main, ["hom", "sd_paper", "-o", str(tmp_path / "h"), "--grid-n", "32", "--window", "8"])
    assert res.exit_code == 3
    assert "RangeError" in res.output


def test_sweep_and_dominance_commands(runner, tmp_path):
    spec = tmp_path / "spec.toml"
    spec.write_text('base = "sd_paper"\nomega_mhz = [6.0, 11.0]\ndelta_mhz = [24.0]\ngrid_n = 32\n')
    res = runner.invoke(main, ["sweep", str(spec), "-o", str(tmp_path / "s")])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "s" / "sweep.csv").exists()
    dd_spec = tmp_path / "dd.toml"
    dd_spec.write_text('base = "dd_paper"\nomega_mhz = {start = 4.0, stop = 6.0, num = 2}\n'
                       'delta_mhz = [-24.0]\ngrid_n = 32\n')
    assert runner.invoke(main, ["sweep", str(dd_spec), "-o", str(tmp_path / "d")]).exit_code == 0
    res = runner.invoke(main, ["dominance", str(tmp_path / "s" / "sweep.csv"), str(tmp_path / "d" / "sweep.csv"),
                               "-o", str(tmp_path / "dom")])
    assert res.exit_code == 0, res.output
    rows = (tmp_path / "dom" / "dominance.csv").read_text().splitlines()
    assert len(rows) == 102


def test_sweep_spec_errors(runner, tmp_path):
    spec = tmp_path / "spec.toml"
    spec.write_text('base = "sd_paper"\nomega_mhz = [6.0]\n')
    res = runner.invoke(main, ["sweep", str(spec), "-o", str(tmp_path / "s"), "--dry-run"])
    assert res.exit_code == 2 and "delta_values" in res.output
    spec.write_text('base = "sd_paper"\nomega_mhz = [6.0]\ndelta_mhz = [1.0]\nbogus = 1\n')
    res = runner.invoke(main, ["sweep", str(spec), "--dry-run"])
    assert res.exit_code == 2 and "bogus" in res.output


def test_synth_then_analyze(runner, tmp_path):
    syn = tmp_path / "syn"
    res = runner.invoke(main, ["synth", "sd_paper", "-o", str(syn), "--events", "20000", "--grid-n", "48"])
    assert res.exit_code == 0, res.output
    ana = tmp_path / "ana"
    res = runner.invoke(main, ["analyze", str(syn / "par_stream.csv"), str(syn / "perp_stream.csv"),
                               "--mode", "hom", "-o", str(ana)])
    assert res.exit_code == 0, res.output
    vis = json.loads((ana / "visibility.json").read_text())
    assert 0 < vis["visibility"] < 1 and vis["sigma"] > 0
    res = runner.invoke(main, ["analyze", str(syn / "perp_stream.csv"), "--mode", "profile", "-o", str(ana)])
    assert res.exit_code == 0 and (ana / "profile.csv").exists()
    res = runner.invoke(main, ["analyze", str(syn / "perp_stream.csv"), "--mode", "hbt", "-o", str(ana)])
    assert res.exit_code == 0 and (ana / "hbt.json").exists()


def test_analyze_bad_stream_exit(runner, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("# ioncavity-events v1\n1,100\n9,200\n")
    res = runner.invoke(main, ["analyze", str(bad), "--mode", "profile", "--cycle-period", "7.38",
                               "-o", str(tmp_path / "a")])
    assert res.exit_code == 2
    assert "unknown channel 9 at line 3" in res.output
    res = runner.invoke(main, ["analyze", str(bad), "--mode", "hom"])
    assert res.exit_code == 2
