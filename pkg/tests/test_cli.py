import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from fibertweezer.cli import main, parse_power, run
from fibertweezer.config import ConfigError, RunConfig, load_config, parse_config

ROOT = Path(__file__).resolve().parents[1]
DEFAULT = ROOT / "configs" / "default.yaml"


def _cfg(tmp_path, data, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_shipped_config_equals_defaults():
    cfg, ref = load_config(DEFAULT), RunConfig()
    for name in ref.__dataclass_fields__:
        assert getattr(cfg, name) == getattr(ref, name), name


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        parse_config({"beam": {"waist_w0": 1.4e-6, "wavelength": 810e-9, "power": 1e-3,
                               "waste": 1}})
    with pytest.raises(ConfigError, match="unknown"):
        parse_config({"colour": "red"})


def test_invariants_checked_at_parse_time():
    with pytest.raises(ConfigError):
        parse_config({"beam": {"waist_w0": 0.3e-6, "wavelength": 810e-9, "power": 1e-3}})
    with pytest.raises(ConfigError):
        parse_config({"hbt": {"splitter_ratio": 1.5}})
    with pytest.raises(ConfigError):
        parse_config({"detectors": [{"efficiency": 0.5}]})
    with pytest.raises(ConfigError):
        parse_config({"seed": -1})


def test_exponent_strings_are_numbers():
    cfg = parse_config(yaml.safe_load("chop:\n  time_step: 1e-9\n"))
    assert cfg.chop.time_step == 1e-9


def test_parse_power():
    assert parse_power("13.8mW") == pytest.approx(13.8e-3)
    assert parse_power("0.0138") == pytest.approx(0.0138)
    with pytest.raises(ConfigError):
        parse_power("13.8 furlongs")


def test_trap_params_defaults(tmp_path, capsys):
    assert main(["trap-params", "--config", str(DEFAULT), "--out", str(tmp_path)]) == 0
    d = json.loads((tmp_path / "trap_params.json").read_text())
    assert d["depth_mK"] == pytest.approx(2.8, rel=0.10)
    assert d["radial_frequency_kHz"] == pytest.approx(167, rel=0.05)
    assert d["axial_frequency_kHz"] == pytest.approx(22, rel=0.05)
    assert json.loads(capsys.readouterr().out)["depth_mK"] == d["depth_mK"]


def test_trap_params_power_flag(tmp_path, frozen):
    d = run(["trap-params", "--power", "13.8mW", "--out", str(tmp_path)])
    assert d["depth_mK"] == pytest.approx(frozen["depth_mK_13p8"], rel=1e-6)
    assert d["depth_mK"] == pytest.approx(5.6, rel=0.05)


def test_missing_waist_exit_2(tmp_path, capsys):
    p = _cfg(tmp_path, {"beam": {"wavelength": 810e-9, "power": 6.9e-3}})
    assert main(["trap-params", "--config", str(p), "--out", str(tmp_path)]) == 2
    e = _err(capsys)
    assert e["exit_code"] == 2 and "waist_w0" in e["message"]


def test_bad_arguments_exit_2(tmp_path, capsys):
    assert main(["fly"]) == 2
    assert _err(capsys)["error"] == "UsageError"
    assert main(["budget", "--config", str(tmp_path / "nope.yaml")]) == 2
    assert main(["trap-params", "--power", "lots", "--out", str(tmp_path)]) == 2
    assert main(["fig3a", "--frequencies", "", "--out", str(tmp_path)]) == 2


def test_duration_zero_is_error(tmp_path, capsys):
    p = _cfg(tmp_path, {"telegraph": {"duration": 0}})
    assert main(["fig2", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "duration" in _err(capsys)["message"]


def test_fig2_blockade_off_shows_pairs(tmp_path):
    p = _cfg(tmp_path, {"telegraph": {"blockade": False, "loading_rate": 2.5, "k_max": 4,
                                      "duration": 1000}})
    res = run(["fig2", "--config", str(p), "--out", str(tmp_path)])
    assert res["w2"] > 0.05
    fit = json.loads((tmp_path / "fig2_fit.json").read_text())
    assert fit["generator"]["bin_fractions"][2] > 0.05


def test_fig2_outputs(tmp_path):
    p = _cfg(tmp_path, {"telegraph": {"duration": 200}})
    run(["fig2", "--config", str(p), "--out", str(tmp_path)])
    assert (tmp_path / "fig2_trace.csv").read_text().startswith("bin_start_s,counts")
    assert (tmp_path / "fig2_histogram.csv").read_text().startswith("counts,occurrences")


def test_budget_command(tmp_path):
    d = run(["budget", "--out", str(tmp_path)])
    assert d["average_flux"] == pytest.approx(170, abs=5)
    assert d["spectral_brightness"] == pytest.approx(28.0, abs=0.5)
    assert d["collection_efficiency"] == pytest.approx(0.0068, abs=5e-5)
    assert d["survival_probability"] == pytest.approx(0.86, abs=0.01)
    flux = [s["average_flux"] for s in d["survival_sweep"]]
    assert np.all(np.diff(flux) > 0)


def test_budget_zero_fiber_rate(tmp_path):
    p = _cfg(tmp_path, {"budget": {"fiber_rate": 0}})
    d = run(["budget", "--config", str(p), "--out", str(tmp_path)])
    assert d["fiber_photon_rate"] == 0 and d["average_flux"] == 0
    assert d["spectral_brightness"] == 0 and d["collection_efficiency"] == 0


def test_budget_invalid_sequence_exit_2(tmp_path, capsys):
    p = _cfg(tmp_path, {"sequence": {"pulse_time": 260e-9}})
    assert main(["budget", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "pulse in dipole-on phase" in _err(capsys)["message"]


QUICK = {
    "telegraph": {"duration": 100},
    "chop": {"n_atoms": 6, "max_time": 2e-4, "time_step": 5e-9},
    "hbt": {"n_traj": 2000, "n_pulses": 2_000_000},
}


def _outputs(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


@pytest.mark.parametrize("command, extra", [
    ("trap-params", []), ("budget", []), ("fig2", []),
    ("fig3a", ["--frequencies", "1e6,2e6", "--jobs", "2"]), ("fig4", []),
])
def test_reruns_byte_identical(tmp_path, command, extra):
    p = _cfg(tmp_path, QUICK)
    outs = []
    for i in range(2):
        d = tmp_path / f"run{i}"
        run([command, "--config", str(p), "--seed", "7", "--out", str(d), *extra])
        outs.append(_outputs(d))
    assert outs[0] == outs[1] and outs[0]


def test_seed_changes_output(tmp_path):
    p = _cfg(tmp_path, QUICK)
    run(["fig2", "--config", str(p), "--seed", "1", "--out", str(tmp_path / "a")])
    run(["fig2", "--config", str(p), "--seed", "2", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "fig2_trace.csv").read_bytes() != (tmp_path / "b" / "fig2_trace.csv").read_bytes()


def test_fig3a_outputs(tmp_path):
    p = _cfg(tmp_path, QUICK)
    run(["fig3a", "--config", str(p), "--frequencies", "2e6", "--out", str(tmp_path)])
    lines = (tmp_path / "fig3a_lifetimes.csv").read_text().splitlines()
    assert lines[0] == "frequency_Hz,lifetime_s,fit_error_s,ok" and len(lines) == 2


def test_fig4_outputs(tmp_path):
    p = _cfg(tmp_path, QUICK)
    run(["fig4", "--config", str(p), "--out", str(tmp_path)])
    rep = json.loads((tmp_path / "fig4_p2.json").read_text())
    assert {"raw", "corrected"} <= set(rep)
    assert (tmp_path / "fig4_g2.csv").read_text().startswith("delay_ns,counts,normalized")
    assert (tmp_path / "fig4_overlay.csv").read_text().startswith("delay_ns,model")
    assert (tmp_path / "fig4_streams.bin").stat().st_size % 9 == 0


def test_console_script_json_error(tmp_path):
    p = _cfg(tmp_path, {"beam": {"wavelength": 810e-9, "power": 1e-3}})
    r = subprocess.run([sys.executable, "-m", "fibertweezer.cli", "trap-params",
                        "--config", str(p), "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 2
    assert json.loads(r.stderr)["error"] == "ConfigError"


def test_published_schema_in_sync():
    import jsonschema
    from fibertweezer.config import config_schema
    shipped = json.loads((ROOT / "configs" / "schema.json").read_text())
    assert shipped == config_schema()
    jsonschema.validate(yaml.safe_load(DEFAULT.read_text()), shipped)
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({"beam": {"power": 1e-3}}, shipped)
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({"hbt": {"bins": 3}}, shipped)
