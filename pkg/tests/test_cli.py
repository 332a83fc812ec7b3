import json

import pytest

from ppnsim import cli
from ppnsim.integrate import IntegrationError


def run_cli(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = cli.main([*argv, "--out", str(out)])
    return code, out


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_simulate_writes_trace_and_manifest(tmp_path):
    code, out = run_cli(tmp_path, "simulate", "--protocol", "SDP", "--override", "protocol.total=300")
    assert code == 0
    man = manifest(out)
    assert man["schema_version"] == 1 and man["exit_status"] == 0
    assert "trace.csv" in man["files"]
    assert man["summary"]["n_spikes"] == 2
    assert set(man["versions"]) >= {"ppnsim", "numpy", "scipy", "python"}


def test_simulation_output_is_byte_identical(tmp_path):
    args = ("simulate", "--protocol", "PIF", "--variant", "NC", "--override", "protocol.total=300")
    _, a = run_cli(tmp_path, *args, name="a")
    _, b = run_cli(tmp_path, *args, name="b")
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()


def test_usage_errors_exit_2(tmp_path):
    assert run_cli(tmp_path, "simulate", "--protocol", "SDP", "--override", "protocol.total=0")[0] == 2
    code, out = run_cli(tmp_path, "simulate", "--protocol", "SDP", "--override", "g_Foo=1", name="bad")
    assert code == 2
    err = json.loads((out / "error.json").read_text())
    assert err["exit_status"] == 2 and "g_Foo" in err["message"]
    assert run_cli(tmp_path, "simulate", "--override", "novalue", name="c")[0] == 2
    assert run_cli(tmp_path, "reproduce", "fig99", name="d")[0] == 2
    assert cli.main(["no-such-command"]) == 2


def test_missing_config_file(tmp_path):
    code, _ = run_cli(tmp_path, "simulate", "--config", str(tmp_path / "nope.json"))
    assert code == 2


def test_config_file_and_flags_merge(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"protocol": "SDP", "protocol_overrides": {"total": 300.0}}))
    code, out = run_cli(tmp_path, "simulate", "--config", str(cfg), "--override", "protocol.step_level=-0.55")
    assert code == 0
    man = manifest(out)
    assert man["config"]["protocol_overrides"] == {"total": 300.0, "step_level": -0.55}
    assert man["summary"]["n_spikes"] == 0


def test_numeric_failure_exits_3(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise IntegrationError("solver failed", t_last=12.0)

    monkeypatch.setattr(cli, "run", boom)
    code, out = run_cli(tmp_path, "simulate", "--protocol", "SDP")
    assert code == 3
    assert json.loads((out / "error.json").read_text())["error"] == "IntegrationError"


def test_sweep_accepts_negative_values(tmp_path):
    code, out = run_cli(
        tmp_path, "sweep", "--protocol", "SDP", "--param", "protocol.step_level", "--values=-0.55,-0.415",
        "--override", "protocol.total=400", "--jobs", "1",
    )
    assert code == 0
    assert manifest(out)["summary"]["points"] == 2


def test_nondim_report_uses_preset(tmp_path):
    code, out = run_cli(tmp_path, "nondim-report", "--variant", "NC", "--context", "SDP")
    assert code == 0
    files = manifest(out)["files"]
    rep = json.loads((out / next(f for f in files if f.endswith(".json"))).read_text())
    assert rep["preset"] == "table"


def test_continue_reports_hopf(tmp_path):
    code, out = run_cli(tmp_path, "continue", "--variant", "NC", "--block", "Na", "--range", "0", "2", "--ds-max", "0.05")
    assert code == 0
    kinds = [k for k, _ in manifest(out)["summary"]["special"]]
    assert "Hopf" in kinds


def test_reproduce_single_scenario(tmp_path, capsys):
    code, out = run_cli(tmp_path, "reproduce", "fig9nc")
    assert code == 0
    assert "checks passed" in capsys.readouterr().out
    assert (out / "summary.json").exists()


@pytest.mark.parametrize("text, expected", [("1.5", 1.5), ("true", True), ("Na", "Na"), ("null", None)])
def test_parse_value(text, expected):
    assert cli.parse_value(text) == expected
