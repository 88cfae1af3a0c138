import json

import pytest

from dlczqkd import cli


def run(capsys, *argv):
    code = cli.run(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_link_metrics_csv(capsys):
    code, out, _ = run(capsys, "link-metrics", "--pc", "0.01", "--distance-km", "1", "--l-att-km", "1e15", "--eta-d", "0.5", "--detector", "pnrd")
    assert code == 0
    header, row = out.strip().splitlines()
    values = dict(zip(header.split(","), row.split(",")))
    assert float(values["fidelity"]) == pytest.approx(0.985075, abs=1e-6)


def test_qkd_rate_both_detectors_and_scenarios(capsys):
    code, out, _ = run(capsys, "qkd-rate", "--distance-km", "150")
    assert code == 0
    assert len(out.strip().splitlines()) == 1 + 4


def test_repeater_metrics_json(capsys):
    code, out, _ = run(capsys, "repeater-metrics", "--format", "json", "--detector", "nrpd")
    assert code == 0
    doc = json.loads(out)
    assert doc["rows"][0]["detector"] == "nrpd"


def test_optimal_pc(capsys):
    code, out, _ = run(capsys, "optimal-pc", "--distance-km", "200", "--detector", "pnrd", "--scenario", "direct")
    assert code == 0
    assert "golden" in out


def test_usage_errors(capsys):
    assert run(capsys, "nonsense")[0] == cli.EXIT_USAGE
    assert run(capsys, "qkd-rate", "--pc", "2.0")[0] == cli.EXIT_USAGE
    assert run(capsys, "qkd-rate", "--detector", "ccd")[0] == cli.EXIT_USAGE
    assert run(capsys, "sweep")[0] == cli.EXIT_USAGE
    assert run(capsys, "qkd-rate", "--config", "/nonexistent/c.json")[0] == cli.EXIT_USAGE


def test_config_file_and_out_dir(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"detector": "pnrd", "scenario": "direct",
                               "axes": [{"name": "L_km", "min": 100, "max": 200, "points": 2}]}))
    code, _, _ = run(capsys, "sweep", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert code == 0
    lines = (tmp_path / "o" / "sweep.csv").read_text().splitlines()
    assert len(lines) == 3


def test_flags_override_config(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"pc": 0.05, "detectors": ["pnrd", "nrpd"]}))
    code, out, _ = run(capsys, "link-metrics", "--config", str(cfg), "--pc", "0.02", "--detector", "nrpd")
    assert code == 0
    rows = out.strip().splitlines()[1:]
    assert len(rows) == 1 and ",0.02," in rows[0]


def test_numerical_failure_exit_code(monkeypatch, capsys):
    from dlczqkd.gaussian import EngineError

    def boom(cfg):
        raise EngineError("forced")

    monkeypatch.setitem(cli.TABLES, "qkd-rate", boom)
    code, _, err = run(capsys, "qkd-rate")
    assert code == cli.EXIT_NUMERIC and "forced" in err


def test_validation_failure_exit_code(monkeypatch, capsys):
    from dlczqkd import validate

    class Failed:
        passed = False

        def text(self):
            return "FAIL forced"

        def to_dict(self):
            return {}

    monkeypatch.setattr(validate, "validate", lambda progress=None: Failed())
    assert run(capsys, "validate")[0] == cli.EXIT_VALIDATION
