import json
import math

import pytest

from dlczqkd import study
from dlczqkd.params import Detector, Scenario, SystemParams


def test_optimizer_finds_interior_maximum():
    p = SystemParams(0.01, L_km=200.0)
    opt = study.optimize_pc(p, Scenario.DIRECT)
    assert opt.ok and opt.status == "golden"
    for q in (opt.p_c * 0.98, opt.p_c * 1.02):
        assert study.qkd_report(p.with_(p_c=q), Scenario.DIRECT).rate <= opt.rate * (1 + 1e-12)


def test_optimizer_stable_under_grid_refinement():
    p = SystemParams(0.01, L_km=300.0, detector=Detector.NRPD)
    a = study.optimize_pc(p, Scenario.DIRECT)
    b = study.optimize_pc(p, Scenario.DIRECT, settings=study.OptimizerSettings(grid_points=2 * study.GRID_POINTS))
    assert abs(a.p_c - b.p_c) < 1e-3 * a.p_c


def test_optimizer_reports_no_positive_rate():
    p = SystemParams(0.01, L_km=100.0, eta_m=0.01)
    opt = study.optimize_pc(p, Scenario.REPEATER, settings=study.OptimizerSettings(p_min=0.15, p_max=0.9))
    assert not opt.ok and opt.status == study.NO_POSITIVE_RATE
    assert math.isnan(opt.p_c)


def test_optimizer_settings_validation():
    with pytest.raises(ValueError):
        study.OptimizerSettings(grid_points=10)
    with pytest.raises(ValueError):
        study.OptimizerSettings(p_min=0.3, p_max=0.2)


def test_optimum_flat_qber_and_pc():
    # the optimum is roughly distance independent at long range
    opts = [study.optimize_pc(SystemParams(0.01, L_km=L), Scenario.DIRECT) for L in (150.0, 300.0, 600.0)]
    pcs = [o.p_c for o in opts]
    qbers = [o.qber for o in opts]
    assert (max(pcs) - min(pcs)) / min(pcs) < 0.2
    assert (max(qbers) - min(qbers)) / min(qbers) < 0.25


def test_crossing_bisection():
    res = study._crossing(lambda L: L - 333.3, study.CROSSOVER_GRID_KM, 0.1)
    assert res.status == "ok" and res.L_cross == pytest.approx(333.3, abs=0.1)
    assert res.bracket == (300.0, 400.0)
    other = study._crossing(lambda L: L - 333.3, (250.0, 350.0, 900.0), 0.1)
    assert other.L_cross == pytest.approx(res.L_cross, abs=0.2)
    assert study._crossing(lambda L: -1.0, (100.0, 200.0), 1.0).status == study.BEYOND_RANGE
    assert study._crossing(lambda L: 1.0, (100.0, 200.0), 1.0).status == study.BELOW_RANGE
    with pytest.raises(ValueError):
        study._crossing(lambda L: 1.0, (100.0,), 1.0)


def test_heralding_crossover():
    p = SystemParams(0.01)
    pur = study.heralding_crossover(p)
    raw = study.heralding_crossover(p, purified=False)
    assert pur.status == raw.status == "ok"
    assert raw.L_cross < pur.L_cross


def test_axis_and_config_validation():
    assert study.Axis("L_km", 100.0, 300.0, 3).values() == [100.0, 200.0, 300.0]
    assert study.Axis("p_c", 1e-3, 1e-1, 3, "log").values() == pytest.approx([1e-3, 1e-2, 1e-1])
    for bad in (dict(name="x", min=0, max=1, points=3), dict(name="p_c", min=0, max=1, points=3, scale="log"),
                dict(name="p_c", min=0.1, max=0.2, points=1), dict(name="p_c", min=0.3, max=0.2, points=3)):
        with pytest.raises(ValueError):
            study.Axis(**bad)
    with pytest.raises(ValueError):
        study.StudyConfig.from_mapping({"bogus": 1})
    with pytest.raises(ValueError):
        study.StudyConfig.from_mapping({"format": "xml"})
    with pytest.raises(ValueError):
        study.StudyConfig.from_mapping({"axes": [dict(name="p_c", min=0.01, max=0.02, points=2)] * 2})


def test_config_from_mapping():
    cfg = study.StudyConfig.from_mapping(
        {"pc": 0.02, "distance_km": 250, "detector": "nrpd", "scenario": "repeater", "eta_m": 0.5,
         "axes": [{"name": "L_km", "min": 100, "max": 200, "points": 2}], "optimizer": {"rtol": 1e-4}}
    )
    assert cfg.base.p_c == 0.02 and cfg.base.L_km == 250 and cfg.base.measurement_efficiency == 0.5
    assert cfg.detectors == (Detector.NRPD,) and cfg.scenarios == (Scenario.REPEATER,)
    assert cfg.optimizer.rtol == 1e-4
    assert json.loads(json.dumps(cfg.to_dict()))["base"]["p_c"] == 0.02


def test_config_load(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"pc": 0.03}))
    assert study.StudyConfig.load(path).base.p_c == 0.03


def small_sweep_config(**extra):
    doc = {"axes": [{"name": "p_c", "min": 0.005, "max": 0.02, "points": 2},
                    {"name": "L_km", "min": 100, "max": 200, "points": 2}]}
    doc.update(extra)
    return study.StudyConfig.from_mapping(doc)


def test_sweep_rows_and_determinism():
    cfg = small_sweep_config()
    rep = study.sweep(cfg)
    assert len(rep.rows) == 2 * 2 * 2 * 2
    first = study.render(rep)
    assert first == study.render(study.sweep(cfg))
    header = first.splitlines()[0].split(",")
    assert header[:2] == ["p_c", "L_km"]
    assert "rate" in header
    data = json.loads(study.render(rep, "json"))
    assert len(data["rows"]) == 16


def test_format_value():
    assert study.format_value(1 / 3) == "0.333333333333"
    assert study.format_value(float("nan")) == "nan"
    assert study.format_value(None) == ""
    assert study.format_value(True) == "true"
    assert study.format_value("pnrd") == "pnrd"


def test_emit_fig3_subset_is_byte_stable(tmp_path):
    cfg = study.StudyConfig.from_mapping({"figure_distances": {"name": "L_km", "min": 100, "max": 300, "points": 3}})
    paths_a = study.emit_figures(cfg, tmp_path / "a", ["fig3a", "fig3b"])
    paths_b = study.emit_figures(cfg, tmp_path / "b", ["fig3a", "fig3b"])
    names = sorted(p.name for p in paths_a)
    assert names == ["fig3a.csv", "fig3b.csv", "manifest.json", "timings.json"]
    for pa, pb in zip(paths_a, paths_b):
        if pa.name != "timings.json":
            assert pa.read_bytes() == pb.read_bytes()
    header = (tmp_path / "a" / "fig3a.csv").read_text().splitlines()[0]
    assert header == "L_km,detector,F_norep,F_rep,F_rep_purified,F_werner"
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["config"]["base"]["L_att_km"] == 25.0
    with pytest.raises(ValueError):
        study.emit_figures(cfg, tmp_path / "c", ["fig9"])
