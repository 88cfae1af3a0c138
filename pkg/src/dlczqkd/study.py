"""Parameter studies: optimal excitation probability, crossover distances, figure datasets."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np
from scipy import optimize

from . import __version__
from .link import herald_probability, link_fidelity, werner_swap_fidelity
from .params import Detector, Scenario, SystemParams
from .qkd import qkd_report
from .repeater import swap_metrics

PC_RANGE = (1e-4, 0.2)
GRID_POINTS = 48
RTOL = 1e-3
BIMODAL_TOL = 0.05
CROSSOVER_GRID_KM = tuple(float(x) for x in range(100, 1001, 100))
CROSSOVER_TOL_KM = 1.0

NO_POSITIVE_RATE = "no positive rate"
BEYOND_RANGE = "beyond range"
BELOW_RANGE = "below range"


@dataclass(frozen=True)
class OptimizerSettings:
    p_min: float = PC_RANGE[0]
    p_max: float = PC_RANGE[1]
    rtol: float = RTOL
    grid_points: int = GRID_POINTS

    def __post_init__(self):
        if not 0.0 < self.p_min < self.p_max < 1.0:
            raise ValueError("need 0 < p_min < p_max < 1")
        if self.grid_points < 40:
            raise ValueError("the coarse scan needs at least 40 points")
        if not 0.0 < self.rtol < 0.1:
            raise ValueError("rtol must lie in (0, 0.1)")


class Optimum(NamedTuple):
    p_c: float
    rate: float
    qber: float
    p_click: float
    status: str  # "golden", "grid", or NO_POSITIVE_RATE
    evaluations: int

    @property
    def ok(self) -> bool:
        return self.status != NO_POSITIVE_RATE


def _rate_function(params: SystemParams, scenario: Scenario, exact_click: bool) -> tuple[Callable[[float], float], dict]:
    seen: dict[float, float] = {}

    def rate(p: float) -> float:
        p = float(p)
        if p not in seen:
            seen[p] = qkd_report(params.with_(p_c=p), scenario, exact_click).rate
        return seen[p]

    return rate, seen


def _local_maxima(rates: Sequence[float]) -> list[int]:
    n = len(rates)
    return [
        i
        for i in range(n)
        if rates[i] > 0 and (i == 0 or rates[i] > rates[i - 1]) and (i == n - 1 or rates[i] >= rates[i + 1])
    ]


def _grid_refine(rate: Callable[[float], float], lo: float, hi: float, rtol: float) -> float:
    """Repeated log-grid zoom; used at the range edges and for multimodal scans."""
    best = max(np.geomspace(lo, hi, 9), key=rate)
    while hi / lo - 1.0 > rtol:
        grid = np.geomspace(lo, hi, 9)
        i = int(np.argmax([rate(p) for p in grid]))
        best = grid[i] if rate(grid[i]) >= rate(best) else best
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, 8)]
    return float(best)


def optimize_pc(
    params: SystemParams,
    scenario: Scenario,
    exact_click: bool = False,
    settings: OptimizerSettings = OptimizerSettings(),
) -> Optimum:
    """Excitation probability that maximises the key rate.

    A coarse log-grid scan picks the best point; golden-section search then
    refines inside its two neighbours.  If the scan shows a second local maximum
    within 5% of the best one, or the best point sits on the range edge, plain
    grid zooming replaces the golden section.
    """
    scenario = Scenario(scenario)
    rate, seen = _rate_function(params, scenario, exact_click)
    grid = np.geomspace(settings.p_min, settings.p_max, settings.grid_points)
    rates = [rate(p) for p in grid]
    if max(rates) <= 0.0:
        return Optimum(math.nan, 0.0, math.nan, math.nan, NO_POSITIVE_RATE, len(seen))
    i = int(np.argmax(rates))
    rivals = [j for j in _local_maxima(rates) if abs(j - i) > 1 and rates[j] >= (1 - BIMODAL_TOL) * rates[i]]
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    if rivals or i in (0, len(grid) - 1) or not (rates[i] > rates[i - 1] and rates[i] > rates[i + 1]):
        p_best, status = _grid_refine(rate, lo, hi, settings.rtol), "grid"
    else:
        res = optimize.minimize_scalar(
            lambda p: -rate(p), bracket=(lo, grid[i], hi), method="golden", options={"xtol": settings.rtol / 2}
        )
        p_best, status = float(res.x), "golden"
    # never report a point worse than one already evaluated in the bracket
    p_best = max([p_best] + [p for p in seen if lo <= p <= hi], key=rate)
    rep = qkd_report(params.with_(p_c=p_best), scenario, exact_click)
    return Optimum(p_best, rep.rate, rep.qber, rep.p_click, status, len(seen))


class Crossover(NamedTuple):
    L_cross: float | None
    status: str  # "ok", BEYOND_RANGE or BELOW_RANGE
    bracket: tuple[float, float] | None
    samples: tuple[tuple[float, float], ...]


def _crossing(diff: Callable[[float], float], distances: Sequence[float], tol_km: float) -> Crossover:
    """First change of ``diff`` from non-positive to positive, bisected to ``tol_km``."""
    distances = sorted(float(d) for d in distances)
    if len(distances) < 2:
        raise ValueError("need at least two distances")
    samples = [(d, diff(d)) for d in distances]
    if samples[0][1] > 0:
        return Crossover(None, BELOW_RANGE, None, tuple(samples))
    for (a, fa), (b, fb) in zip(samples, samples[1:]):
        if fa <= 0 < fb:
            root = optimize.bisect(diff, a, b, xtol=tol_km)
            return Crossover(float(root), "ok", (a, b), tuple(samples))
    return Crossover(None, BEYOND_RANGE, None, tuple(samples))


def crossover_distance(
    params: SystemParams,
    exact_click: bool = False,
    distances: Sequence[float] = CROSSOVER_GRID_KM,
    tol_km: float = CROSSOVER_TOL_KM,
    settings: OptimizerSettings = OptimizerSettings(),
) -> Crossover:
    """Distance beyond which the one-node repeater beats the direct link.

    Both key rates are taken at their own optimal excitation probability at
    every distance.
    """

    def diff(L: float) -> float:
        p = params.with_(L_km=float(L))
        r2 = optimize_pc(p, Scenario.REPEATER, exact_click, settings).rate
        r1 = optimize_pc(p, Scenario.DIRECT, exact_click, settings).rate
        return r2 - r1

    return _crossing(diff, distances, tol_km)


def heralding_crossover(
    params: SystemParams,
    purified: bool = True,
    distances: Sequence[float] = CROSSOVER_GRID_KM,
    tol_km: float = CROSSOVER_TOL_KM,
) -> Crossover:
    """Distance where the repeater heralding probability overtakes ``P_S(L)`` at fixed ``p_c``.

    The repeater side is ``P_S(L/2) P_M``; with ``purified`` the vacuum branch of
    the swapped state is excluded, which counts entangled pairs only.
    """

    def diff(L: float) -> float:
        p = params.with_(L_km=float(L))
        sm = swap_metrics(p)
        p_m = sm.p_m_purified if purified else sm.p_m
        return herald_probability(p, L / 2.0) * p_m - herald_probability(p, L)

    return _crossing(diff, distances, tol_km)


# --------------------------------------------------------------------------
# Configuration

AXIS_NAMES = ("p_c", "L_km", "eta_d", "eta_c", "eta_m", "L_att_km")

# flag-style config keys -> SystemParams fields
PARAM_KEYS = {
    "pc": "p_c",
    "eta_d": "eta_d",
    "eta_c": "eta_c",
    "eta_m": "eta_m",
    "distance_km": "L_km",
    "l_att_km": "L_att_km",
    "c_mps": "c_mps",
    "detector": "detector",
}


@dataclass(frozen=True)
class Axis:
    name: str
    min: float
    max: float
    points: int
    scale: str = "linear"

    def __post_init__(self):
        if self.name not in AXIS_NAMES:
            raise ValueError(f"unknown axis {self.name!r}; choose from {AXIS_NAMES}")
        if self.points < 2:
            raise ValueError("an axis needs at least two points")
        if self.scale not in ("linear", "log"):
            raise ValueError("axis scale must be 'linear' or 'log'")
        if self.scale == "log" and not 0 < self.min:
            raise ValueError("log axes need positive bounds")
        if not self.min < self.max:
            raise ValueError("axis min must be below max")

    def values(self) -> list[float]:
        space = np.geomspace if self.scale == "log" else np.linspace
        return [float(v) for v in space(self.min, self.max, self.points)]


@dataclass(frozen=True)
class StudyConfig:
    base: SystemParams = SystemParams(p_c=0.01)
    axes: tuple[Axis, ...] = ()
    scenarios: tuple[Scenario, ...] = (Scenario.DIRECT, Scenario.REPEATER)
    detectors: tuple[Detector, ...] = (Detector.PNRD, Detector.NRPD)
    exact_click: bool = False
    optimizer: OptimizerSettings = OptimizerSettings()
    out: str = "out"
    format: str = "csv"
    figure_distances: Axis = Axis("L_km", 50.0, 600.0, 23)
    figure_pc: Axis = Axis("p_c", 1e-4, 0.2, 48, "log")
    figure_eta_m: tuple[float, ...] = (0.2, 0.35, 0.5, 0.7, 0.9, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(Scenario(s) for s in self.scenarios))
        object.__setattr__(self, "detectors", tuple(Detector(d) for d in self.detectors))
        if self.format not in ("csv", "json"):
            raise ValueError("format must be 'csv' or 'json'")
        names = [a.name for a in self.axes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate sweep axes")

    @classmethod
    def from_mapping(cls, doc: dict) -> "StudyConfig":
        """Flat keys mirroring the CLI flags plus ``axes`` / ``optimizer`` blocks."""
        doc = dict(doc)
        known = set(PARAM_KEYS) | {
            "axes", "scenarios", "scenario", "detectors", "exact_click", "optimizer", "out", "format",
            "figure_distances", "figure_pc", "figure_eta_m",
        }
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        base = {PARAM_KEYS[k]: doc[k] for k in PARAM_KEYS if k in doc}
        base.setdefault("p_c", 0.01)
        kwargs = {"base": SystemParams(**base)}
        if "axes" in doc:
            kwargs["axes"] = tuple(Axis(**a) for a in doc["axes"])
        if "scenario" in doc:
            kwargs["scenarios"] = (doc["scenario"],)
        if "scenarios" in doc:
            kwargs["scenarios"] = tuple(doc["scenarios"])
        if "detectors" in doc:
            kwargs["detectors"] = tuple(doc["detectors"])
        elif "detector" in doc:
            kwargs["detectors"] = (doc["detector"],)
        if "optimizer" in doc:
            kwargs["optimizer"] = OptimizerSettings(**doc["optimizer"])
        for key in ("exact_click", "out", "format"):
            if key in doc:
                kwargs[key] = doc[key]
        for key in ("figure_distances", "figure_pc"):
            if key in doc:
                kwargs[key] = Axis(**doc[key])
        if "figure_eta_m" in doc:
            kwargs["figure_eta_m"] = tuple(float(x) for x in doc["figure_eta_m"])
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "StudyConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_mapping(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "base": self.base.to_dict(),
            "axes": [asdict(a) for a in self.axes],
            "scenarios": [s.value for s in self.scenarios],
            "detectors": [d.value for d in self.detectors],
            "exact_click": self.exact_click,
            "optimizer": asdict(self.optimizer),
            "format": self.format,
            "figure_distances": asdict(self.figure_distances),
            "figure_pc": asdict(self.figure_pc),
            "figure_eta_m": list(self.figure_eta_m),
        }


# --------------------------------------------------------------------------
# Sweeps


@dataclass
class StudyReport:
    columns: tuple[str, ...]
    rows: list[dict] = field(default_factory=list)

    def sorted_rows(self) -> list[dict]:
        return sorted(self.rows, key=lambda r: tuple(_sort_key(r[c]) for c in self.columns))


def _sort_key(v):
    return (0, v, "") if isinstance(v, (int, float)) and not isinstance(v, bool) else (1, 0.0, str(v))


def _point_params(base: SystemParams, detector: Detector, point: dict) -> SystemParams:
    return base.with_(detector=detector, **point)


def sweep(config: StudyConfig) -> StudyReport:
    """Every metric on the cartesian product of the axes, detectors and scenarios."""
    names = [a.name for a in config.axes]
    grids = [a.values() for a in config.axes]
    cols = tuple(names) + ("detector", "scenario", "fidelity", "herald_prob", "p_m", "p_click", "qber", "rate")
    report = StudyReport(cols)
    for values in itertools.product(*grids):
        point = dict(zip(names, values))
        for det in config.detectors:
            params = _point_params(config.base, det, point)
            for scen in config.scenarios:
                rep = qkd_report(params, scen, config.exact_click)
                if scen is Scenario.DIRECT:
                    fid, p_s, p_m = link_fidelity(params, params.L_km), herald_probability(params, params.L_km), 1.0
                else:
                    sm = swap_metrics(params)
                    fid, p_s, p_m = sm.fidelity, herald_probability(params, params.L_km / 2.0), sm.p_m
                row = dict(point, detector=det.value, scenario=scen.value, fidelity=fid, herald_prob=p_s, p_m=p_m)
                row.update(p_click=rep.p_click, qber=rep.qber, rate=rep.rate)
                report.rows.append(row)
    return report


# --------------------------------------------------------------------------
# Figure datasets


def _fig3(config: StudyConfig) -> tuple[StudyReport, StudyReport]:
    a = StudyReport(("L_km", "detector", "F_norep", "F_rep", "F_rep_purified", "F_werner"))
    b = StudyReport(("L_km", "detector", "P_norep", "P_rep", "P_rep_purified"))
    for det in config.detectors:
        for L in config.figure_distances.values():
            params = config.base.with_(detector=det, L_km=L)
            sm = swap_metrics(params)
            f_half = link_fidelity(params, L / 2.0)
            ps_half = herald_probability(params, L / 2.0)
            a.rows.append(
                dict(
                    L_km=L,
                    detector=det.value,
                    F_norep=link_fidelity(params, L),
                    F_rep=sm.fidelity,
                    F_rep_purified=sm.fidelity_purified,
                    F_werner=werner_swap_fidelity(f_half),
                )
            )
            b.rows.append(
                dict(
                    L_km=L,
                    detector=det.value,
                    P_norep=herald_probability(params, L),
                    P_rep=ps_half * sm.p_m,
                    P_rep_purified=ps_half * sm.p_m_purified,
                )
            )
    return a, b


FIG4A_L_KM = 350.0
FIG5A_PC = 0.0055


def _optimum_rows(config: StudyConfig, cache: dict) -> None:
    for det in config.detectors:
        for scen in (Scenario.DIRECT, Scenario.REPEATER):
            for L in config.figure_distances.values():
                key = (det, scen, L)
                if key not in cache:
                    params = config.base.with_(detector=det, L_km=L)
                    cache[key] = optimize_pc(params, scen, config.exact_click, config.optimizer)


def _fig4(config: StudyConfig, optima: dict) -> tuple[StudyReport, StudyReport]:
    a = StudyReport(("p_c", "detector", "R1", "R2"))
    for det in config.detectors:
        params = config.base.with_(detector=det, L_km=FIG4A_L_KM)
        for p in config.figure_pc.values():
            q = params.with_(p_c=p)
            a.rows.append(
                dict(
                    p_c=p,
                    detector=det.value,
                    R1=qkd_report(q, Scenario.DIRECT, config.exact_click).rate,
                    R2=qkd_report(q, Scenario.REPEATER, config.exact_click).rate,
                )
            )
    b = StudyReport(("L_km", "detector", "scenario", "p_c_opt", "rate_opt", "qber_opt"))
    for (det, scen, L), opt in optima.items():
        b.rows.append(
            dict(L_km=L, detector=det.value, scenario=scen.value, p_c_opt=opt.p_c, rate_opt=opt.rate, qber_opt=opt.qber)
        )
    return a, b


def _fig5(config: StudyConfig, optima: dict) -> tuple[StudyReport, StudyReport]:
    a = StudyReport(("L_km", "detector", "scenario", "qber"))
    for det in config.detectors:
        for scen in (Scenario.DIRECT, Scenario.REPEATER):
            for L in config.figure_distances.values():
                params = config.base.with_(detector=det, L_km=L, p_c=FIG5A_PC)
                a.rows.append(
                    dict(L_km=L, detector=det.value, scenario=scen.value, qber=qkd_report(params, scen, config.exact_click).qber)
                )
    b = StudyReport(("L_km", "detector", "scenario", "p_c_opt", "qber"))
    for (det, scen, L), opt in optima.items():
        b.rows.append(dict(L_km=L, detector=det.value, scenario=scen.value, p_c_opt=opt.p_c, qber=opt.qber))
    return a, b


def _fig6(config: StudyConfig, optima: dict) -> tuple[StudyReport, StudyReport]:
    a = StudyReport(("L_km", "detector", "R1", "R2"))
    for det in config.detectors:
        for L in config.figure_distances.values():
            a.rows.append(
                dict(
                    L_km=L,
                    detector=det.value,
                    R1=optima[det, Scenario.DIRECT, L].rate,
                    R2=optima[det, Scenario.REPEATER, L].rate,
                )
            )
    b = StudyReport(("eta_m", "detector", "L_cross_km", "status"))
    for det in config.detectors:
        for eta_m in config.figure_eta_m:
            params = config.base.with_(detector=det, eta_m=eta_m)
            cx = crossover_distance(params, config.exact_click, settings=config.optimizer)
            b.rows.append(dict(eta_m=eta_m, detector=det.value, L_cross_km=cx.L_cross, status=cx.status))
    return a, b


FIGURES = ("fig3a", "fig3b", "fig4a", "fig4b", "fig5a", "fig5b", "fig6a", "fig6b")


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return f"{v:.12g}"
    return str(v)


def render(report: StudyReport, fmt: str = "csv") -> str:
    rows = report.sorted_rows()
    if fmt == "json":
        data = [{c: _json_value(r[c]) for c in report.columns} for r in rows]
        return json.dumps({"columns": list(report.columns), "rows": data}, indent=1, sort_keys=True) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(report.columns)
    for r in rows:
        writer.writerow([format_value(r[c]) for c in report.columns])
    return buf.getvalue()


def _json_value(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return None if math.isnan(v) else float(f"{v:.12g}")
    return v


def emit_figures(config: StudyConfig, out: str | Path | None = None, figures: Iterable[str] = FIGURES) -> list[Path]:
    """Write one dataset per figure panel plus ``manifest.json`` and ``timings.json``."""
    figures = tuple(figures)
    bad = sorted(set(figures) - set(FIGURES))
    if bad:
        raise ValueError(f"unknown figure panels: {bad}")
    out = Path(config.out if out is None else out)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    optima: dict = {}
    datasets: dict[str, StudyReport] = {}

    def timed(name, fn):
        t0 = time.perf_counter()
        res = fn()
        timings[name] = round(time.perf_counter() - t0, 3)
        return res

    wanted = set(figures)
    if wanted & {"fig3a", "fig3b"}:
        datasets["fig3a"], datasets["fig3b"] = timed("fig3", lambda: _fig3(config))
    if wanted & {"fig4b", "fig5b", "fig6a"}:
        timed("optima", lambda: _optimum_rows(config, optima))
    if wanted & {"fig4a", "fig4b"}:
        datasets["fig4a"], datasets["fig4b"] = timed("fig4", lambda: _fig4(config, optima))
    if wanted & {"fig5a", "fig5b"}:
        datasets["fig5a"], datasets["fig5b"] = timed("fig5", lambda: _fig5(config, optima))
    if "fig6b" in wanted:
        datasets["fig6a"], datasets["fig6b"] = timed("fig6", lambda: _fig6(config, optima))
    elif "fig6a" in wanted:
        datasets["fig6a"] = _fig6a_only(config, optima)

    ext = config.format
    paths = []
    files = {}
    for name in FIGURES:
        if name in wanted:
            path = out / f"{name}.{ext}"
            path.write_text(render(datasets[name], ext), encoding="utf-8")
            files[name] = path.name
            paths.append(path)
    manifest = {
        "package": "dlczqkd",
        "version": __version__,
        "numpy": np.__version__,
        "config": config.to_dict(),
        "files": files,
        "units": {"distance": "km", "rate": "bits/s per logical memory", "probability": "dimensionless"},
    }
    mpath = out / "manifest.json"
    mpath.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    # wall-clock times vary between runs, so they stay out of the manifest
    tpath = out / "timings.json"
    tpath.write_text(json.dumps(timings, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return paths + [mpath, tpath]


def _fig6a_only(config: StudyConfig, optima: dict) -> StudyReport:
    cfg = replace(config, figure_eta_m=())
    return _fig6(cfg, optima)[0]


def write_report(report: StudyReport, out: str | Path, name: str, fmt: str = "csv") -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.{fmt}"
    path.write_text(render(report, fmt), encoding="utf-8")
    return path
