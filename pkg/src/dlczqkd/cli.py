"""Command-line entry point: ``dlczqkd <command> [flags]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import study
from .fock import OracleError
from .gaussian import EngineError
from .link import herald_probability, link_metrics
from .params import Detector, Scenario
from .qkd import qkd_report
from .repeater import swap_metrics

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VALIDATION = 0, 1, 2, 3

COMMANDS = ("link-metrics", "repeater-metrics", "qkd-rate", "optimal-pc", "crossover", "sweep", "figures", "validate")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dlczqkd", description="DLCZ repeater and QKD rate calculator.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--pc", type=float, help="excitation probability p_c (default 0.01)")
    parser.add_argument("--eta-d", type=float, help="detector efficiency (default 0.5)")
    parser.add_argument("--eta-c", type=float, help="retrieval efficiency (default 0.7)")
    parser.add_argument("--eta-m", type=float, help="override the measurement efficiency of the BSM and QKD modules")
    parser.add_argument("--distance-km", type=float, help="total distance L (default 100)")
    parser.add_argument("--l-att-km", type=float, help="fibre attenuation length (default 25)")
    parser.add_argument("--c-mps", type=float, help="speed of light in fibre (default 2e8)")
    parser.add_argument("--detector", choices=[d.value for d in Detector])
    parser.add_argument("--scenario", choices=[s.value for s in Scenario])
    parser.add_argument("--exact-click", action="store_true", default=None, help="full inclusion-exclusion NRPD p_click")
    parser.add_argument("--config", help="JSON config file (flags override it)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--format", choices=("csv", "json"))
    return parser


FLAG_KEYS = ("pc", "eta_d", "eta_c", "eta_m", "distance_km", "l_att_km", "c_mps", "detector", "scenario", "exact_click", "out", "format")


def load_config(args: argparse.Namespace) -> study.StudyConfig:
    doc = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object")
    for key in FLAG_KEYS:
        val = getattr(args, key)
        if val is not None:
            doc[key] = val
            if key == "detector":
                doc.pop("detectors", None)
            if key == "scenario":
                doc.pop("scenarios", None)
    try:
        return study.StudyConfig.from_mapping(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _rows_for(cfg: study.StudyConfig, fn) -> study.StudyReport:
    report = None
    for det in cfg.detectors:
        params = cfg.base.with_(detector=det)
        for row in fn(params):
            if report is None:
                report = study.StudyReport(tuple(row))
            report.rows.append(row)
    return report


def _link(cfg):
    def rows(params):
        m = link_metrics(params)
        yield dict(detector=params.detector.value, p_c=params.p_c, L_km=params.L_km, fidelity=m.fidelity,
                   herald_prob=m.herald_prob, alpha=m.alpha, eta_s=m.eta_s)

    return _rows_for(cfg, rows)


def _repeater(cfg):
    def rows(params):
        m = swap_metrics(params)
        yield dict(detector=params.detector.value, p_c=params.p_c, L_km=params.L_km, fidelity=m.fidelity,
                   fidelity_purified=m.fidelity_purified, p_m=m.p_m, p_m_purified=m.p_m_purified,
                   vacuum_weight=m.vacuum_weight, herald_prob_half=herald_probability(params, params.L_km / 2.0))

    return _rows_for(cfg, rows)


def _qkd(cfg):
    def rows(params):
        for scen in cfg.scenarios:
            r = qkd_report(params, scen, cfg.exact_click)
            yield dict(detector=params.detector.value, scenario=scen.value, p_c=params.p_c, L_km=params.L_km,
                       p_click=r.p_click, p_error=r.p_error, qber=r.qber, secret_fraction=r.secret_fraction, rate=r.rate)

    return _rows_for(cfg, rows)


def _optimal(cfg):
    def rows(params):
        for scen in cfg.scenarios:
            o = study.optimize_pc(params, scen, cfg.exact_click, cfg.optimizer)
            yield dict(detector=params.detector.value, scenario=scen.value, L_km=params.L_km, p_c_opt=o.p_c,
                       rate_opt=o.rate, qber=o.qber, p_click=o.p_click, status=o.status)

    return _rows_for(cfg, rows)


def _crossover(cfg):
    def rows(params):
        q = study.crossover_distance(params, cfg.exact_click, settings=cfg.optimizer)
        h = study.heralding_crossover(params)
        ratio = q.L_cross / h.L_cross if q.L_cross and h.L_cross else None
        yield dict(detector=params.detector.value, eta_m=params.measurement_efficiency, L_cross_qkd_km=q.L_cross,
                   qkd_status=q.status, L_cross_herald_km=h.L_cross, herald_status=h.status, ratio=ratio)

    return _rows_for(cfg, rows)


TABLES = {
    "link-metrics": _link,
    "repeater-metrics": _repeater,
    "qkd-rate": _qkd,
    "optimal-pc": _optimal,
    "crossover": _crossover,
}


def _emit(text: str, out: str | None, name: str, fmt: str) -> None:
    if out:
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        (path / f"{name}.{fmt}").write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def run(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args)
    except UsageError as exc:
        print(f"dlczqkd: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = args.out
    try:
        if args.command in TABLES:
            report = TABLES[args.command](cfg)
            _emit(study.render(report, cfg.format), out, args.command, cfg.format)
        elif args.command == "sweep":
            if not cfg.axes:
                print("dlczqkd: usage error: sweep needs axes in the config", file=sys.stderr)
                return EXIT_USAGE
            _emit(study.render(study.sweep(cfg), cfg.format), out, "sweep", cfg.format)
        elif args.command == "figures":
            for path in study.emit_figures(cfg, out or cfg.out):
                print(path)
        elif args.command == "validate":
            from .validate import validate

            report = validate(progress=lambda line: print(line, file=sys.stderr))
            if cfg.format == "json":
                _emit(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n", out, "validation", "json")
            else:
                _emit(report.text() + "\n", out, "validation", "txt")
            return EXIT_OK if report.passed else EXIT_VALIDATION
    except (EngineError, OracleError, ArithmeticError) as exc:
        print(f"dlczqkd: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"dlczqkd: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
