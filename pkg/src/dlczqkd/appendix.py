"""Printed closed forms of the swapped two-ensemble state, and their audit.

The formulas below are transcribed symbol for symbol, with ``e = eta_s`` of a
sub-link, ``m = eta_m`` and ``p = p_c``.  A few printed fragments admit more
than one reading; each reading is available by name and the audit decides
numerically which one (if any) agrees with the engine-derived state.
"""

from __future__ import annotations

import itertools
from typing import NamedTuple

import numpy as np

from . import precise
from .gaussian import CharFun
from .params import Detector, SystemParams, derived_params

MATCH_RTOL = 1e-9
READINGS = ("printed", "amended")


def _symbols(params: SystemParams) -> tuple[float, float, float, float]:
    d = derived_params(params, params.L_km / 2.0)
    return d.eta_s, d.eta_m, params.p_c, d.alpha


def _x(e, p):
    return 1 + e * p - p


def pnrd_coefficients(e: float, m: float, p: float) -> dict[str, float]:
    k = -1 - m * p + p - e * p + m * e * p
    d1 = 2 * e * m * p - 2 * m * p + m - 2 + 2 * p - 2 * e * p
    d3 = (
        2 * e**2 * m * p**2 - 4 * e * m * p**2 + 2 * m * p**2 + e * m * p - m * p
        - 2 * e**2 * p**2 + 4 * e * p**2 - e * p - 2 * p**2 + p + 1
    )
    return {
        "c1": p * (e - 1) * k**2 / (d1 * _x(e, p) ** 2 * d3),
        "c2": -p * (e - 1) * k / (_x(e, p) * d3),
        "c3": -k / (2 * d1 * d3),
    }


def _d2(e, m, p):
    return 2 * m * p - e * m * p + 2 - 4 * p + 2 * e * p - 2 * e * p**2 + 2 * p**2 + 2 * e * m * p**2 - 2 * m * p**2


def _d4(e, m, p):
    return -3 * e * m * p + 4 * m * p + 4 - 8 * p + 4 * e * p - 4 * e * p**2 + 4 * p**2 + 4 * e * m * p**2 - 4 * m * p**2


def nrpd_exponents(e: float, m: float, p: float, reading: str = "printed") -> dict[str, float]:
    """``p_1 .. p_4``; the readings differ in the last denominator term of ``p_2``."""
    if reading not in READINGS:
        raise ValueError(f"unknown reading {reading!r}")
    last = p**2 if reading == "printed" else 2 * p**2
    tail = 2 * m * p - e * m * p + 2 * e * m * p**2 - 2 * m * p**2 + 2 - 4 * p + 2 * e * p - 2 * e * p**2 + last
    p3_num = (
        6 * p**2 * e + 3 * p * e * m - 6 * e * m * p**2 - 4 - 2 * e**2 * p**2 - 6 * e * p
        + 4 * m * p**2 - 4 * m * p + 2 * e**2 * m * p**2 - 4 * p**2 + 8 * p
    )
    return {
        "p1": (-e * p + e * m * p - 2 * m * p + 2 * p - 2) / _d2(e, m, p),
        "p2": (e**2 * m * p**2) / (4 * (-1 + p) * _x(e, p) * tail),
        "p3": p3_num / (_x(e, p) * _d4(e, m, p)),
        "p4": -1 / _x(e, p),
    }


def nrpd_coefficients(e: float, m: float, p: float, reading: str = "printed") -> dict[str, float]:
    """``c_1 .. c_5``.

    ``c_3`` is taken up to its balanced closing parenthesis, the two lines
    printed after it being unattached.  In ``c_4`` the fragment
    ``eta_s eta_m p_c eta_m p_c`` is a product in the printed reading and
    ``eta_s eta_m p_c - eta_m p_c`` in the amended one.
    """
    if reading not in READINGS:
        raise ValueError(f"unknown reading {reading!r}")
    x, d2 = _x(e, p), _d2(e, m, p)
    c4_tail = e * m * p * m * p if reading == "printed" else e * m * p - m * p
    return {
        "c1": (-2 * (-1 + p) * x**3) / (e**2 * p**2 * d2),
        "c2": (-4 * (-1 + p) * x**3 * (-1 - e * p + 2 * p + e * p**2 - p**2)) / (e**2 * p**2 * d2),
        "c3": (-4 * x**2 * (-1 + p) ** 2) / (e**2 * p**2 * _d4(e, m, p)),
        "c4": (-2 * x**3 * (-1 + p) ** 2) / (d2 * (-1 - e * p + p + c4_tail) * e**2 * p**2),
        "c5": (-x * (-1 + p) ** 2 * m * (e - 1)) / (e**2 * p * (-1 - e * p + p + e * m * p - m * p) ** 2),
    }


def c3_with_unattached_lines(e: float, m: float, p: float) -> float:
    """Alternative ``c_3`` that attaches the stray lines as an extra denominator factor."""
    return nrpd_coefficients(e, m, p)["c3"] / _d2(e, m, p)


def _nrpd_terms(ps: dict, cs: dict, sign: int) -> list[tuple]:
    bell_m = np.array([[1.0, sign], [sign, 1.0]])
    diag = np.diag
    # exponent matrices are minus the printed exponents
    return [
        (cs["c1"], -ps["p1"] * np.eye(2) - ps["p2"] * bell_m),
        (cs["c2"], -ps["p1"] * np.eye(2)),
        (cs["c3"], -diag([ps["p3"], ps["p4"]])),
        (cs["c4"], -diag([ps["p1"], ps["p4"]])),
        (cs["c3"], -diag([ps["p4"], ps["p3"]])),
        (cs["c4"], -diag([ps["p4"], ps["p1"]])),
        (cs["c5"], -ps["p4"] * np.eye(2)),
    ]


def appendix_charfun(params: SystemParams, sign: int, reading: str = "printed", modes=("A", "B")) -> CharFun:
    """Swapped state from the printed closed forms, normalised to ``chi(0) = 1``.

    The PNRD expression is normalised as printed.  The NRPD coefficients sum to
    the unnormalised trace, so the result is divided by its value at the origin.
    """
    e, m, p, alpha = _symbols(params)
    if params.detector is Detector.PNRD:
        c = pnrd_coefficients(e, m, p)
        bell_m = np.array([[1.0, sign], [sign, 1.0]])
        base = alpha * np.eye(2)
        terms = [
            (1.0, base),
            (c["c1"], base, [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])]),
            (c["c2"], base, [np.eye(2)]),
            (c["c3"], base, [bell_m]),
        ]
        return CharFun.build(modes, terms)
    terms = _nrpd_terms(nrpd_exponents(e, m, p, reading), nrpd_coefficients(e, m, p, reading), sign)
    norm = sum(c for c, _ in terms)
    return CharFun.build(modes, [(c / norm, q) for c, q in terms])


class Decomposition(NamedTuple):
    exponents: dict[str, float]
    coefficients: dict[str, float]
    weight: float


def _group_terms(gs: precise.GaussSum):
    groups: list[list] = []
    for c, q in gs.terms:
        mat = np.array([[float(q[i, j].mid()) for j in range(2)] for i in range(2)])
        for g in groups:
            if np.max(np.abs(g[0] - mat)) <= 1e-30 * np.max(np.abs(mat)):
                g[1] += c
                break
        else:
            groups.append([mat, c])
    return groups


def engine_nrpd_decomposition(params: SystemParams, outcome=(1, 1, 1)) -> Decomposition:
    """Exponents and unnormalised coefficients of the engine-derived NRPD swapped state.

    Terms are identified by the structure of their exponent matrices, so the
    result does not depend on any printed expression.
    """
    from .repeater import _precise_swapped

    def run():
        gs, weight = _precise_swapped(params, tuple(outcome))
        alpha = _symbols(params)[3]
        groups = _group_terms(gs)
        found: dict[str, list] = {}
        for mat, c in groups:
            off = abs(mat[0, 1]) > 1e-25 * mat[0, 0]
            same = abs(mat[0, 0] - mat[1, 1]) <= 1e-25 * mat[0, 0]
            if off:
                found.setdefault("c1", []).append((mat, c))
            elif same and abs(mat[0, 0] - alpha) < 1e-12 * alpha:
                found.setdefault("c5", []).append((mat, c))
            elif same:
                found.setdefault("c2", []).append((mat, c))
            else:
                found.setdefault("mixed", []).append((mat, c))
        if any(len(found.get(k, [])) != 1 for k in ("c1", "c2", "c5")) or len(found.get("mixed", [])) != 4:
            raise precise.EngineError("swapped state does not have the seven-term structure")
        p1 = -found["c2"][0][0][0, 0]
        exps = {"p1": p1, "p2": -found["c1"][0][0][0, 1] * outcome_sign(outcome), "p4": -alpha}
        coeffs = {k: found[k][0][1] * weight for k in ("c1", "c2", "c5")}
        pairs = {}
        for mat, c in found["mixed"]:
            a_side, b_side = -mat[0, 0], -mat[1, 1]
            other = a_side if abs(b_side + alpha) < 1e-12 * alpha else b_side
            key = "c4" if abs(other - p1) <= 1e-12 * abs(p1) else "c3"
            if key == "c3":
                exps["p3"] = other
            pairs.setdefault(key, []).append(c * weight)
        for key, vals in pairs.items():
            if len(vals) != 2 or float(abs(vals[0] - vals[1]).mid()) > 1e-12 * float(abs(vals[0]).mid()):
                raise precise.EngineError(f"mirrored {key} terms differ")
            coeffs[key] = vals[0]
        out = {k: precise.certified(v, k) for k, v in coeffs.items()}
        return Decomposition(exps, dict(sorted(out.items())), precise.certified(weight, "weight"))

    return precise.adaptive(run)


def outcome_sign(outcome) -> int:
    return -1 if sum(outcome) % 2 else 1


def engine_pnrd_coefficients(params: SystemParams, outcome=(1, 1, 1), n_points: int = 12) -> tuple[dict, float]:
    """Least-squares ``c_1 .. c_3`` of the engine state in the printed basis, with the fit residual.

    Sample points are a fixed lattice, so the fit is deterministic.
    """
    from .repeater import swapped_charfun

    cf = swapped_charfun(params, outcome)
    alpha = _symbols(params)[3]
    s = outcome_sign(outcome)
    rows, rhs = [], []
    for k in range(n_points):
        za = 0.3 * (1 + k % 4) * np.exp(0.7j * k)
        zb = 0.25 * (1 + k % 3) * np.exp(-1.3j * k + 0.4)
        ra, rb = abs(za) ** 2, abs(zb) ** 2
        rows.append([ra * rb, ra + rb, abs(za + s * zb) ** 2])
        rhs.append((cf(np.array([za, zb])) * np.exp(alpha * (ra + rb))).real - 1.0)
    sol, *_ = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)
    resid = float(np.max(np.abs(np.array(rows) @ sol - np.array(rhs))))
    return {"c1": float(sol[0]), "c2": float(sol[1]), "c3": float(sol[2])}, resid


def _rel(a: float, b: float) -> float:
    return float(abs(a - b) / max(abs(b), 1e-300))


AUDIT_POINTS = (
    dict(p_c=0.01, L_km=100.0),
    dict(p_c=0.05, L_km=100.0),
    dict(p_c=0.02, L_km=300.0),
    dict(p_c=0.005, L_km=200.0, eta_d=0.9, eta_c=0.9),
)


def _status(dev: float) -> str:
    return "match" if dev <= MATCH_RTOL else "mismatch"


def typo_report(points=AUDIT_POINTS) -> list[dict]:
    """Per-coefficient comparison of the printed forms against the engine.

    Each entry carries the coefficient name, the reading, the largest relative
    deviation over the audit points and ``match``/``mismatch``.  The printed
    NRPD coefficients sum to the BSM outcome probability ``P_M/2`` rather than
    to one, so they are compared with the engine coefficients times that weight.
    """
    entries: dict[tuple, float] = {}

    def note(det, name, reading, dev):
        key = (det, name, reading)
        entries[key] = max(entries.get(key, 0.0), dev)

    for pt in points:
        pp = SystemParams(detector=Detector.PNRD, **pt)
        e, m, p, _ = _symbols(pp)
        fit, resid = engine_pnrd_coefficients(pp)
        printed = pnrd_coefficients(e, m, p)
        for name in printed:
            note("pnrd", name, "printed", _rel(printed[name], fit[name]))
        note("pnrd", "basis_residual", "printed", resid)

        pn = SystemParams(detector=Detector.NRPD, **pt)
        e, m, p, _ = _symbols(pn)
        ref = engine_nrpd_decomposition(pn)
        for reading in READINGS:
            exps = nrpd_exponents(e, m, p, reading)
            coeffs = nrpd_coefficients(e, m, p, reading)
            for name, val in exps.items():
                note("nrpd", name, reading, _rel(val, ref.exponents[name]))
            for name, val in coeffs.items():
                note("nrpd", name, reading, _rel(val, ref.coefficients[name]))
        note("nrpd", "c3", "unattached-lines", _rel(c3_with_unattached_lines(e, m, p), ref.coefficients["c3"]))

    out = []
    for (det, name, reading), dev in sorted(entries.items()):
        out.append({"detector": det, "coefficient": name, "reading": reading, "max_rel_deviation": dev, "status": _status(dev)})
    return out


def pointwise_deviation(params: SystemParams, outcome=(1, 1, 1), reading: str = "printed", n_points: int = 50) -> float:
    """Largest ``|chi_appendix - chi_engine|`` over a fixed point set."""
    from .repeater import swapped_charfun

    cf_e = swapped_charfun(params, outcome)
    cf_a = appendix_charfun(params, outcome_sign(outcome), reading)
    worst = 0.0
    for k, (u, v) in zip(range(n_points), itertools.product(np.linspace(-1.5, 1.5, 8), repeat=2)):
        z = np.array([u + 0.37j * v, v - 0.21j * u + 0.05 * k])
        worst = max(worst, abs(cf_a(z) - cf_e(z)))
    return worst


READING_NOTES = {
    "printed": "as typeset",
    "amended": "p2: last denominator term 2 p^2 instead of p^2; c4: e m p - m p instead of e m p m p",
    "unattached-lines": "c3: the two continuation lines dropped instead of multiplied in",
}

UNRESOLVED_NOTES = {
    ("nrpd", "c2"): "no reading agrees; printed/engine ratio tends to 2 as p_c -> 0 with a further O(p_c) "
    "discrepancy, so the error sits inside the printed c_2 itself; the engine value is used",
}


def typo_resolution(report: list[dict]) -> list[dict]:
    """One verdict per coefficient: ``verified``, ``typo`` (another reading matches) or ``unresolved``."""
    by_coeff: dict[tuple, list[dict]] = {}
    for row in report:
        by_coeff.setdefault((row["detector"], row["coefficient"]), []).append(row)
    out = []
    for (det, name), rows in sorted(by_coeff.items()):
        printed = next((r for r in rows if r["reading"] == "printed"), None)
        matches = [r["reading"] for r in rows if r["status"] == "match"]
        best = min(rows, key=lambda r: r["max_rel_deviation"])
        if printed is not None and printed["status"] == "match":
            verdict, reading = "verified", "printed"
        elif matches:
            verdict, reading = "typo", matches[0]
        else:
            verdict, reading = "unresolved", "none"
        out.append(
            {
                "detector": det,
                "coefficient": name,
                "verdict": verdict,
                "reading": reading,
                "note": UNRESOLVED_NOTES.get((det, name), "") if verdict == "unresolved" else READING_NOTES[reading],
                "printed_deviation": None if printed is None else printed["max_rel_deviation"],
                "best_deviation": best["max_rel_deviation"],
            }
        )
    return out
