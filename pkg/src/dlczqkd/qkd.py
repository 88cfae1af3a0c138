"""Entanglement-based QKD on top of the link and repeater states.

Two identical entangled pairs ``AB`` and ``CD`` are distributed.  Alice holds
``A, C`` and Bob ``B, D``; each side interferes its two ensembles on a 50-50
beam splitter (``A`` with ``C``, ``B`` with ``D``) and reads the outputs
``A', C'`` and ``B', D'`` with two detectors.  Patterns are written as four
bits in the order ``A' B' C' D'``.

With ideal inputs a click pair ``A'B'`` or ``C'D'`` means equal bits and
``A'D'`` or ``B'C'`` means different bits; this fixes which patterns count as
errors (checked against ideal Bell pairs in the tests).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import precise
from .gaussian import CharFun, EngineError, click, moment_integral, one_photon, tensor, trace, vacuum
from .link import apply_mixing, herald_probability, post_herald_charfun, post_herald_gausssum
from .params import Detector, Scenario, SystemParams
from .repeater import (
    OUTCOMES,
    bsm_efficiencies,
    heralded_success_probability,
    detector_factors,
    measured_state,
    precise_click_kinds,
    precise_measured_state,
    precise_swapped_state,
    swapped_charfun,
    uses_precise,
)

OUTPUTS = ("A'", "B'", "C'", "D'")
PATTERNS = tuple("".join(bits) for bits in itertools.product("01", repeat=4))
CORRECT = ("1100", "0011")
ERRORS = ("1001", "0110")
SAME_SIDE = ("1010", "0101")
MULTI = ("0111", "1011", "1101", "1110", "1111")
ROUNDOFF_TOL = 1e-12


@dataclass(frozen=True)
class QkdReport:
    p_click: float
    p_error: float
    qber: float
    secret_fraction: float
    rate: float
    scenario: Scenario
    params: SystemParams

    def to_dict(self) -> dict:
        return {
            "p_click": self.p_click,
            "p_error": self.p_error,
            "qber": self.qber,
            "secret_fraction": self.secret_fraction,
            "rate": self.rate,
            "scenario": self.scenario.value,
            **{f"param_{k}": v for k, v in self.params.to_dict().items()},
        }


def measurement_efficiencies(params: SystemParams) -> tuple[float, float]:
    return bsm_efficiencies(params)


QKD_PAIRS = (("A", "C", "A'", "C'"), ("B", "D", "B'", "D'"))


def apply_qkd_measurement_channel(cf: CharFun, eta_c: float, eta_d: float) -> CharFun:
    """``A, B, C, D`` to the detector-facing ``A', B', C', D'`` (zero-phase basis).

    Other modes of ``cf`` pass through untouched; a four-mode input comes back
    in pattern order.
    """
    out = apply_mixing(cf, QKD_PAIRS, eta_c, eta_d)
    return out.reorder(OUTPUTS) if out.n_modes == 4 else out


def pattern_factors(pattern: str, detector: Detector, modes: Sequence[str] = OUTPUTS) -> list:
    if len(pattern) != len(modes) or set(pattern) - {"0", "1"}:
        raise ValueError(f"pattern must be {len(modes)} bits, got {pattern!r}")
    hit = one_photon if Detector(detector) is Detector.PNRD else click
    return [hit(m) if b == "1" else vacuum(m) for b, m in zip(pattern, modes)]


def click_pattern_probability(cf: CharFun, pattern: str, detector: Detector) -> float:
    """Probability of ``pattern`` on the detector-facing modes of ``cf``."""
    return moment_integral(cf, pattern_factors(pattern, detector, cf.modes))


def _pairs_state(cf_ab: CharFun, cf_cd: CharFun) -> CharFun:
    return tensor(cf_ab.relabel(dict(zip(cf_ab.modes, ("A", "B")))), cf_cd.relabel(dict(zip(cf_cd.modes, ("C", "D")))))


def qkd_state(params: SystemParams, scenario: Scenario, outcome=(1, 1, 1)) -> CharFun:
    """Four-ensemble state ``A, B, C, D`` (double-precision engine).

    ``outcome`` is the herald index ``j`` (first entry) for the direct link and
    the BSM outcome triple for the repeater; both pairs share it.
    """
    scenario = Scenario(scenario)
    if scenario is Scenario.DIRECT:
        pair = post_herald_charfun(params, params.L_km, outcome[0])
    else:
        pair = swapped_charfun(params, tuple(outcome))
    return _pairs_state(pair, pair)


def pattern_probabilities_from_state(cf: CharFun, detector: Detector, eta_c: float, eta_d: float, patterns=None) -> dict:
    """Pattern probabilities for a four-ensemble state through the QKD measurement."""
    out = apply_qkd_measurement_channel(cf, eta_c, eta_d)
    return {p: click_pattern_probability(out, p, detector) for p in (patterns or PATTERNS)}


def _precise_patterns(gs: precise.GaussSum) -> dict[str, float]:
    """All sixteen threshold-detector patterns from the subset integrals."""
    sub = precise.subset_integrals(gs)
    n = len(gs.modes)
    out = {}
    for pat in PATTERNS:
        on = [i for i, b in enumerate(pat) if b == "1"]
        total = precise.arb(0)
        for r in range(len(on) + 1):
            for deleted in itertools.combinations(on, r):
                keep = frozenset(i for i in range(n) if i not in deleted)
                total += (-1) ** (len(on) - r) * sub[keep]
        out[pat] = precise.certified(total, f"pattern {pat}")
    return out


def _precise_state(params: SystemParams, scenario: Scenario, outcome) -> precise.GaussSum:
    if scenario is Scenario.DIRECT:
        ab = post_herald_gausssum(params, params.L_km, outcome[0], ("A", "B"))
        cd = post_herald_gausssum(params, params.L_km, outcome[0], ("C", "D"))
    else:
        ab = precise_swapped_state(params, outcome, ("A", "B"))
        cd = precise_swapped_state(params, outcome, ("C", "D"))
    gs = precise.apply_mixing(precise.tensor(ab, cd), QKD_PAIRS, *measurement_efficiencies(params))
    order = [gs.index(m) for m in OUTPUTS]
    return precise.GaussSum(OUTPUTS, tuple((c, precise.submatrix(q, order)) for c, q in gs.terms))


def needed_patterns(detector: Detector) -> tuple[str, ...]:
    if Detector(detector) is Detector.PNRD:
        return CORRECT + ERRORS
    return PATTERNS


@lru_cache(maxsize=4096)
def pattern_probabilities(params: SystemParams, scenario: Scenario, outcome=(1, 1, 1), backend: str = "auto") -> dict:
    """Pattern probabilities for the scenario (PNRD: only the four used ones).

    Threshold detectors use ball arithmetic by default; see :mod:`dlczqkd.precise`.
    """
    scenario = Scenario(scenario)
    outcome = tuple(outcome)
    if uses_precise(params, backend):
        return precise.adaptive(lambda: _precise_patterns(_precise_state(params, scenario, outcome)))
    cf = qkd_state(params, scenario, outcome)
    return pattern_probabilities_from_state(cf, params.detector, *measurement_efficiencies(params), needed_patterns(params.detector))


def qber_from_patterns(probs: dict, detector: Detector, exact_click: bool = False) -> tuple[float, float, float]:
    """``(p_click, p_error, qber)`` from pattern probabilities.

    PNRD: one click per side.  NRPD: at least one click per side, with a random
    bit assigned to double clicks.  The default NRPD ``p_click`` removes the
    no-click and single-click patterns only; ``exact_click`` also removes the
    two patterns where both clicks are on one side.
    """
    if Detector(detector) is Detector.PNRD:
        p_click = sum(probs[p] for p in CORRECT + ERRORS)
        p_error = sum(probs[p] for p in ERRORS)
    else:
        singles = [p for p in PATTERNS if p.count("1") == 1]
        p_click = 1.0 - probs["0000"] - sum(probs[p] for p in singles)
        if exact_click:
            p_click -= sum(probs[p] for p in SAME_SIDE)
        p_error = sum(probs[p] for p in ERRORS) + 0.5 * sum(probs[p] for p in MULTI)
    if p_click <= 0:
        raise ZeroDivisionError("no click probability")
    if p_error < 0:
        # cancellation leaves round-off of either sign when errors are absent
        if p_error < -ROUNDOFF_TOL * p_click:
            raise EngineError(f"negative error probability {p_error:.3e}")
        p_error = 0.0
    return p_click, p_error, p_error / p_click


def qber_and_click(
    params: SystemParams, scenario: Scenario, exact_click: bool = False, backend: str = "auto"
) -> tuple[float, float, float]:
    return qber_from_patterns(pattern_probabilities(params, Scenario(scenario), (1, 1, 1), backend), params.detector, exact_click)


def binary_entropy(x: float) -> float:
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return -x * math.log2(x) - (1 - x) * math.log2(1 - x)


def secret_fraction(qber: float) -> float:
    """Shor-Preskill fraction ``1 - 2 H(qber)``, clamped at zero."""
    if not 0.0 <= qber <= 1.0:
        raise ValueError(f"qber must lie in [0, 1], got {qber}")
    return max(0.0, 1.0 - 2.0 * binary_entropy(qber))


def round_trip_s(L_km: float, c_mps: float) -> float:
    return 2.0 * L_km * 1e3 / c_mps


def rate_generic(p_s: float, p_m_list: Sequence[float], p_click: float, qber: float, L_km: float, c_mps: float) -> float:
    """Key bits per second per logical memory for ``len(p_m_list)`` nesting levels."""
    swap = float(np.prod(list(p_m_list))) if p_m_list else 1.0
    return secret_fraction(qber) / round_trip_s(L_km, c_mps) * p_s * swap * p_click / 2.0


def qkd_report(params: SystemParams, scenario: Scenario, exact_click: bool = False, backend: str = "auto") -> QkdReport:
    scenario = Scenario(scenario)
    p_click, p_error, qber = qber_and_click(params, scenario, exact_click, backend)
    if scenario is Scenario.DIRECT:
        rate = rate_generic(herald_probability(params, params.L_km), [], p_click, qber, params.L_km, params.c_mps)
    else:
        p_s = herald_probability(params, params.L_km / 2.0)
        p_m = heralded_success_probability(params, backend)
        rate = rate_generic(p_s, [p_m], p_click, qber, params.L_km, params.c_mps)
    return QkdReport(p_click, p_error, qber, secret_fraction(qber), rate, scenario, params)


def rate_no_repeater(params: SystemParams, exact_click: bool = False) -> float:
    return qkd_report(params, Scenario.DIRECT, exact_click).rate


def rate_one_repeater(params: SystemParams, exact_click: bool = False) -> float:
    return qkd_report(params, Scenario.REPEATER, exact_click).rate


def rate(params: SystemParams, scenario: Scenario, exact_click: bool = False) -> float:
    return qkd_report(params, scenario, exact_click).rate


# --------------------------------------------------------------------------
# Joint eight-ensemble cross-check for the repeater scenario

JOINT_LABELS = (("A", "a1", "b1", "B"), ("C", "c1", "d1", "D"))


def _joint_engine(params: SystemParams, outcome, patterns) -> dict:
    i, j, k = outcome
    (_, a1, b1, _), (_, c1, d1, _) = JOINT_LABELS
    cf = tensor(measured_state(params, j, k, JOINT_LABELS[0]), measured_state(params, j, k, JOINT_LABELS[1]))
    cf = apply_qkd_measurement_channel(cf, *measurement_efficiencies(params))
    bsm = detector_factors(params.detector, i, a1 + "'", b1 + "'") + detector_factors(params.detector, i, c1 + "'", d1 + "'")
    norm = moment_integral(cf, bsm + [trace(m) for m in OUTPUTS])
    return {p: moment_integral(cf, bsm + pattern_factors(p, params.detector)) / norm for p in patterns}


def _joint_precise(params: SystemParams, outcome) -> dict:
    i, j, k = outcome
    (_, a1, b1, _), (_, c1, d1, _) = JOINT_LABELS
    gs = precise.tensor(precise_measured_state(params, j, k, JOINT_LABELS[0]), precise_measured_state(params, j, k, JOINT_LABELS[1]))
    gs = precise.apply_mixing(gs, QKD_PAIRS, *measurement_efficiencies(params))
    bsm = {}
    for x, y in ((a1, b1), (c1, d1)):
        kinds = precise_click_kinds(i)
        bsm[x + "'"], bsm[y + "'"] = kinds["A''"], kinds["B''"]
    norm = precise.integrate(gs, {**bsm, **{m: "delta" for m in OUTPUTS}})
    out = {}
    for pat in PATTERNS:
        kinds = {m: ("click" if bit == "1" else "unit") for bit, m in zip(pat, OUTPUTS)}
        out[pat] = precise.certified(precise.integrate(gs, {**bsm, **kinds}) / norm, f"joint pattern {pat}")
    return out


def joint_pattern_probabilities(params: SystemParams, outcome=(1, 1, 1), backend: str = "auto") -> dict:
    """Repeater-scenario patterns from the eight-ensemble state, conditioning on both BSMs at the end."""
    outcome = tuple(outcome)
    if outcome not in OUTCOMES:
        raise ValueError(f"bad outcome {outcome}")
    if uses_precise(params, backend):
        return precise.adaptive(_joint_precise, params, outcome)
    return _joint_engine(params, outcome, needed_patterns(params.detector))


def joint_qber_and_click(params: SystemParams, exact_click: bool = False, backend: str = "auto"):
    return qber_from_patterns(joint_pattern_probabilities(params, backend=backend), params.detector, exact_click)


def check_probabilities(probs: dict, tol: float = 1e-9) -> None:
    for k, v in probs.items():
        if v < -tol or v > 1 + tol:
            raise EngineError(f"pattern {k} probability {v} outside [0, 1]")
