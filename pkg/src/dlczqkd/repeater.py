"""One-node DLCZ repeater: Bell-state measurement on the middle ensembles."""

from __future__ import annotations

import itertools
from functools import lru_cache
from typing import NamedTuple

from .gaussian import (
    CharFun,
    EngineError,
    MeasurementFactor,
    bell,
    click,
    moment_integral,
    one_photon,
    partial_condition,
    tensor,
    trace,
    vacuum,
)
from . import precise
from .link import apply_mixing, parity_sign, post_herald_charfun, post_herald_gausssum
from .params import Detector, SystemParams

SYMMETRY_TOL = 1e-10
OUTCOMES = tuple(itertools.product((1, 2), repeat=3))


class SwapMetrics(NamedTuple):
    fidelity: float
    fidelity_purified: float
    p_m: float
    p_m_purified: float
    vacuum_weight: float


def pre_bsm_state(params: SystemParams, j: int, k: int, labels=("A", "A'", "B'", "B")) -> CharFun:
    """Product of the two sub-link states (length ``L/2`` each) over ``A, A', B', B``."""
    half = params.L_km / 2.0
    a, a1, b1, b = labels
    return tensor(post_herald_charfun(params, half, j, (a, a1)), post_herald_charfun(params, half, k, (b1, b)))


def apply_bsm_channel(cf: CharFun, mode_x: str, mode_y: str, eta_c: float, eta_d: float) -> CharFun:
    """Retrieval, 50-50 mixing and detector loss on ``X, Y``; outputs are ``X'', Y''``."""
    if mode_x == mode_y:
        raise ValueError("BSM needs two distinct modes")
    return apply_mixing(cf, [(mode_x, mode_y, mode_x + "'", mode_y + "'")], eta_c, eta_d)


def detector_factors(detector: Detector, outcome: int, mode_1: str, mode_2: str) -> list[MeasurementFactor]:
    """Kernels for "only detector ``outcome`` clicks" on the pair ``(mode_1, mode_2)``."""
    hit = one_photon if Detector(detector) is Detector.PNRD else click
    if outcome == 1:
        return [hit(mode_1), vacuum(mode_2)]
    if outcome == 2:
        return [vacuum(mode_1), hit(mode_2)]
    raise ValueError("outcome must be 1 or 2")


def measured_state(params: SystemParams, j: int, k: int, labels=("A", "A'", "B'", "B")) -> CharFun:
    """``A, A'', B'', B`` after the BSM module (measurement efficiency ``eta_m``)."""
    cf = pre_bsm_state(params, j, k, labels)
    # with an eta_m override only the product eta_c * eta_d enters the module
    return apply_bsm_channel(cf, labels[1], labels[2], *bsm_efficiencies(params))


def _bsm_factors(params: SystemParams, i: int) -> list[MeasurementFactor]:
    return detector_factors(params.detector, i, "A''", "B''")


def _assert_equal(values: dict, what: str) -> float:
    vals = list(values.values())
    spread = max(vals) - min(vals)
    if spread > SYMMETRY_TOL * max(1.0, max(abs(v) for v in vals)):
        raise EngineError(f"{what} differs across outcomes by {spread:.3e}")
    return sum(vals) / len(vals)


def _engine_moments(params: SystemParams):
    bsm, bell_num, vac = {}, {}, {}
    for i, j, k in OUTCOMES:
        cf = measured_state(params, j, k)
        clicks = _bsm_factors(params, i)
        bsm[i, j, k] = moment_integral(cf, clicks + [trace("A"), trace("B")])
        bell_num[i, j, k] = moment_integral(cf, clicks + [bell("A", "B", parity_sign(i + j + k))])
        vac[i, j, k] = moment_integral(cf, clicks + [vacuum("A"), vacuum("B")])
    return bsm, bell_num, vac


def bsm_efficiencies(params: SystemParams) -> tuple[float, float]:
    """``(eta_c, eta_d)`` fed to the measurement module; an ``eta_m`` override replaces the product."""
    return (params.eta_c, params.eta_d) if params.eta_m is None else (params.eta_m, 1.0)


def precise_measured_state(params: SystemParams, j: int, k: int, labels=("A", "A'", "B'", "B")) -> precise.GaussSum:
    """Ball-arithmetic counterpart of :func:`measured_state` (threshold detectors)."""
    half = params.L_km / 2.0
    a, a1, b1, b = labels
    gs = precise.tensor(post_herald_gausssum(params, half, j, (a, a1)), post_herald_gausssum(params, half, k, (b1, b)))
    return precise.apply_mixing(gs, [(a1, b1, a1 + "'", b1 + "'")], *bsm_efficiencies(params))


def precise_click_kinds(outcome: int) -> dict[str, str]:
    if outcome not in (1, 2):
        raise ValueError("outcome must be 1 or 2")
    return {"A''": "click", "B''": "unit"} if outcome == 1 else {"A''": "unit", "B''": "click"}


def _precise_moments(params: SystemParams):
    bsm, bell_num, vac = {}, {}, {}
    for i, j, k in OUTCOMES:
        gs = precise_measured_state(params, j, k)
        kinds = precise_click_kinds(i)
        key = (i, j, k)
        bsm[key] = precise.certified(precise.integrate(gs, {**kinds, "A": "delta", "B": "delta"}), "BSM probability")
        s = parity_sign(i + j + k)
        bell_num[key] = precise.certified(precise.integrate(gs, kinds, bell_modes=("A", "B", s)), "Bell overlap")
        vac[key] = precise.certified(precise.integrate(gs, {**kinds, "A": "unit", "B": "unit"}), "vacuum weight")
    return bsm, bell_num, vac


BACKENDS = ("auto", "engine", "precise")


def uses_precise(params: SystemParams, backend: str = "auto") -> bool:
    """Threshold detectors go through ball arithmetic unless the double engine is requested."""
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "precise" and params.detector is not Detector.NRPD:
        raise ValueError("the ball-arithmetic backend covers threshold detectors only")
    return backend == "precise" or (backend == "auto" and params.detector is Detector.NRPD)


@lru_cache(maxsize=1024)
def _swap_moments(params: SystemParams, backend: str = "auto"):
    if uses_precise(params, backend):
        return precise.adaptive(_precise_moments, params)
    return _engine_moments(params)


def bsm_success_probability(params: SystemParams, backend: str = "auto") -> float:
    """Total BSM success probability ``P_M`` (twice the single-detector probability)."""
    bsm, _, _ = _swap_moments(params, backend)
    return 2.0 * _assert_equal(bsm, "BSM probability")


def swapped_fidelity(params: SystemParams, backend: str = "auto") -> float:
    bsm, num, _ = _swap_moments(params, backend)
    half_pm = _assert_equal(bsm, "BSM probability")
    if half_pm <= 0:
        raise ZeroDivisionError("BSM success probability vanishes")
    return _assert_equal({key: num[key] / bsm[key] for key in OUTCOMES}, "swapped fidelity")


def vacuum_weight(params: SystemParams, backend: str = "auto") -> float:
    """``<00|rho_AB|00>`` of the swapped state."""
    bsm, _, vac = _swap_moments(params, backend)
    _assert_equal(bsm, "BSM probability")
    return _assert_equal({key: vac[key] / bsm[key] for key in OUTCOMES}, "vacuum weight")


def purified_metrics(params: SystemParams, backend: str = "auto") -> tuple[float, float]:
    """Fidelity and BSM success probability after excluding the ``|00>`` component."""
    bsm, _, vac = _swap_moments(params, backend)
    v = vacuum_weight(params, backend)
    if v >= 1.0:
        raise ZeroDivisionError("swapped state is pure vacuum")
    fid = swapped_fidelity(params, backend)
    p_m = 2.0 * _assert_equal(bsm, "BSM probability")
    # P_M^pur = P_M - sum_i Tr(M_i |00><00| rho) for fixed (j, k)
    by_jk = {(j, k): sum(vac[i, j, k] for i in (1, 2)) for j in (1, 2) for k in (1, 2)}
    p_pur = p_m - _assert_equal(by_jk, "vacuum click weight")
    alt = p_m * (1.0 - v)
    if abs(p_pur - alt) > SYMMETRY_TOL * max(1.0, p_m):
        raise EngineError("purified BSM probability is inconsistent")
    return fid / (1.0 - v), p_pur


def swap_metrics(params: SystemParams, backend: str = "auto") -> SwapMetrics:
    fid_pur, p_pur = purified_metrics(params, backend)
    return SwapMetrics(
        fidelity=swapped_fidelity(params, backend),
        fidelity_purified=fid_pur,
        p_m=bsm_success_probability(params, backend),
        p_m_purified=p_pur,
        vacuum_weight=vacuum_weight(params, backend),
    )


@lru_cache(maxsize=512)
def _engine_swapped(params: SystemParams, outcome: tuple[int, int, int]) -> tuple[CharFun, float]:
    i, j, k = outcome
    cf = measured_state(params, j, k)
    return partial_condition(cf, _bsm_factors(params, i))


def swapped_charfun(params: SystemParams, outcome=(1, 1, 1), method: str = "engine") -> CharFun:
    """Normalised characteristic function of ``A, B`` after BSM outcome ``(i, j, k)``."""
    outcome = tuple(outcome)
    if outcome not in OUTCOMES:
        raise ValueError(f"outcome must be a triple of 1/2 values, got {outcome}")
    if method == "engine":
        return _engine_swapped(params, outcome)[0]
    if method == "appendix":
        from .appendix import appendix_charfun

        return appendix_charfun(params, parity_sign(sum(outcome)))
    raise ValueError(f"unknown method {method!r}")


def _precise_swapped(params: SystemParams, outcome, labels=("A", "B")) -> tuple[precise.GaussSum, precise.arb]:
    i, j, k = outcome
    gs, weight = precise.condition(precise_measured_state(params, j, k), precise_click_kinds(i))
    return gs.relabel(dict(zip(("A", "B"), labels))), weight


def precise_swapped_state(params: SystemParams, outcome=(1, 1, 1), labels=("A", "B")) -> precise.GaussSum:
    """Swapped threshold-detector state in ball arithmetic (call inside a precision context)."""
    return _precise_swapped(params, tuple(outcome), labels)[0]


def swapped_weight(params: SystemParams, outcome=(1, 1, 1)) -> float:
    """Probability ``P_M / 2`` of the BSM outcome, from the conditioning step."""
    return _engine_swapped(params, tuple(outcome))[1]


def heralded_success_probability(params: SystemParams, backend: str = "auto") -> float:
    """``P_M`` from the single outcome ``(1, 1, 1)`` the QKD state is built on.

    Equals :func:`bsm_success_probability` by symmetry but skips the other seven
    outcomes; the double engine reuses the conditioning weight it already has.
    """
    if uses_precise(params, backend):
        return bsm_success_probability(params, backend)
    return 2.0 * swapped_weight(params)
