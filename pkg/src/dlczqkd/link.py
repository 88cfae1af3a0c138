"""Single DLCZ link without repeater: heralded state, fidelity and heralding probability."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .gaussian import (
    CharFun,
    bell,
    moment_integral,
    multiply_gaussian_factor,
    one_photon,
    click,
    substitute_linear,
    tensor,
    vacuum,
)
from .params import Detector, SystemParams, derived_params
from . import precise


class LinkMetrics(NamedTuple):
    fidelity: float
    herald_prob: float
    alpha: float
    eta_s: float


def parity_sign(j: int) -> int:
    """``(-1)^j`` for a herald / outcome index."""
    return -1 if j % 2 else 1


def bell_form(sign: int) -> np.ndarray:
    """Matrix of ``|z_a + sign z_b|^2``."""
    return np.array([[1.0, sign], [sign, 1.0]], dtype=complex)


def post_herald_charfun(params: SystemParams, segment_km: float, j: int, modes=("A", "B")) -> CharFun:
    """State of the two ensembles after a click on detector ``j`` (1 or 2)."""
    d = derived_params(params, segment_km)
    p, alpha, eta_s = params.p_c, d.alpha, d.eta_s
    s = parity_sign(j)
    base = alpha * np.eye(2)
    if params.detector is Detector.PNRD:
        terms = [(1.0, base), (-0.5 * alpha, base, [bell_form(s)])]
    else:
        beta = alpha * eta_s * p / (2.0 * (1.0 - p))
        terms = [
            (-(1.0 - p) / (eta_s * p), base),
            (1.0 / (alpha * eta_s * p), base + beta * bell_form(s)),
        ]
    return CharFun.build(modes, terms)


def post_herald_gausssum(params: SystemParams, segment_km: float, j: int, modes=("A", "B")) -> precise.GaussSum:
    """Threshold-detector heralded state in ball arithmetic (call inside a precision context)."""
    if params.detector is not Detector.NRPD:
        raise ValueError("the ball-arithmetic path covers the threshold-detector state only")
    arb = precise.num
    p = arb(params.p_c)
    eta_s = arb(params.eta_d) * (-(arb(segment_km) / 2) / arb(params.L_att_km)).exp()
    alpha = 1 / (eta_s * p + 1 - p)
    beta = alpha * eta_s * p / (2 * (1 - p))
    s = parity_sign(j)
    base = alpha * precise.eye(2)
    bell_m = precise.arb_mat([[1, s], [s, 1]])
    terms = ((-(1 - p) / (eta_s * p), base), (1 / (alpha * eta_s * p), base + beta * bell_m))
    return precise.GaussSum(tuple(modes), terms)


def link_fidelity(params: SystemParams, segment_km: float) -> float:
    d = derived_params(params, segment_km)
    x = d.eta_s * params.p_c + 1.0 - params.p_c
    if params.detector is Detector.PNRD:
        return x**3
    return (1.0 - params.p_c) * x**2


def herald_probability(params: SystemParams, segment_km: float) -> float:
    """Probability ``P_S`` that exactly one of the two heralding detectors clicks."""
    d = derived_params(params, segment_km)
    p = params.p_c
    x = d.eta_s * p + 1.0 - p
    if params.detector is Detector.PNRD:
        return 2.0 * (1.0 - p) ** 2 * d.eta_s * p / x**3
    return 2.0 * (1.0 - p) * d.eta_s * p / x**2


def werner_swap_fidelity(fidelity: float) -> float:
    """Fidelity after an ideal swap of two Werner pairs of fidelity ``fidelity``."""
    if not 0.25 <= fidelity <= 1.0:
        raise ValueError(f"Werner fidelity must lie in [1/4, 1], got {fidelity}")
    return 0.25 + (4.0 / 3.0) * (fidelity - 0.25) ** 2


def link_metrics(params: SystemParams, segment_km: float | None = None) -> LinkMetrics:
    seg = params.L_km if segment_km is None else segment_km
    d = derived_params(params, seg)
    return LinkMetrics(link_fidelity(params, seg), herald_probability(params, seg), d.alpha, d.eta_s)


def link_fidelity_engine(params: SystemParams, segment_km: float) -> float:
    """Fidelity from moment integrals of the heralded state against the Bell projector."""
    vals = []
    for j in (1, 2):
        cf = post_herald_charfun(params, segment_km, j)
        vals.append(moment_integral(cf, [bell("A", "B", parity_sign(j))]))
    if abs(vals[0] - vals[1]) > 1e-10:
        raise ArithmeticError(f"herald outcomes disagree: {vals}")
    return 0.5 * (vals[0] + vals[1])


def mixing_map(eta_c: float, eta_d: float) -> tuple[np.ndarray, np.ndarray]:
    """Argument map and Gaussian factor of the two-port measurement module.

    Returns ``(L, G)`` over ordered outputs ``(X, Y)``: the old input arguments
    are ``sqrt(eta_c) * (zX-, zY+)`` with ``zX- = sqrt(eta_d/2)(zY - zX)`` and
    ``zY+ = sqrt(eta_d/2)(zY + zX)``, and the factor is
    ``exp(-(1-eta_d)(|zX|^2+|zY|^2) - (1-eta_c)(|zX-|^2+|zY+|^2))``.
    """
    h = np.sqrt(eta_d / 2.0)
    minus = h * np.array([-1.0, 1.0])
    plus = h * np.array([1.0, 1.0])
    lmap = np.sqrt(eta_c) * np.vstack([minus, plus])
    g = (1.0 - eta_d) * np.eye(2) + (1.0 - eta_c) * (np.outer(minus, minus) + np.outer(plus, plus))
    return lmap.astype(complex), g.astype(complex)


def apply_mixing(cf: CharFun, pairs, eta_c: float, eta_d: float) -> CharFun:
    """Send each ``(x, y, x_out, y_out)`` pair of modes through the measurement module."""
    n = cf.n_modes
    lmap = np.eye(n, dtype=complex)
    gfac = np.zeros((n, n), dtype=complex)
    new_modes = list(cf.modes)
    sub_l, sub_g = mixing_map(eta_c, eta_d)
    for x, y, x_out, y_out in pairs:
        ix, iy = cf.index(x), cf.index(y)
        idx = [ix, iy]
        lmap[np.ix_(idx, idx)] = sub_l
        gfac[np.ix_(idx, idx)] = sub_g
        new_modes[ix], new_modes[iy] = x_out, y_out
    return multiply_gaussian_factor(substitute_linear(cf, lmap, new_modes), gfac)


def thermal_charfun(mean_photons: float, mode: str) -> CharFun:
    """Single-mode thermal state, ``exp(-(1 + n) |z|^2)``."""
    return CharFun.build((mode,), [(1.0, [[1.0 + mean_photons]])])


def herald_probability_engine(params: SystemParams, segment_km: float) -> float:
    """Heralding probability from the photon marginals through the engine.

    Each source emits a thermal photon field with mean ``p_c/(1-p_c)``; the two
    fields suffer loss ``eta`` and detector inefficiency ``eta_d`` and are mixed
    on a 50-50 beam splitter.  The herald is one click on either output.
    """
    d = derived_params(params, segment_km)
    nbar = params.p_c / (1.0 - params.p_c)
    cf = tensor(thermal_charfun(nbar, "a"), thermal_charfun(nbar, "b"))
    # path loss plays the role of the pre-mixing efficiency
    cf = apply_mixing(cf, [("a", "b", "d1", "d2")], d.eta, params.eta_d)
    hit = one_photon if params.detector is Detector.PNRD else click
    p1 = moment_integral(cf, [hit("d1"), vacuum("d2")])
    p2 = moment_integral(cf, [vacuum("d1"), hit("d2")])
    return p1 + p2
