"""Brute-force truncated Fock-space model of the same setups.

Nothing here uses the characteristic-function engine.  Each source is a
two-mode squeezed pair ``sqrt(1-p) sum_n p^{n/2} |n>_atom |n>_photon``; losses
are binomial Kraus maps, the beam splitter is the exact two-mode unitary on
the truncated input space, and detectors are projectors.  Rather than carry
photon states forward, every detector POVM is pulled back through losses and
beam splitter into an effective POVM on the modes that enter the station.

Two-mode operators are stored as arrays ``O[x1, x2, y1, y2] = <x1 x2|O|y1 y2>``.
Beam-splitter convention: ``a_in^dag = sum_out u[out, in] b_out^dag`` with
``u = [[-1, 1], [1, 1]] / sqrt(2)``.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .params import Detector, Scenario, SystemParams, derived_params

TAIL_TOL = 1e-12
QKD_CUTOFF_CAP = 5
REPEATER_QKD_CUTOFF = 5
PSD_TOL = 1e-10
BS_MATRIX = np.array([[-1.0, 1.0], [1.0, 1.0]]) / math.sqrt(2.0)


class OracleError(RuntimeError):
    """Truncation or consistency failure in the Fock model."""


def cutoff_for(p_c: float, cap: int | None = None) -> int:
    """Smallest ``k`` with ``p_c^(k+1) < 1e-12``, optionally capped."""
    if not 0.0 <= p_c < 1.0:
        raise ValueError("p_c must lie in [0, 1)")
    k = 0
    while p_c ** (k + 1) >= TAIL_TOL:
        k += 1
    return k if cap is None else min(k, cap)


def source_pair_state(p_c: float, n_max: int, strict: bool = True) -> np.ndarray:
    """Amplitudes ``psi[n]`` of ``|n>_atom |n>_photon``, renormalised on the cutoff."""
    if strict and p_c ** (n_max + 1) >= TAIL_TOL:
        raise OracleError(f"cutoff {n_max} too small for p_c={p_c}")
    n = np.arange(n_max + 1)
    amp = math.sqrt(1.0 - p_c) * np.power(p_c, n / 2.0)
    return amp / np.linalg.norm(amp)


def loss_kraus(eta: float, dim: int) -> list[np.ndarray]:
    """Kraus operators ``K_l |n> = sqrt(C(n,l) eta^(n-l) (1-eta)^l) |n-l>``."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    out = []
    for l in range(dim):
        k = np.zeros((dim, dim))
        for n in range(l, dim):
            k[n - l, n] = math.sqrt(math.comb(n, l) * eta ** (n - l) * (1.0 - eta) ** l)
        out.append(k)
    return out


def apply_loss(rho: np.ndarray, mode: int, eta: float) -> np.ndarray:
    """Pure-loss channel on axis ``mode`` of a density tensor ``rho[kets..., bras...]``."""
    k_modes = rho.ndim // 2
    dim = rho.shape[mode]
    out = np.zeros_like(rho, dtype=complex)
    for k in loss_kraus(eta, dim):
        t = np.moveaxis(np.tensordot(k, rho, axes=([1], [mode])), 0, mode)
        t = np.moveaxis(np.tensordot(k.conj(), t, axes=([1], [mode + k_modes])), 0, mode + k_modes)
        out += t
    return out


def loss_adjoint(op: np.ndarray, mode: int, eta: float) -> np.ndarray:
    """Heisenberg-picture loss on axis ``mode`` of an operator tensor."""
    k_modes = op.ndim // 2
    dim = op.shape[mode]
    out = np.zeros_like(op, dtype=complex)
    for k in loss_kraus(eta, dim):
        t = np.moveaxis(np.tensordot(k.T.conj(), op, axes=([1], [mode])), 0, mode)
        t = np.moveaxis(np.tensordot(k.T, t, axes=([1], [mode + k_modes])), 0, mode + k_modes)
        out += t
    return out


@lru_cache(maxsize=32)
def beam_splitter_isometry(n_in: int) -> np.ndarray:
    """``U[m1, m2, n1, n2]`` from inputs ``<= n_in`` each to outputs ``<= 2 n_in``."""
    (u00, u01), (u10, u11) = BS_MATRIX
    d_out = 2 * n_in + 1
    u = np.zeros((d_out, d_out, n_in + 1, n_in + 1))
    for n1 in range(n_in + 1):
        for n2 in range(n_in + 1):
            norm = math.sqrt(math.factorial(n1) * math.factorial(n2))
            for k1 in range(n1 + 1):
                for k2 in range(n2 + 1):
                    m1 = k1 + k2
                    m2 = n1 + n2 - m1
                    amp = math.comb(n1, k1) * math.comb(n2, k2)
                    amp *= u00**k1 * u10 ** (n1 - k1) * u01**k2 * u11 ** (n2 - k2)
                    u[m1, m2, n1, n2] += amp * math.sqrt(math.factorial(m1) * math.factorial(m2)) / norm
    return u


def beam_splitter_50_50(rho: np.ndarray) -> np.ndarray:
    """Two-mode state ``rho[x1, x2, y1, y2]`` after the beam splitter (output cutoff doubled)."""
    u = beam_splitter_isometry(rho.shape[0] - 1)
    return np.einsum("abxy,xyzw,cdzw->abcd", u, rho, u.conj(), optimize=True)


def click_povm(detector: Detector, outcome: int, dim: int) -> np.ndarray:
    """Single-mode detector element: ``outcome`` 0 is no click, 1 a click."""
    vac = np.zeros((dim, dim))
    vac[0, 0] = 1.0
    if outcome == 0:
        return vac
    if outcome != 1:
        raise ValueError("outcome must be 0 or 1")
    if Detector(detector) is Detector.PNRD:
        one = np.zeros((dim, dim))
        one[1, 1] = 1.0
        return one
    return np.eye(dim) - vac


def effective_povm(detector: Detector, bits: tuple[int, int], n_in: int, eta_in: float, eta_out: float = 1.0) -> np.ndarray:
    """Station POVM pulled back to its two input modes.

    Input loss ``eta_in``, beam splitter, output loss ``eta_out``, then the
    detector elements ``bits`` on outputs ``(0, 1)``.
    """
    d_out = 2 * n_in + 1
    m = np.einsum("ac,bd->abcd", click_povm(detector, bits[0], d_out), click_povm(detector, bits[1], d_out))
    for mode in (0, 1):
        m = loss_adjoint(m, mode, eta_out)
    u = beam_splitter_isometry(n_in)
    e = np.einsum("abxy,abcd,cdzw->xyzw", u.conj(), m, u, optimize=True)
    for mode in (0, 1):
        e = loss_adjoint(e, mode, eta_in)
    return e


def _herald_bits(outcome: int) -> tuple[int, int]:
    if outcome not in (1, 2):
        raise ValueError("outcome must be 1 or 2")
    return (1, 0) if outcome == 1 else (0, 1)


def bell_overlap(rho: np.ndarray, sign: int) -> float:
    """``<psi|rho|psi>`` with ``|psi> = (|01> + sign |10>)/sqrt(2)``."""
    val = 0.5 * (rho[0, 1, 0, 1] + rho[1, 0, 1, 0] + sign * (rho[0, 1, 1, 0] + rho[1, 0, 0, 1]))
    return float(val.real)


def parity(j: int) -> int:
    return -1 if j % 2 else 1


def _trace(rho: np.ndarray) -> float:
    return float(np.einsum("abab->", rho).real)


def check_state(rho: np.ndarray, what: str = "state") -> None:
    """Unit trace, Hermitian and positive semidefinite within tolerance."""
    d = rho.shape[0] * rho.shape[1]
    mat = rho.reshape(d, d)
    if abs(np.trace(mat) - 1.0) > 1e-10:
        raise OracleError(f"{what}: trace {np.trace(mat)}")
    if np.max(np.abs(mat - mat.conj().T)) > 1e-10:
        raise OracleError(f"{what}: not Hermitian")
    if np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))[0] < -PSD_TOL:
        raise OracleError(f"{what}: not positive semidefinite")


class OracleLink(NamedTuple):
    herald_prob: float
    fidelity: float
    states: dict  # herald outcome -> normalised rho_AB


def oracle_link_metrics(params: SystemParams, segment_km: float | None = None, n_max: int | None = None) -> OracleLink:
    """Heralded pair of one link: probability, Bell fidelity and the conditional states."""
    seg = params.L_km if segment_km is None else segment_km
    n = cutoff_for(params.p_c) if n_max is None else n_max
    psi = source_pair_state(params.p_c, n, strict=n_max is None)
    eta_s = derived_params(params, seg).eta_s
    amp = np.einsum("a,b,c,d->abcd", psi, psi, psi, psi)
    probs, fids, states = [], [], {}
    for j in (1, 2):
        e = effective_povm(params.detector, _herald_bits(j), n, eta_s)
        # photon number equals atom number in each pair, so the atomic state
        # picks out matrix elements of the effective POVM (bra/ket swapped)
        rho = amp * np.transpose(e, (2, 3, 0, 1))
        p = _trace(rho)
        rho = rho / p
        check_state(rho, f"link state j={j}")
        probs.append(p)
        fids.append(bell_overlap(rho, parity(j)))
        states[j] = rho
    if abs(fids[0] - fids[1]) > 1e-10 or abs(probs[0] - probs[1]) > 1e-10:
        raise OracleError("herald outcomes are not symmetric")
    return OracleLink(probs[0] + probs[1], 0.5 * (fids[0] + fids[1]), states)


def _measurement_etas(params: SystemParams) -> tuple[float, float]:
    return (params.eta_c, params.eta_d) if params.eta_m is None else (params.eta_m, 1.0)


class OracleSwap(NamedTuple):
    fidelity: float
    fidelity_purified: float
    p_m: float
    p_m_purified: float
    vacuum_weight: float
    states: dict  # (i, j, k) -> normalised rho_AB


@lru_cache(maxsize=64)
def oracle_swap_metrics(params: SystemParams, n_max: int | None = None) -> OracleSwap:
    """Entanglement swapping of two half-length links, all eight outcomes."""
    link = oracle_link_metrics(params, params.L_km / 2.0, n_max)
    n = link.states[1].shape[0] - 1
    eta_in, eta_out = _measurement_etas(params)
    weights, fids, vacs, states = {}, {}, {}, {}
    for i in (1, 2):
        e = effective_povm(params.detector, _herald_bits(i), n, eta_in, eta_out)
        for j in (1, 2):
            for k in (1, 2):
                r1, r2 = link.states[j], link.states[k]
                # rho_AB[a,b,a',b'] = sum <y1 y2|E|x1 x2> r1[a,x1,a',y1] r2[x2,b,y2,b']
                rho = np.einsum("yvxu,axcy,ubvd->abcd", e, r1, r2, optimize=True)
                w = _trace(rho)
                rho = rho / w
                check_state(rho, f"swapped state {(i, j, k)}")
                weights[i, j, k] = w
                fids[i, j, k] = bell_overlap(rho, parity(i + j + k))
                vacs[i, j, k] = float(rho[0, 0, 0, 0].real)
                states[i, j, k] = rho
    for name, d in (("BSM probability", weights), ("fidelity", fids), ("vacuum weight", vacs)):
        vals = list(d.values())
        if max(vals) - min(vals) > 1e-10:
            raise OracleError(f"{name} depends on the outcome")
    w = float(np.mean(list(weights.values())))
    f = float(np.mean(list(fids.values())))
    v = float(np.mean(list(vacs.values())))
    return OracleSwap(f, f / (1.0 - v), 2.0 * w, 2.0 * w * (1.0 - v), v, states)


def truncate(rho: np.ndarray, n: int) -> np.ndarray:
    """Restrict a two-mode state to photon numbers ``<= n`` per mode and renormalise."""
    r = rho[: n + 1, : n + 1, : n + 1, : n + 1]
    return r / _trace(r)


def oracle_patterns(rho_ab: np.ndarray, rho_cd: np.ndarray, params: SystemParams) -> dict[str, float]:
    """Sixteen QKD pattern probabilities (bit order ``A' B' C' D'``)."""
    n = rho_ab.shape[0] - 1
    eta_in, eta_out = _measurement_etas(params)
    side = {
        bits: effective_povm(params.detector, bits, n, eta_in, eta_out) for bits in ((0, 0), (0, 1), (1, 0), (1, 1))
    }
    out = {}
    for a in (0, 1):
        for b in (0, 1):
            for c in (0, 1):
                for d in (0, 1):
                    ea, eb = side[a, c], side[b, d]  # Alice on (A, C), Bob on (B, D)
                    # P = sum Ea[a,c,a',c'] Eb[b,d,b',d'] rho_ab[a',b',a,b] rho_cd[c',d',c,d]
                    val = np.einsum("acxz,bdyw,xyab,zwcd->", ea, eb, rho_ab, rho_cd, optimize=True)
                    out[f"{a}{b}{c}{d}"] = float(val.real)
    return out


def oracle_qkd_patterns(params: SystemParams, scenario: Scenario, n_max: int | None = None) -> dict[str, float]:
    scenario = Scenario(scenario)
    if scenario is Scenario.DIRECT:
        cap = QKD_CUTOFF_CAP if n_max is None else n_max
        n = min(cutoff_for(params.p_c), cap)
        rho = oracle_link_metrics(params, params.L_km, n).states[1]
    else:
        cap = REPEATER_QKD_CUTOFF if n_max is None else n_max
        rho = truncate(oracle_swap_metrics(params).states[1, 1, 1], min(cutoff_for(params.p_c), cap))
    return oracle_patterns(rho, rho, params)


def oracle_qkd_metrics(params: SystemParams, scenario: Scenario, exact_click: bool = False, n_max: int | None = None):
    """:class:`~dlczqkd.qkd.QkdReport` computed from the Fock model."""
    from .qkd import QkdReport, qber_from_patterns, rate_generic, secret_fraction

    scenario = Scenario(scenario)
    probs = oracle_qkd_patterns(params, scenario, n_max)
    p_click, p_error, qber = qber_from_patterns(probs, params.detector, exact_click)
    if scenario is Scenario.DIRECT:
        link = oracle_link_metrics(params, params.L_km)
        rate = rate_generic(link.herald_prob, [], p_click, qber, params.L_km, params.c_mps)
    else:
        link = oracle_link_metrics(params, params.L_km / 2.0)
        rate = rate_generic(link.herald_prob, [oracle_swap_metrics(params).p_m], p_click, qber, params.L_km, params.c_mps)
    return QkdReport(p_click, p_error, qber, secret_fraction(qber), rate, scenario, params)
