import numpy as np
import pytest

from dlczqkd import fock
from dlczqkd.link import herald_probability, link_fidelity
from dlczqkd.params import Detector, Scenario, SystemParams
from dlczqkd.qkd import qkd_report


def ket_dm(vec):
    """Two-mode density tensor ``rho[x1, x2, y1, y2]`` from a ket tensor ``vec[x1, x2]``."""
    return np.einsum("ab,cd->abcd", vec, vec.conj())


def test_cutoff_policy():
    assert fock.cutoff_for(0.01) == 6
    assert fock.cutoff_for(0.01, cap=3) == 3
    with pytest.raises(ValueError):
        fock.cutoff_for(1.0)


def test_source_state():
    psi = fock.source_pair_state(0.0, 4)
    assert psi[0] == 1.0 and not psi[1:].any()
    psi = fock.source_pair_state(0.2, 20)
    assert np.linalg.norm(psi) == pytest.approx(1.0)
    with pytest.raises(fock.OracleError):
        fock.source_pair_state(0.2, 3)


def test_loss_channel():
    rho = np.zeros((3, 3))
    rho[1, 1] = 1.0
    out = fock.apply_loss(rho, 0, 0.0)
    assert out[0, 0] == pytest.approx(1.0)
    assert np.allclose(fock.apply_loss(rho, 0, 1.0), rho)
    rng = np.random.default_rng(0)
    v = rng.normal(size=5) + 1j * rng.normal(size=5)
    v /= np.linalg.norm(v)
    r = np.outer(v, v.conj())
    n = np.diag(np.arange(5))
    lost = fock.apply_loss(r, 0, 0.3)
    assert np.trace(n @ lost).real == pytest.approx(0.3 * np.trace(n @ r).real)


def test_single_photon_splits_evenly():
    vec = np.zeros((2, 2))
    vec[1, 0] = 1.0
    out = fock.beam_splitter_50_50(ket_dm(vec))
    assert out[1, 0, 1, 0].real == pytest.approx(0.5)
    assert out[0, 1, 0, 1].real == pytest.approx(0.5)
    assert abs(out[1, 0, 0, 1]) == pytest.approx(0.5)


def test_hong_ou_mandel():
    vec = np.zeros((2, 2))
    vec[1, 1] = 1.0
    out = fock.beam_splitter_50_50(ket_dm(vec))
    assert abs(out[1, 1, 1, 1]) < 1e-14
    assert out[2, 0, 2, 0].real + out[0, 2, 0, 2].real == pytest.approx(1.0)


def test_beam_splitter_commutes_with_equal_loss():
    rng = np.random.default_rng(4)
    vec = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    rho = ket_dm(vec / np.linalg.norm(vec))
    a = fock.beam_splitter_50_50(fock.apply_loss(fock.apply_loss(rho, 0, 0.6), 1, 0.6))
    b = fock.beam_splitter_50_50(rho)
    b = fock.apply_loss(fock.apply_loss(b, 0, 0.6), 1, 0.6)
    assert np.max(np.abs(a - b)) < 1e-12


def test_click_povms():
    d = 5
    nrpd = fock.click_povm(Detector.NRPD, 0, d) + fock.click_povm(Detector.NRPD, 1, d)
    assert np.allclose(nrpd, np.eye(d))
    p0, p1 = fock.click_povm(Detector.PNRD, 0, d), fock.click_povm(Detector.PNRD, 1, d)
    assert np.allclose(p0 @ p1, 0)
    with pytest.raises(ValueError):
        fock.click_povm(Detector.PNRD, 2, d)


def test_click_povm_on_coherent_state():
    alpha, d = 0.6, 30
    n = np.arange(d)
    from math import factorial

    amp = np.exp(-alpha**2 / 2) * alpha**n / np.sqrt([float(factorial(k)) for k in n])
    rho = np.outer(amp, amp)
    mean = alpha**2
    assert np.trace(fock.click_povm(Detector.NRPD, 1, d) @ rho) == pytest.approx(1 - np.exp(-mean))
    assert np.trace(fock.click_povm(Detector.PNRD, 1, d) @ rho) == pytest.approx(mean * np.exp(-mean))


@pytest.mark.parametrize("det", list(Detector))
def test_oracle_link_matches_closed_forms(det):
    p = SystemParams(0.01, eta_d=0.5, detector=det)
    o = fock.oracle_link_metrics(p, 0.0)
    assert o.herald_prob == pytest.approx(herald_probability(p, 0.0), rel=1e-6)
    assert o.fidelity == pytest.approx(link_fidelity(p, 0.0), rel=1e-6)
    assert fock.oracle_link_metrics(SystemParams(1e-4, detector=det), 50.0).fidelity == pytest.approx(1.0, abs=1e-3)


def test_oracle_swap_small_pc_cap():
    o = fock.oracle_swap_metrics(SystemParams(1e-5, L_km=100.0))
    assert o.fidelity == pytest.approx(1 / (2 - 0.35), abs=1e-4)


def test_oracle_cutoff_stability():
    p = SystemParams(0.02, L_km=100.0, detector=Detector.NRPD)
    n = fock.cutoff_for(0.02)
    a = fock.oracle_link_metrics(p, n_max=n)
    b = fock.oracle_link_metrics(p, n_max=n + 1)
    assert abs(a.fidelity - b.fidelity) < 1e-8
    assert abs(a.herald_prob - b.herald_prob) < 1e-8


@pytest.mark.slow
@pytest.mark.parametrize("det", list(Detector))
def test_oracle_repeater_qkd(det):
    p = SystemParams(0.01, L_km=100.0, detector=det)
    o = fock.oracle_qkd_metrics(p, Scenario.REPEATER)
    r = qkd_report(p, Scenario.REPEATER)
    assert r.qber == pytest.approx(o.qber, rel=1e-5)
    assert r.p_click == pytest.approx(o.p_click, rel=1e-5)


def test_check_state_rejects_bad_trace():
    rho = np.zeros((2, 2, 2, 2))
    rho[0, 0, 0, 0] = 2.0
    with pytest.raises(fock.OracleError):
        fock.check_state(rho)
