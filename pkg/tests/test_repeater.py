import numpy as np
import pytest

from dlczqkd import gaussian as g
from dlczqkd.fock import oracle_swap_metrics
from dlczqkd.link import link_fidelity
from dlczqkd.params import Detector, SystemParams
from dlczqkd.repeater import (
    OUTCOMES,
    bsm_success_probability,
    heralded_success_probability,
    measured_state,
    pre_bsm_state,
    swap_metrics,
    swapped_charfun,
    swapped_fidelity,
    vacuum_weight,
)

ETA_M = 0.35

# frozen from the Fock oracle at p_c = 0.01, L = 100 km, eta_d = 0.5, eta_c = 0.7
FROZEN = {
    Detector.PNRD: dict(fidelity=0.590364, fidelity_purified=0.957975, p_m=0.291348),
    Detector.NRPD: dict(fidelity=0.534248, fidelity_purified=0.953524, p_m=0.324269),
}


@pytest.mark.parametrize("det", list(Detector))
def test_frozen_values(det):
    m = swap_metrics(SystemParams(0.01, L_km=100.0, detector=det))
    for name, val in FROZEN[det].items():
        assert getattr(m, name) == pytest.approx(val, abs=1e-6)


@pytest.mark.parametrize("det", list(Detector))
def test_matches_oracle(det):
    p = SystemParams(0.01, L_km=100.0, detector=det)
    m, o = swap_metrics(p), oracle_swap_metrics(p)
    for name in ("fidelity", "fidelity_purified", "p_m", "p_m_purified", "vacuum_weight"):
        assert getattr(m, name) == pytest.approx(getattr(o, name), rel=1e-6)


@pytest.mark.parametrize("det,p_m,cap", [(Detector.PNRD, 0.28875, 1 / (2 - ETA_M)), (Detector.NRPD, 0.319375, 1 / (2 - ETA_M / 2))])
def test_small_pc_limits(det, p_m, cap):
    p = SystemParams(1e-5, L_km=100.0, detector=det)
    assert bsm_success_probability(p) == pytest.approx(p_m, rel=1e-3)
    assert swapped_fidelity(p) == pytest.approx(cap, rel=1e-3)
    assert swap_metrics(p).fidelity_purified == pytest.approx(1.0, abs=1e-3)


def test_pnrd_vacuum_weight_limit():
    p = SystemParams(1e-5, L_km=100.0)
    assert vacuum_weight(p) == pytest.approx((1 - ETA_M) / (2 - ETA_M), rel=1e-3)


@pytest.mark.parametrize("det", list(Detector))
def test_caps_and_ordering_on_grid(det):
    cap = 1 / (2 - ETA_M) if det is Detector.PNRD else 1 / (2 - ETA_M / 2)
    for p_c in (1e-4, 0.005, 0.02, 0.05):
        for L in (50.0, 300.0, 800.0):
            m = swap_metrics(SystemParams(p_c, L_km=L, detector=det))
            assert m.fidelity <= cap + 1e-12
            assert m.fidelity_purified >= m.fidelity
            assert 0.0 <= m.p_m_purified <= m.p_m <= 1.0
            assert 0.0 <= m.vacuum_weight <= 1.0
            assert m.p_m_purified == pytest.approx(m.p_m * (1 - m.vacuum_weight), rel=1e-10)


def test_pre_bsm_state_marginal_and_normalisation():
    p = SystemParams(0.02, L_km=200.0)
    cf = pre_bsm_state(p, 1, 2)
    assert cf([0, 0, 0, 0]).real == pytest.approx(1.0, abs=1e-12)
    bell = [g.bell("A", "A'", -1), g.trace("B'"), g.trace("B")]
    assert g.moment_integral(cf, bell) == pytest.approx(link_fidelity(p, 100.0), rel=1e-12)


def test_bsm_channel_keeps_trace():
    cf = measured_state(SystemParams(0.01, L_km=100.0), 1, 1)
    assert g.trace_all(cf) == pytest.approx(1.0, abs=1e-12)


# the double engine loses digits to cancellation for threshold detectors
@pytest.mark.parametrize("det,tol", [(Detector.PNRD, 1e-10), (Detector.NRPD, 1e-8)])
def test_engine_swapped_state(det, tol):
    p = SystemParams(0.01, L_km=100.0, detector=det, eta_m=0.5)
    cf = swapped_charfun(p, (1, 1, 1))
    assert cf([0, 0]).real == pytest.approx(1.0, abs=tol)
    # target sign for (1, 1, 1) is (-1)^3
    fid = g.moment_integral(cf, [g.bell("A", "B", -1)])
    assert fid == pytest.approx(swapped_fidelity(p), rel=tol)


def test_outcomes_complete():
    assert len(OUTCOMES) == 8


@pytest.mark.parametrize("det", list(Detector))
def test_heralded_success_matches_bsm(det):
    p = SystemParams(0.01, L_km=100.0, detector=det)
    assert heralded_success_probability(p) == pytest.approx(bsm_success_probability(p), rel=1e-9)


def test_herald_crossover_exists():
    from dlczqkd.link import herald_probability

    for det in Detector:
        ok = []
        for L in (50.0, 200.0, 400.0):
            p = SystemParams(0.01, L_km=L, detector=det)
            ok.append(herald_probability(p, L / 2) * swap_metrics(p).p_m > herald_probability(p, L))
        assert not ok[0] and ok[-1]


def test_precise_and_engine_backends_agree():
    p = SystemParams(0.005, L_km=200.0, detector=Detector.NRPD)
    a = swap_metrics(p, backend="engine")
    b = swap_metrics(p, backend="precise")
    assert np.allclose(a[:5], b[:5], rtol=1e-6)
    with pytest.raises(ValueError):
        swap_metrics(p.with_(detector=Detector.PNRD), backend="precise")
