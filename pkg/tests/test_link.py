import math

import numpy as np
import pytest

from dlczqkd import gaussian as g
from dlczqkd.link import (
    herald_probability,
    herald_probability_engine,
    link_fidelity,
    link_fidelity_engine,
    link_metrics,
    post_herald_charfun,
    werner_swap_fidelity,
)
from dlczqkd.params import Detector, Scenario, SystemParams, derived_params

# eta_d = 0.5 with a zero-length segment gives eta_s = 0.5
HALF = dict(eta_d=0.5)


def test_derived_params():
    d = derived_params(SystemParams(0.01, eta_d=1.0), 0.0)
    assert (d.eta, d.eta_s, d.alpha) == (1.0, 1.0, 1.0)
    assert derived_params(SystemParams(0.01), 50.0).eta == pytest.approx(math.exp(-1.0))
    assert derived_params(SystemParams(0.01, **HALF), 0.0).alpha == pytest.approx(1.0050251, abs=1e-7)


def test_measurement_efficiency_override():
    assert SystemParams(0.01).measurement_efficiency == pytest.approx(0.35)
    assert SystemParams(0.01, eta_m=0.9).measurement_efficiency == 0.9


@pytest.mark.parametrize("bad", [dict(p_c=0.0), dict(p_c=1.0), dict(p_c=0.1, eta_d=0.0), dict(p_c=0.1, L_km=-1.0),
                                 dict(p_c=0.1, eta_m=1.5)])
def test_params_validation(bad):
    with pytest.raises(ValueError):
        SystemParams(**bad)


def test_enum_strings():
    assert str(Detector("nrpd")) == "nrpd"
    assert Scenario("repeater") is Scenario.REPEATER


@pytest.mark.parametrize("det,fid,herald", [(Detector.PNRD, 0.985075, 0.0099495), (Detector.NRPD, 0.980125, 0.0099997)])
def test_closed_form_values(det, fid, herald):
    p = SystemParams(0.01, detector=det, **HALF)
    assert link_fidelity(p, 0.0) == pytest.approx(fid, abs=1e-6)
    assert herald_probability(p, 0.0) == pytest.approx(herald, abs=1e-7)


@pytest.mark.parametrize("det", list(Detector))
@pytest.mark.parametrize("p_c", [1e-3, 0.01, 0.05])
@pytest.mark.parametrize("seg", [0.0, 40.0, 200.0])
def test_engine_matches_closed_form(det, p_c, seg):
    p = SystemParams(p_c, detector=det)
    assert link_fidelity_engine(p, seg) == pytest.approx(link_fidelity(p, seg), rel=1e-9)
    assert herald_probability_engine(p, seg) == pytest.approx(herald_probability(p, seg), rel=1e-9)


@pytest.mark.parametrize("det", list(Detector))
@pytest.mark.parametrize("j", [1, 2])
def test_post_herald_state_normalised(det, j):
    cf = post_herald_charfun(SystemParams(0.03, detector=det), 120.0, j)
    assert cf([0, 0]).real == pytest.approx(1.0, abs=1e-12)
    assert g.trace_all(cf) == pytest.approx(1.0, abs=1e-12)


def test_small_pc_limit_is_bell_state():
    p = SystemParams(1e-9, eta_d=0.5)
    rng = np.random.default_rng(2)
    for j, s in ((1, -1), (2, 1)):
        cf = post_herald_charfun(p, 30.0, j)
        for _ in range(5):
            za, zb = rng.normal(size=2) + 1j * rng.normal(size=2)
            ideal = math.exp(-(abs(za) ** 2 + abs(zb) ** 2)) * (1 - 0.5 * abs(za + s * zb) ** 2)
            assert cf([za, zb]) == pytest.approx(ideal, abs=1e-7)


def test_monotonicity():
    pcs = [1e-3, 5e-3, 0.01, 0.03, 0.05]
    for det in Detector:
        fids = [link_fidelity(SystemParams(p, detector=det), 50.0) for p in pcs]
        assert all(a > b for a, b in zip(fids, fids[1:]))
        heralds = [herald_probability(SystemParams(p, detector=det), 50.0) for p in pcs]
        assert all(a < b for a, b in zip(heralds, heralds[1:]))
        dists = [herald_probability(SystemParams(0.01, detector=det), d) for d in (10, 50, 100, 300)]
        assert all(a > b for a, b in zip(dists, dists[1:]))
    for p in pcs:
        pn = SystemParams(p, detector=Detector.PNRD)
        assert link_fidelity(pn, 80.0) >= link_fidelity(pn.with_(detector=Detector.NRPD), 80.0)


def test_link_metrics_bundle():
    m = link_metrics(SystemParams(0.01, L_km=100.0))
    assert m.fidelity == link_fidelity(SystemParams(0.01), 100.0)
    assert m.alpha > 1.0


def test_werner():
    assert werner_swap_fidelity(1.0) == pytest.approx(1.0)
    assert werner_swap_fidelity(0.25) == pytest.approx(0.25)
    assert werner_swap_fidelity(0.85) == pytest.approx(0.73)
    with pytest.raises(ValueError):
        werner_swap_fidelity(0.1)
