"""Physical scenario parameters shared by every pipeline."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from enum import Enum
from typing import NamedTuple


class Detector(str, Enum):
    PNRD = "pnrd"  # photon-number resolving: a click means exactly one photon
    NRPD = "nrpd"  # threshold: a click means at least one photon

    def __str__(self) -> str:
        return self.value


class Scenario(str, Enum):
    DIRECT = "direct"
    REPEATER = "repeater"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class SystemParams:
    """Excitation probability, efficiencies, distances and detector model.

    ``eta_m`` overrides the measurement efficiency of the BSM and QKD modules
    (otherwise ``eta_c * eta_d``); the heralding stations always use ``eta_d``.
    """

    p_c: float
    eta_d: float = 0.5
    eta_c: float = 0.7
    L_km: float = 100.0
    L_att_km: float = 25.0
    c_mps: float = 2e8
    detector: Detector = Detector.PNRD
    eta_m: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "detector", Detector(self.detector))
        if not 0.0 < self.p_c < 1.0:
            raise ValueError(f"p_c must lie in (0, 1), got {self.p_c}")
        for name in ("eta_d", "eta_c"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.eta_m is not None and not 0.0 < self.eta_m <= 1.0:
            raise ValueError(f"eta_m must lie in (0, 1], got {self.eta_m}")
        if not self.L_km > 0:
            raise ValueError("L_km must be positive")
        if not self.L_att_km > 0 or not self.c_mps > 0:
            raise ValueError("L_att_km and c_mps must be positive")

    @property
    def measurement_efficiency(self) -> float:
        return self.eta_c * self.eta_d if self.eta_m is None else self.eta_m

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["detector"] = self.detector.value
        d["eta_m_effective"] = self.measurement_efficiency
        return d


class Derived(NamedTuple):
    eta: float
    eta_s: float
    eta_m: float
    alpha: float


def derived_params(params: SystemParams, segment_km: float) -> Derived:
    """Transmissivity, system efficiency, measurement efficiency and ``alpha`` for one link.

    Photons of a link of length ``segment_km`` travel half of it to the
    midpoint station.
    """
    if segment_km < 0:
        raise ValueError("segment length must be non-negative")
    eta = math.exp(-(segment_km / 2.0) / params.L_att_km)
    eta_s = params.eta_d * eta
    alpha = 1.0 / (eta_s * params.p_c + 1.0 - params.p_c)
    return Derived(eta, eta_s, params.measurement_efficiency, alpha)
