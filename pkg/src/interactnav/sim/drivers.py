"""Human driver model: internal states, IDM parameters, and the IDM acceleration law."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class Trait(str, enum.Enum):
    CONSERVATIVE = "Conservative"
    AGGRESSIVE = "Aggressive"


class Intention(str, enum.Enum):
    YIELD = "Yield"
    NOT_YIELD = "NotYield"


class GapViolationError(ValueError):
    """Raised when IDM is asked for an acceleration at a non-positive gap."""


@dataclass(frozen=True)
class InternalState:
    trait: Trait
    intention: Intention

    @property
    def conservative(self) -> bool:
        return self.trait is Trait.CONSERVATIVE

    @property
    def yields(self) -> bool:
        return self.intention is Intention.YIELD


@dataclass(frozen=True)
class DriverParams:
    v_star: float
    s0: float
    delta: float = 4.0
    T_gap: float = 1.5
    a_max: float = 3.0
    b_comf: float = 2.0


P_YIELD = {Trait.CONSERVATIVE: 0.9, Trait.AGGRESSIVE: 0.1}

# (trait, intention) -> (mean desired speed m/s, minimum-gap range m)
CLASS_PARAMS = {
    (Trait.AGGRESSIVE, Intention.NOT_YIELD): (9.0, (4.5, 7.5)),
    (Trait.AGGRESSIVE, Intention.YIELD): (8.8, (4.8, 7.8)),
    (Trait.CONSERVATIVE, Intention.NOT_YIELD): (8.6, (5.7, 8.7)),
    (Trait.CONSERVATIVE, Intention.YIELD): (8.4, (6.0, 9.0)),
}

SIGMA_V = 0.1


def idm_accel(v: float, dv: float, s: float, p: DriverParams) -> float:
    """IDM acceleration for speed ``v``, approaching rate ``dv`` (own minus
    leader speed) and bumper-to-bumper gap ``s``. Pass ``math.inf`` for an
    empty road."""
    if not s > 0.0:
        raise GapViolationError(f"gap must be positive, got {s}")
    s_star = p.s0 + p.T_gap * v + v * dv / (2.0 * math.sqrt(p.a_max * p.b_comf))
    if s_star < p.s0:
        s_star = p.s0
    return p.a_max * (1.0 - (v / p.v_star) ** p.delta - (s_star / s) ** 2)


def sample_internal_state(rng: np.random.Generator, p_aggressive: float) -> InternalState:
    if not 0.0 <= p_aggressive <= 1.0:
        raise ValueError("p_aggressive must lie in [0, 1]")
    trait = Trait.AGGRESSIVE if rng.random() < p_aggressive else Trait.CONSERVATIVE
    intention = Intention.YIELD if rng.random() < P_YIELD[trait] else Intention.NOT_YIELD
    return InternalState(trait, intention)


def sample_driver_params(st: InternalState, rng: np.random.Generator,
                         sigma_v: float = SIGMA_V) -> DriverParams:
    mean_v, (lo, hi) = CLASS_PARAMS[(st.trait, st.intention)]
    return DriverParams(v_star=float(rng.normal(mean_v, sigma_v)), s0=float(rng.uniform(lo, hi)))
