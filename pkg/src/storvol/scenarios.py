"""Three-branch wind scenarios and exponential demand calibration."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market import ModelError, ScenarioSet

DEFAULT_PROBABILITIES = (0.2, 0.6, 0.2)  # (high, base, low)


@dataclass(frozen=True)
class FluctuationSpec:
    phi: float
    probabilities: tuple = DEFAULT_PROBABILITIES

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        if np.any(phi < 0) or np.any(phi > 1):
            raise ModelError("phi must lie in [0, 1]", "scenarios.phi")
        p = tuple(float(x) for x in self.probabilities)
        if len(p) != 3 or min(p) <= 0 or abs(sum(p) - 1) > 1e-12:
            raise ModelError("need three positive probabilities (high, base, low) summing to 1",
                             "scenarios.probabilities")
        object.__setattr__(self, "probabilities", p)


def build_wind_scenarios(base, spec: FluctuationSpec):
    """Availability in the high, base and low wind scenarios.

    ``base`` has time as its last axis (e.g. ``(t,)`` for one firm or
    ``(node, t)``); the result appends a scenario axis of length 3 ordered
    (high, base, low).  ``spec.phi`` may be a scalar or a per-hour vector.

    >>> grid, probs = build_wind_scenarios([100.0], FluctuationSpec(0.5))
    >>> grid.tolist()
    [[150.0, 100.0, 50.0]]
    """
    base = np.asarray(base, dtype=float)
    if np.any(base < 0):
        raise ModelError("base wind profile must be >= 0", "wind.base")
    phi = np.asarray(spec.phi, dtype=float)
    if phi.ndim and phi.shape[-1] != base.shape[-1]:
        raise ModelError(f"per-hour phi has {phi.shape[-1]} entries, profile has {base.shape[-1]}",
                         "scenarios.phi")
    grid = np.stack([(1 + phi) * base, base, (1 - phi) * base], axis=-1)
    return grid, ScenarioSet(np.array(spec.probabilities))


def calibrate_demand(p_ref, q_ref, elasticity):
    """Exponential demand curve through ``(q_ref, p_ref)`` with point elasticity ``elasticity``.

    Works elementwise on arrays.  Returns ``(alpha, beta)``.
    """
    p_ref = np.asarray(p_ref, dtype=float)
    q_ref = np.asarray(q_ref, dtype=float)
    elasticity = np.asarray(elasticity, dtype=float)
    if np.any(~(p_ref > 0)) or np.any(~(q_ref > 0)):
        raise ModelError("reference price and quantity must be > 0", "calibration")
    if np.any(~(elasticity < 0)):
        raise ModelError("elasticity must be negative", "calibration.elasticity")
    beta = -1.0 / (elasticity * q_ref)
    alpha = p_ref * np.exp(beta * q_ref)
    if beta.ndim == 0:
        return float(alpha), float(beta)
    return alpha, beta


def point_elasticity(beta, q) -> float:
    """dQ/dP * P/Q of the exponential curve at quantity ``q``."""
    return -1.0 / (beta * q)
