"""Photon-collection efficiency budget.

Chains a collection solid angle with per-element transmissions and compares
the resulting prediction against a counting measurement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .errors import DomainError
from .numerics import EstimateWithError, binomial_estimate

__all__ = [
    "EfficiencyStage",
    "EfficiencyBudget",
    "ComparisonReport",
    "na_to_solid_angle_fraction",
    "chain_efficiency",
    "compare_with_measurement",
    "reference_budget",
]


@dataclass(frozen=True)
class EfficiencyStage:
    """One lossy element in the collection path."""

    name: str
    transmission: float

    def __post_init__(self) -> None:
        if not isinstance(self.name, str) or not self.name:
            raise DomainError("stage name must be a non-empty string")
        t = float(self.transmission)
        if not (0.0 < t <= 1.0):
            raise DomainError(f"stage {self.name!r}: transmission must be in (0, 1], got {self.transmission}")
        object.__setattr__(self, "transmission", t)


@dataclass(frozen=True)
class EfficiencyBudget:
    """Numerical aperture plus the ordered chain of lossy elements."""

    na: float
    stages: tuple[EfficiencyStage, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        na = float(self.na)
        if not (0.0 < na < 1.0):
            raise DomainError(f"numerical aperture must be in (0, 1), got {self.na}")
        object.__setattr__(self, "na", na)
        stages = tuple(self.stages)
        for s in stages:
            if not isinstance(s, EfficiencyStage):
                raise DomainError("stages must be EfficiencyStage instances")
        object.__setattr__(self, "stages", stages)


def na_to_solid_angle_fraction(na: float) -> float:
    """Fraction of the full sphere subtended by a lens of the given NA.

    A cone of half-angle arcsin(na) covers (1 - cos) / 2 of the sphere.
    """
    na = float(na)
    if not (0.0 < na < 1.0):
        raise DomainError(f"numerical aperture must be in (0, 1), got {na}")
    return (1.0 - math.sqrt(1.0 - na * na)) / 2.0


def chain_efficiency(budget: EfficiencyBudget) -> float:
    """Overall detection probability for an emitted photon."""
    eff = na_to_solid_angle_fraction(budget.na)
    for stage in budget.stages:
        eff *= stage.transmission
    return eff


@dataclass(frozen=True)
class ComparisonReport:
    """Prediction versus counting measurement.

    sigma_distance is |predicted - measured| in units of the binomial
    standard error; it is math.inf when the error is zero but the values
    disagree. degenerate marks any zero-error measurement.
    """

    predicted: float
    measured: EstimateWithError
    sigma_distance: float

    @property
    def degenerate(self) -> bool:
        return self.measured.std_error == 0.0

    def to_json_dict(self) -> dict:
        sigma = self.sigma_distance
        return {
            "predicted": self.predicted,
            "measured": {
                "value": self.measured.value,
                "std_error": self.measured.std_error,
            },
            "sigma_distance": None if math.isinf(sigma) else sigma,
            "degenerate": self.degenerate,
        }


def compare_with_measurement(
    predicted: float, detections: int, trials: int
) -> ComparisonReport:
    """Score a predicted efficiency against observed counts."""
    predicted = float(predicted)
    if not (0.0 <= predicted <= 1.0):
        raise DomainError(f"predicted efficiency must be in [0, 1], got {predicted}")
    measured = binomial_estimate(detections, trials)
    gap = abs(predicted - measured.value)
    if measured.std_error == 0.0:
        sigma = 0.0 if gap == 0.0 else math.inf
    else:
        sigma = gap / measured.std_error
    return ComparisonReport(predicted=predicted, measured=measured, sigma_distance=sigma)


# Element transmissions transcribed from a published budget figure; treat as
# nominal values, not calibrated data.
_REFERENCE_STAGES: Sequence[tuple[str, float]] = (
    ("objective", 0.917),
    ("window", 0.96),
    ("mirror_1", 0.99),
    ("mirror_2", 0.99),
    ("relay_lens", 0.95),
    ("interference_filter", 0.854),
    ("pmt_quantum_efficiency", 0.28),
)


def reference_budget() -> EfficiencyBudget:
    """Default collection chain: NA 0.6 objective through to the PMT."""
    stages = tuple(EfficiencyStage(name=n, transmission=t) for n, t in _REFERENCE_STAGES)
    return EfficiencyBudget(na=0.6, stages=stages)
