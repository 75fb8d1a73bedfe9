"""Training weights for examples collected through exploration."""
from __future__ import annotations

import enum
from collections.abc import Sequence
from dataclasses import dataclass


class WeightingKind(str, enum.Enum):
    PROPENSITY = "propensity"
    MULTINOMIAL = "multinomial"


@dataclass(frozen=True)
class WeightingScheme:
    kind: WeightingKind = WeightingKind.MULTINOMIAL
    cap: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "kind", WeightingKind(self.kind))
        if not self.cap >= 1:
            raise ValueError("weight cap must be >= 1")


def propensity_estimate(pull_counts: Sequence[int], active: Sequence[int], chosen: int) -> float:
    """Share of the chosen bucket among pulls of all active buckets.

    ``pull_counts`` must already include the current pull, so the result is
    always defined and lies in (0, 1].
    """
    if chosen not in active:
        raise ValueError("chosen bucket is not active")
    total = sum(int(pull_counts[b]) for b in set(active))
    n = int(pull_counts[chosen])
    if n < 1:
        raise ValueError("pull counts must include the current pull")
    return n / total


def multinomial_prob(scores: Sequence[float], chosen_index: int) -> float:
    """``scores[chosen] / sum(scores)``, uniform when every score is zero."""
    if not len(scores):
        raise ValueError("empty candidate list")
    total = float(sum(scores))
    if total <= 0.0:
        return 1.0 / len(scores)
    return float(scores[chosen_index]) / total


def weight(p: float, scheme: WeightingScheme) -> float:
    if not p > 0:
        raise ValueError(f"probability must be positive, got {p}")
    return min(1.0 / p, scheme.cap)
