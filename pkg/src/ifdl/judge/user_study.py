from __future__ import annotations

from collections import Counter
from enum import Enum
from typing import Iterable


class Vote(Enum):
    A = "A"
    B = "B"
    NEITHER = "Neither"
    TIE = "Tie"


def _as_vote(v) -> Vote:
    if isinstance(v, Vote):
        return v
    for vote in Vote:
        if str(v).strip().lower() == vote.value.lower():
            return vote
    raise ValueError(f"unknown vote {v!r}; expected one of {[x.value for x in Vote]}")


def tally_user_study(votes: Iterable) -> dict[str, dict[str, float]]:
    """Share of each option, as proportions and as percentages to one decimal."""
    counts = Counter(_as_vote(v) for v in votes)
    total = sum(counts.values())
    if total == 0:
        raise ValueError("no votes to tally")
    proportions = {v.value: counts[v] / total for v in Vote}
    return {
        "counts": {v.value: counts[v] for v in Vote},
        "proportions": proportions,
        "percent": {k: round(100 * p, 1) for k, p in proportions.items()},
    }
