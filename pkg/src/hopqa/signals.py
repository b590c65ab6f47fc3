"""Per-token uncertainty signals and the retrieval trigger decision.

A generation segment is a list of TokenEvent records. Each token carries
its next-token distribution entropy (in nats) and the strongest attention
weight any later token paid to it. The trigger combines both into a
per-token score and fires when any token's score strictly exceeds a
threshold, either a fixed value or one derived from the segment itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .errors import (
    ConfigError,
    EmptySegmentError,
    InvalidDistributionError,
    InvalidWeightError,
)

# How far a distribution may drift from summing to 1 before it is rejected.
SUM_TOLERANCE = 1e-6


class TriggerMode(str, Enum):
    DYNAMIC = "dynamic"
    FIXED = "fixed"


@dataclass(frozen=True)
class TokenEvent:
    """One generated token with its uncertainty signals attached."""

    index: int
    text: str
    entropy: float
    max_attn: float


@dataclass(frozen=True)
class TriggerConfig:
    """Weights and mode for the retrieval trigger.

    alpha scales entropy, beta scales attention, both in the per-token
    score and in the dynamic threshold. fixed_threshold is only read in
    FIXED mode.
    """

    mode: TriggerMode = TriggerMode.DYNAMIC
    alpha: float = 1.0
    beta: float = 1.0
    fixed_threshold: float = 0.6

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("trigger weights must be non-negative")
        if self.mode is TriggerMode.DYNAMIC and self.alpha + self.beta <= 0:
            raise ConfigError("dynamic trigger needs alpha + beta > 0")


@dataclass(frozen=True)
class TriggerDecision:
    triggered: bool
    token_index: int | None
    threshold_used: float
    max_score: float


def token_entropy(dist: Sequence[float]) -> float:
    """Shannon entropy, in nats, of a next-token probability distribution.

    The distribution must be non-empty, contain no negative entries, and
    sum to 1 within SUM_TOLERANCE. Zero entries contribute nothing.
    """
    if len(dist) == 0:
        raise InvalidDistributionError("empty distribution")
    for p in dist:
        if p < 0.0:
            raise InvalidDistributionError(f"negative probability {p!r}")
    total = math.fsum(dist)
    if not math.isfinite(total) or abs(total - 1.0) > SUM_TOLERANCE:
        raise InvalidDistributionError(f"probabilities sum to {total!r}, expected 1.0")
    # max() folds the -0.0 that fsum produces for one-hot distributions.
    return max(0.0, -math.fsum(p * math.log(p) for p in dist if p > 0.0))


def max_attention(weights: Sequence[float]) -> float:
    """Largest attention weight paid to a token by any later token.

    An empty weight list (nothing ever attended back) yields 0.0.
    """
    for w in weights:
        if not (0.0 <= w <= 1.0):
            raise InvalidWeightError(f"attention weight {w!r} outside [0, 1]")
    if len(weights) == 0:
        return 0.0
    return max(weights)


def trigger_score(event: TokenEvent, config: TriggerConfig) -> float:
    """Per-token trigger score: alpha * entropy + beta * max_attn."""
    return config.alpha * event.entropy + config.beta * event.max_attn


def dynamic_threshold(events: Sequence[TokenEvent], config: TriggerConfig) -> float:
    """Segment-derived threshold: alpha * mean entropy + beta * mean attention.

    Evaluated as the mean of the per-token scores (the same quantity, by
    linearity) and clamped into [min score, max score]. The clamp keeps
    rounding from pushing the threshold below a segment's uniform score,
    which would let identical-score segments trigger on float noise.
    """
    if len(events) == 0:
        raise EmptySegmentError("cannot derive a threshold from an empty segment")
    scores = [trigger_score(e, config) for e in events]
    mean_score = math.fsum(scores) / len(scores)
    return min(max(mean_score, min(scores)), max(scores))


def should_retrieve(events: Sequence[TokenEvent], config: TriggerConfig) -> TriggerDecision:
    """Decide whether the segment warrants a retrieval hop.

    Fires iff some token's score strictly exceeds the threshold;
    token_index is the first such token. Ties with the threshold do not
    fire.
    """
    if len(events) == 0:
        raise EmptySegmentError("cannot evaluate the trigger on an empty segment")
    if config.mode is TriggerMode.DYNAMIC:
        threshold = dynamic_threshold(events, config)
    else:
        threshold = config.fixed_threshold

    scores = [trigger_score(e, config) for e in events]
    max_score = max(scores)
    token_index: int | None = None
    for event, score in zip(events, scores):
        if score > threshold:
            token_index = event.index
            break
    return TriggerDecision(
        triggered=token_index is not None,
        token_index=token_index,
        threshold_used=threshold,
        max_score=max_score,
    )
