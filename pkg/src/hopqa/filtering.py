"""Entity confidence, the four filter modes, and the cross-hop memory.

Confidence of an entity is the best per-token score over its span:

    gamma * 1 / (1 + entropy) + delta * max_attn

so certain (low-entropy) tokens that later tokens kept attending to score
highest. The bound 0 <= confidence <= gamma + delta follows directly.

Filter modes:
  NOFILTER  keep everything, order untouched
  COT       keep entities the validation verdicts marked KEEP
  CONF      score spanned entities, pick TopK or strictly-above-threshold,
            output in descending confidence (ties keep input order)
  COTCONF   the COT pass followed by the CONF pass
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence, Union

from .errors import ConfigError, MissingSpanError
from .extraction import CandidateEntity
from .signals import TokenEvent

logger = logging.getLogger(__name__)


class FilterMode(str, Enum):
    NOFILTER = "nofilter"
    COT = "cot"
    CONF = "conf"
    COTCONF = "cotconf"


@dataclass(frozen=True)
class TopK:
    k: int = 5

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("top-k selection needs k >= 1")


@dataclass(frozen=True)
class Threshold:
    tau: float


Selection = Union[TopK, Threshold]


@dataclass(frozen=True)
class FilterConfig:
    mode: FilterMode = FilterMode.NOFILTER
    gamma: float = 1.0
    delta: float = 0.2
    selection: Selection = TopK(5)

    def __post_init__(self):
        if self.gamma < 0 or self.delta < 0:
            raise ConfigError("confidence weights must be non-negative")


def entity_confidence(entity: CandidateEntity, events: Sequence[TokenEvent], config: FilterConfig) -> float:
    """Best per-token confidence over the entity's span (see module docstring)."""
    if not entity.has_span:
        raise MissingSpanError(f"entity {entity.surface!r} has no token span")
    if not 0 <= entity.span_start < entity.span_end <= len(events):
        raise MissingSpanError(
            f"entity {entity.surface!r} span [{entity.span_start}, {entity.span_end}) "
            f"outside segment of {len(events)} tokens"
        )
    return max(
        config.gamma * (1.0 / (1.0 + e.entropy)) + config.delta * e.max_attn
        for e in events[entity.span_start : entity.span_end]
    )


def _cot_pass(entities: list[CandidateEntity], verdicts: Sequence[bool] | None) -> list[CandidateEntity]:
    if verdicts is None or len(verdicts) != len(entities):
        raise ConfigError("CoT filtering needs one verdict per entity")
    return [e for e, keep in zip(entities, verdicts) if keep]


def _conf_pass(
    entities: list[CandidateEntity], events: Sequence[TokenEvent], config: FilterConfig
) -> list[CandidateEntity]:
    scored: list[tuple[float, int, CandidateEntity]] = []
    dropped = 0
    for position, entity in enumerate(entities):
        if not entity.has_span:
            dropped += 1
            continue
        confidence = entity_confidence(entity, events, config)
        scored.append((confidence, position, replace(entity, confidence=confidence)))
    if dropped:
        logger.warning("confidence filter dropped %d unaligned entities", dropped)

    scored.sort(key=lambda item: (-item[0], item[1]))
    if isinstance(config.selection, TopK):
        chosen = scored[: config.selection.k]
    else:
        chosen = [item for item in scored if item[0] > config.selection.tau]
    return [entity for _, _, entity in chosen]


def filter_entities(
    entities: list[CandidateEntity],
    events: Sequence[TokenEvent],
    config: FilterConfig,
    cot_verdicts: Sequence[bool] | None = None,
) -> list[CandidateEntity]:
    """Apply the configured filter mode; see module docstring for the modes."""
    if config.mode is FilterMode.NOFILTER:
        return list(entities)
    if config.mode is FilterMode.COT:
        return _cot_pass(entities, cot_verdicts)
    if config.mode is FilterMode.CONF:
        return _conf_pass(entities, events, config)
    return _conf_pass(_cot_pass(entities, cot_verdicts), events, config)


# ---------------------------------------------------------------------------
# cross-hop memory
# ---------------------------------------------------------------------------


class MemorySource(str, Enum):
    EXTRACTION = "extraction"
    RETRIEVAL = "retrieval"


def normalize_key(surface: str) -> str:
    """Memory key for a surface form: case-folded, whitespace collapsed."""
    return " ".join(surface.casefold().split())


@dataclass
class MemoryRecord:
    key: str
    surface: str
    relation: str | None
    confidence: float
    hop_added: int
    source: MemorySource

    @classmethod
    def for_surface(
        cls,
        surface: str,
        confidence: float,
        hop_added: int,
        source: MemorySource,
        relation: str | None = None,
    ) -> "MemoryRecord":
        return cls(
            key=normalize_key(surface),
            surface=surface,
            relation=relation,
            confidence=confidence,
            hop_added=hop_added,
            source=source,
        )


class MemoryStore:
    """Insertion-ordered store of the facts gathered so far, one per key.

    Upserting an existing key keeps the higher-confidence observation's
    surface and relation (ties keep the incumbent) and never moves the
    record or changes hop_added, so insertion order is stable for life.
    """

    def __init__(self):
        self._records: dict[str, MemoryRecord] = {}

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, key: str) -> bool:
        return key in self._records

    def get(self, key: str) -> MemoryRecord | None:
        return self._records.get(key)

    def upsert(self, record: MemoryRecord) -> None:
        incumbent = self._records.get(record.key)
        if incumbent is None:
            self._records[record.key] = record
        elif record.confidence > incumbent.confidence:
            self._records[record.key] = replace(record, hop_added=incumbent.hop_added)

    def records(self) -> list[MemoryRecord]:
        """Records in insertion order."""
        return list(self._records.values())

    def render(self, budget_chars: int) -> str:
        """Render memory for a prompt, best facts first, within a budget.

        One line per record, descending confidence with insertion order
        breaking ties, truncated to the largest whole-line prefix whose
        joined length fits budget_chars.
        """
        ordered = sorted(self._records.values(), key=lambda r: -r.confidence)
        lines: list[str] = []
        total = 0
        for record in ordered:
            line = f"- {record.surface} ({record.relation})" if record.relation else f"- {record.surface}"
            cost = len(line) + (1 if lines else 0)
            if total + cost > budget_chars:
                break
            lines.append(line)
            total += cost
        return "\n".join(lines)
