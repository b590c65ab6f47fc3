"""The hop loop: generate, decide, extract, retrieve, remember, answer.

Each hop issues one generation call whose prompt holds the question, the
rendered memory, and the passages retrieved on the previous hop (previous
hop only, passages are not accumulated). If the segment does not fire the
trigger, the run ends there and the answer is read off that final segment;
no extra call is spent. If every hop fires, a single synthesis call asks
for the answer from memory. CoT filter modes add one validation call per
triggered hop on top of that.

Running out of trace records mid-run is not an error: the run terminates
with TRACE_END and whatever hops completed. Other provider failures
propagate, with the completed hops attached to the exception for
diagnosis.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum

from .errors import ConfigError, ProviderError, TraceExhaustedError
from .extraction import (
    CandidateEntity,
    align_spans,
    build_extraction_prompt,
    cot_validate,
    parse_extraction_output,
)
from .filtering import (
    FilterConfig,
    FilterMode,
    MemoryRecord,
    MemorySource,
    MemoryStore,
    entity_confidence,
    filter_entities,
)
from .providers import GenerationProvider, GenerationRequest, GenerationSegment
from .retriever import Document, InvertedIndex, ScoredDoc, search
from .signals import TriggerConfig, TriggerDecision, should_retrieve
from .templates import PromptLibrary, default_prompts


class TerminatedBy(str, Enum):
    NO_TRIGGER = "no_trigger"
    MAX_HOPS = "max_hops"
    TRACE_END = "trace_end"


@dataclass
class PipelineConfig:
    trigger: TriggerConfig = field(default_factory=TriggerConfig)
    entity_filter: FilterConfig = field(default_factory=FilterConfig)
    retrieval_k: int = 3
    max_hops: int = 5
    max_tokens_per_segment: int = 256
    memory_budget_chars: int = 2000

    def __post_init__(self):
        if self.max_hops < 1:
            raise ConfigError("max_hops must be at least 1")
        if self.retrieval_k < 1:
            raise ConfigError("retrieval_k must be at least 1")


@dataclass
class HopRecord:
    hop_index: int
    segment: GenerationSegment
    decision: TriggerDecision
    extracted: list[CandidateEntity]
    kept: list[CandidateEntity]
    subquery: str | None
    retrieved: list[ScoredDoc]
    memory_writes: int


@dataclass
class HopTrace:
    question: str
    hops: list[HopRecord]
    final_answer: str
    total_retrievals: int
    terminated_by: TerminatedBy
    memory: list[MemoryRecord]

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "hops": [
                {
                    "hop_index": h.hop_index,
                    "segment": {
                        "text": h.segment.text,
                        "events": [
                            {"index": e.index, "text": e.text, "entropy": e.entropy, "max_attn": e.max_attn}
                            for e in h.segment.events
                        ],
                        "finish_reason": h.segment.finish_reason.value,
                    },
                    "decision": {
                        "triggered": h.decision.triggered,
                        "token_index": h.decision.token_index,
                        "threshold_used": h.decision.threshold_used,
                        "max_score": h.decision.max_score,
                    },
                    "extracted": [_entity_dict(e) for e in h.extracted],
                    "kept": [_entity_dict(e) for e in h.kept],
                    "subquery": h.subquery,
                    "retrieved": [
                        {"doc_id": d.doc_id, "score": d.score, "rank": d.rank} for d in h.retrieved
                    ],
                    "memory_writes": h.memory_writes,
                }
                for h in self.hops
            ],
            "final_answer": self.final_answer,
            "total_retrievals": self.total_retrievals,
            "terminated_by": self.terminated_by.value,
            "memory": [
                {
                    "key": r.key,
                    "surface": r.surface,
                    "relation": r.relation,
                    "confidence": r.confidence,
                    "hop_added": r.hop_added,
                    "source": r.source.value,
                }
                for r in self.memory
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)


def _entity_dict(entity: CandidateEntity) -> dict:
    return {
        "surface": entity.surface,
        "relation": entity.relation,
        "span_start": entity.span_start,
        "span_end": entity.span_end,
        "confidence": entity.confidence,
    }


_ANSWER_MARKER = re.compile(r"answer\s*:", re.IGNORECASE)


def extract_final_answer(text: str) -> str:
    """Read an answer out of generated text.

    Takes the first non-empty line after the last "Answer:" marker, or
    the first non-empty line of the whole text when there is no marker.
    """
    markers = list(_ANSWER_MARKER.finditer(text))
    candidate = text[markers[-1].end() :] if markers else text
    for line in candidate.splitlines():
        if line.strip():
            return line.strip()
    return ""


def form_subquery(
    question: str,
    kept_entities: list[CandidateEntity],
    memory: MemoryStore,
    budget_chars: int = 2000,
) -> str:
    """Refined retrieval query: question, known facts, and what to find.

    With no kept entities there is nothing to refine with, so the original
    question comes back verbatim.
    """
    if not kept_entities:
        return question
    parts = [question]
    rendered = memory.render(budget_chars)
    if rendered:
        parts.append("Known facts:\n" + rendered)
    wanted = "; ".join(
        e.surface + (f" ({e.relation})" if e.relation else "") for e in kept_entities
    )
    parts.append("Find: " + wanted)
    return "\n".join(parts)


def synthesize_answer(
    question: str,
    memory: MemoryStore,
    last_segment: GenerationSegment | None,
    provider: GenerationProvider,
    budget_chars: int = 2000,
    max_tokens: int = 256,
    prompts: PromptLibrary | None = None,
) -> str:
    """Issue one final call asking for a concise answer from memory."""
    prompts = prompts or default_prompts()
    reasoning_block = f"Latest reasoning:\n{last_segment.text}\n\n" if last_segment else ""
    prompt = prompts.answer.format(
        question=question,
        memory=memory.render(budget_chars),
        reasoning_block=reasoning_block,
    )
    segment = provider.generate(GenerationRequest(prompt=prompt, max_tokens=max_tokens))
    return extract_final_answer(segment.text)


def _build_hop_prompt(
    question: str,
    memory: MemoryStore,
    passages: list[Document],
    config: PipelineConfig,
    prompts: PromptLibrary | None,
) -> str:
    parts: list[str] = []
    rendered = memory.render(config.memory_budget_chars)
    if rendered:
        parts.append("Known facts:\n" + rendered)
    if passages:
        listing = "\n".join(f"[{i}] {d.title}: {d.text}" for i, d in enumerate(passages, start=1))
        parts.append("Passages:\n" + listing)
    return build_extraction_prompt(question, "\n\n".join(parts), prompts)


def _retrieval_confidences(results: list[ScoredDoc]) -> list[float]:
    """Min-max normalize result scores into memory confidences.

    Rank 1 maps to 1.0 and the last to 0.0; a singleton (or an all-tied
    list, where min-max is undefined) maps to 1.0.
    """
    if not results:
        return []
    scores = [d.score for d in results]
    low, high = min(scores), max(scores)
    if high == low:
        return [1.0] * len(results)
    return [(s - low) / (high - low) for s in scores]


def _record_confidence(entity: CandidateEntity, segment: GenerationSegment, config: FilterConfig) -> float:
    # Filters that score entities leave confidence filled in; for the
    # others, score any aligned entity the same way and store the rest at 0.
    if entity.confidence is not None:
        return entity.confidence
    if entity.has_span:
        return entity_confidence(entity, segment.events, config)
    return 0.0


def run_question(
    question: str,
    provider: GenerationProvider,
    index: InvertedIndex,
    config: PipelineConfig,
    prompts: PromptLibrary | None = None,
) -> HopTrace:
    """Run the full hop loop for one question. See the module docstring."""
    memory = MemoryStore()
    hops: list[HopRecord] = []
    passages: list[Document] = []
    final_answer = ""
    terminated: TerminatedBy | None = None
    validating = config.entity_filter.mode in (FilterMode.COT, FilterMode.COTCONF)

    try:
        for hop_index in range(config.max_hops):
            prompt = _build_hop_prompt(question, memory, passages, config, prompts)
            segment = provider.generate(
                GenerationRequest(prompt=prompt, max_tokens=config.max_tokens_per_segment)
            )
            decision = should_retrieve(segment.events, config.trigger)

            if not decision.triggered:
                hops.append(
                    HopRecord(hop_index, segment, decision, [], [], None, [], memory_writes=0)
                )
                final_answer = extract_final_answer(segment.text)
                terminated = TerminatedBy.NO_TRIGGER
                break

            extracted, _skipped = parse_extraction_output(segment.text)
            extracted = align_spans(extracted, segment)
            verdicts = None
            if validating:
                verdicts, _warnings = cot_validate(extracted, question, segment, provider, prompts)
            kept = filter_entities(extracted, segment.events, config.entity_filter, verdicts)

            subquery = form_subquery(question, kept, memory, config.memory_budget_chars)
            results = search(subquery, config.retrieval_k, index)

            writes = 0
            for entity in kept:
                memory.upsert(
                    MemoryRecord.for_surface(
                        entity.surface,
                        confidence=_record_confidence(entity, segment, config.entity_filter),
                        hop_added=hop_index,
                        source=MemorySource.EXTRACTION,
                        relation=entity.relation,
                    )
                )
                writes += 1
            for doc, confidence in zip(results, _retrieval_confidences(results)):
                memory.upsert(
                    MemoryRecord.for_surface(
                        index.document(doc.doc_id).title,
                        confidence=confidence,
                        hop_added=hop_index,
                        source=MemorySource.RETRIEVAL,
                    )
                )
                writes += 1

            hops.append(
                HopRecord(hop_index, segment, decision, extracted, kept, subquery, results, writes)
            )
            passages = [index.document(d.doc_id) for d in results]
        else:
            final_answer = synthesize_answer(
                question,
                memory,
                hops[-1].segment if hops else None,
                provider,
                budget_chars=config.memory_budget_chars,
                max_tokens=config.max_tokens_per_segment,
                prompts=prompts,
            )
            terminated = TerminatedBy.MAX_HOPS
    except TraceExhaustedError:
        terminated = TerminatedBy.TRACE_END
    except ProviderError as exc:
        exc.partial_hops = hops  # diagnostic: what completed before the failure
        raise

    total = sum(1 for h in hops if h.decision.triggered)
    return HopTrace(
        question=question,
        hops=hops,
        final_answer=final_answer,
        total_retrievals=total,
        terminated_by=terminated,
        memory=memory.records(),
    )
