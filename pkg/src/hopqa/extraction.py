"""Entity extraction: prompt building, output parsing, span alignment.

The generation prompt asks the model to emit candidate entities inline,
one per line:

    ENTITY: <surface> | RELATION: <relation>

with the RELATION clause optional. Parsing is forgiving: lines that do
not match the grammar are skipped and counted, duplicates (case-folded
surface) keep the first occurrence. align_spans then maps each surface
back onto the token events of the segment it came from, so confidence
scoring can read per-token signals.
"""

from __future__ import annotations

import re
from bisect import bisect_right
from dataclasses import dataclass, replace

from .providers import GenerationProvider, GenerationRequest, GenerationSegment
from .templates import PromptLibrary, default_prompts

_ENTITY_LINE = re.compile(
    r"^\s*ENTITY\s*:\s*(?P<surface>[^|]+?)\s*(?:\|\s*RELATION\s*:\s*(?P<relation>.+?)\s*)?$"
)
_VERDICT_LINE = re.compile(r"^\s*(?P<verdict>KEEP|DROP)\s*:\s*(?P<num>\d+)\s*$")


@dataclass
class CandidateEntity:
    """An extracted surface form, optionally aligned to a token span.

    span_start/span_end are a half-open token range into the segment the
    entity was extracted from; both are None until align_spans finds the
    surface. confidence stays None until a filter scores it.
    """

    surface: str
    relation: str | None = None
    span_start: int | None = None
    span_end: int | None = None
    confidence: float | None = None

    @property
    def has_span(self) -> bool:
        return self.span_start is not None and self.span_end is not None


def build_extraction_prompt(question: str, context: str = "", prompts: PromptLibrary | None = None) -> str:
    """Render the extraction/reasoning prompt for one hop.

    The context block carries whatever the caller wants in front of the
    question (memory, passages); it is omitted entirely when empty.
    """
    prompts = prompts or default_prompts()
    context_block = f"Context:\n{context}\n\n" if context else ""
    return prompts.extract.format(question=question, context_block=context_block)


def format_entity_line(entity: CandidateEntity) -> str:
    """Serialize an entity back into the line grammar parse understands."""
    if entity.relation:
        return f"ENTITY: {entity.surface} | RELATION: {entity.relation}"
    return f"ENTITY: {entity.surface}"


def parse_extraction_output(text: str) -> tuple[list[CandidateEntity], int]:
    """Pull candidate entities out of generated text.

    Returns (entities, skipped) where skipped counts non-blank lines that
    did not match the grammar. Blank lines are ignored silently.
    """
    entities: list[CandidateEntity] = []
    seen: set[str] = set()
    skipped = 0
    for line in text.splitlines():
        if not line.strip():
            continue
        match = _ENTITY_LINE.match(line)
        if match is None:
            skipped += 1
            continue
        surface = match.group("surface").strip()
        if not surface:
            skipped += 1
            continue
        folded = surface.casefold()
        if folded in seen:
            continue
        seen.add(folded)
        relation = match.group("relation")
        entities.append(CandidateEntity(surface=surface, relation=relation.strip() if relation else None))
    return entities, skipped


def _normalize_indexed(text: str) -> tuple[str, list[int]]:
    """Case-fold and collapse whitespace, keeping a map back to source indices.

    Runs of whitespace become one space (mapped to the run's first char);
    leading and trailing whitespace disappear. Case-folding may expand a
    character, so several normalized positions can map to one source index.
    """
    chars: list[str] = []
    source: list[int] = []
    pending: int | None = None
    for i, ch in enumerate(text):
        if ch.isspace():
            if chars and pending is None:
                pending = i
            continue
        if pending is not None:
            chars.append(" ")
            source.append(pending)
            pending = None
        for folded in ch.casefold():
            chars.append(folded)
            source.append(i)
    return "".join(chars), source


def _normalize(text: str) -> str:
    normalized, _ = _normalize_indexed(text)
    return normalized


def align_spans(entities: list[CandidateEntity], segment: GenerationSegment) -> list[CandidateEntity]:
    """Attach token spans for surfaces that occur in the segment text.

    Matching is case-insensitive and whitespace-normalized; each entity
    gets the half-open token span covering the first occurrence of its
    surface. Entities whose surface never occurs come back unchanged.
    """
    haystack, source = _normalize_indexed(segment.text)

    # cumulative end offset of each token's text within segment.text
    cumulative_ends: list[int] = []
    offset = 0
    for event in segment.events:
        offset += len(event.text)
        cumulative_ends.append(offset)

    aligned: list[CandidateEntity] = []
    for entity in entities:
        needle = _normalize(entity.surface)
        start = haystack.find(needle) if needle else -1
        if start < 0:
            aligned.append(entity)
            continue
        first_char = source[start]
        last_char = source[start + len(needle) - 1]
        span_start = bisect_right(cumulative_ends, first_char)
        span_end = bisect_right(cumulative_ends, last_char) + 1
        aligned.append(replace(entity, span_start=span_start, span_end=span_end))
    return aligned


def build_validation_prompt(
    question: str,
    reasoning: str,
    entities: list[CandidateEntity],
    prompts: PromptLibrary | None = None,
) -> str:
    prompts = prompts or default_prompts()
    numbered = "\n".join(
        f"{i}. {e.surface}" + (f" ({e.relation})" if e.relation else "")
        for i, e in enumerate(entities, start=1)
    )
    return prompts.validate.format(question=question, reasoning=reasoning, entities=numbered)


def cot_validate(
    entities: list[CandidateEntity],
    question: str,
    reasoning_segment: GenerationSegment,
    provider: GenerationProvider,
    prompts: PromptLibrary | None = None,
    max_tokens: int = 256,
) -> tuple[list[bool], int]:
    """Ask the model which candidates belong in the reasoning chain.

    Issues one validation call and parses KEEP/DROP verdict lines against
    the 1-based numbering of the prompt. Entities never mentioned default
    to keep; a later verdict for the same number overrides an earlier one.
    Returns (keep flags, count of out-of-range verdicts).
    """
    if not entities:
        return [], 0
    prompt = build_validation_prompt(question, reasoning_segment.text, entities, prompts)
    segment = provider.generate(GenerationRequest(prompt=prompt, max_tokens=max_tokens))
    keep = [True] * len(entities)
    warnings = 0
    for line in segment.text.splitlines():
        match = _VERDICT_LINE.match(line)
        if match is None:
            continue
        number = int(match.group("num"))
        if not 1 <= number <= len(entities):
            warnings += 1
            continue
        keep[number - 1] = match.group("verdict") == "KEEP"
    return keep, warnings
