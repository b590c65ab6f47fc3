"""Shared builders for the test suite.

Kept out of conftest.py so tests can import them by module name without
colliding with any other conftest on sys.path.
"""

from __future__ import annotations

import json
from pathlib import Path

from hopqa import FinishReason, GenerationSegment, TokenEvent, TraceFile, TraceProvider, TraceRecord


def make_events(signals, texts=None):
    """Build contiguous TokenEvents from (entropy, max_attn) pairs."""
    if texts is None:
        texts = [f"tok{i} " for i in range(len(signals))]
    return [
        TokenEvent(index=i, text=t, entropy=h, max_attn=a)
        for i, ((h, a), t) in enumerate(zip(signals, texts))
    ]


def make_segment(signals, texts=None, finish=FinishReason.STOP):
    events = make_events(signals, texts)
    return GenerationSegment(text="".join(e.text for e in events), events=events, finish_reason=finish)


def segment_from_text(text, signals=None, chunks=None):
    """Split text into token events; default one low-signal token per line."""
    if chunks is None:
        lines = text.splitlines(keepends=True)
        chunks = lines if lines else [text]
    if signals is None:
        signals = [(0.1, 0.1)] * len(chunks)
    events = [
        TokenEvent(index=i, text=c, entropy=h, max_attn=a)
        for i, (c, (h, a)) in enumerate(zip(chunks, signals))
    ]
    return GenerationSegment(text=text, events=events, finish_reason=FinishReason.STOP)


def trace_provider(*segments):
    records = [TraceRecord(step_key=f"s{i}", segment=seg) for i, seg in enumerate(segments)]
    return TraceProvider(TraceFile(records=records))


def write_trace_dict(path: Path, records: list[dict]) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    return path


def write_corpus(path: Path, docs: list[dict]) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc, ensure_ascii=False) + "\n")
    return path
