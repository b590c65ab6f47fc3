"""Generation backends behind one contract.

A provider turns a GenerationRequest into a GenerationSegment whose token
events carry the signals the trigger needs. Two backends ship here: a
trace provider that replays recorded segments in call order (the workhorse
for tests and offline evaluation), and a client for the live inference
sidecar. RecordingProvider wraps any backend and captures its segments in
the trace format, so live sessions can be replayed later.

Trace files are newline-delimited JSON. Each record:

    {"step_key": "...", "text": "...", "finish_reason": "stop",
     "events": [{"index": 0, "text": "...", "entropy": 0.1, "max_attn": 0.2}]}

step_key is a label for humans and must be unique; replay is driven purely
by call order.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Protocol

import httpx

from .errors import (
    BackendUnreachableError,
    ConfigError,
    ProtocolError,
    TraceError,
    TraceExhaustedError,
)
from .signals import TokenEvent


class FinishReason(str, Enum):
    STOP = "stop"
    LENGTH = "length"
    TRACE_END = "trace_end"


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    max_tokens: int = 256
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ConfigError("max_tokens must be at least 1")


@dataclass
class GenerationSegment:
    """One generated stretch of text plus its per-token signal events."""

    text: str
    events: list[TokenEvent]
    finish_reason: FinishReason


class GenerationProvider(Protocol):
    def generate(self, request: GenerationRequest) -> GenerationSegment: ...


@dataclass
class TraceRecord:
    step_key: str
    segment: GenerationSegment


@dataclass
class TraceFile:
    records: list[TraceRecord] = field(default_factory=list)


def _require(obj: dict, key: str, line: int):
    if key not in obj:
        raise TraceError(f"missing field {key!r}", line=line)
    return obj[key]


def _segment_from_dict(obj: dict, line: int) -> GenerationSegment:
    text = _require(obj, "text", line)
    raw_reason = _require(obj, "finish_reason", line)
    try:
        reason = FinishReason(raw_reason)
    except ValueError:
        raise TraceError(f"unknown finish_reason {raw_reason!r}", line=line) from None

    events: list[TokenEvent] = []
    for pos, item in enumerate(_require(obj, "events", line)):
        if not isinstance(item, dict):
            raise TraceError(f"event {pos} is not an object", line=line)
        index = _require(item, "index", line)
        token_text = _require(item, "text", line)
        entropy = _require(item, "entropy", line)
        max_attn = _require(item, "max_attn", line)
        if index != pos:
            raise TraceError(f"event index {index} out of order (expected {pos})", line=line)
        if not isinstance(entropy, (int, float)) or entropy < 0:
            raise TraceError(f"event {pos} has invalid entropy {entropy!r}", line=line)
        if not isinstance(max_attn, (int, float)) or not 0 <= max_attn <= 1:
            raise TraceError(f"event {pos} has invalid max_attn {max_attn!r}", line=line)
        events.append(TokenEvent(index=index, text=token_text, entropy=float(entropy), max_attn=float(max_attn)))

    if "".join(e.text for e in events) != text:
        raise TraceError("event texts do not concatenate to the record text", line=line)
    return GenerationSegment(text=text, events=events, finish_reason=reason)


def load_trace(path: str | Path) -> TraceFile:
    """Parse and validate a newline-delimited trace file."""
    records: list[TraceRecord] = []
    seen_keys: set[str] = set()
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise TraceError(f"cannot read trace {path}: {exc.strerror}") from None
    with fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceError(f"invalid JSON ({exc.msg})", line=line_no) from None
            if not isinstance(obj, dict):
                raise TraceError("record is not an object", line=line_no)
            step_key = _require(obj, "step_key", line_no)
            if step_key in seen_keys:
                raise TraceError(f"duplicate step_key {step_key!r}", line=line_no)
            seen_keys.add(step_key)
            records.append(TraceRecord(step_key=step_key, segment=_segment_from_dict(obj, line_no)))
    return TraceFile(records=records)


def write_trace(trace: TraceFile, path: str | Path) -> None:
    """Serialize a trace so load_trace round-trips it exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in trace.records:
            seg = record.segment
            obj = {
                "step_key": record.step_key,
                "text": seg.text,
                "events": [
                    {"index": e.index, "text": e.text, "entropy": e.entropy, "max_attn": e.max_attn}
                    for e in seg.events
                ],
                "finish_reason": seg.finish_reason.value,
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


class TraceProvider:
    """Replays recorded segments in call order, ignoring prompt content.

    step_key never participates in lookup; it only labels records. A call
    past the last record raises TraceExhaustedError.
    """

    def __init__(self, trace: TraceFile):
        self._trace = trace
        self._cursor = 0

    @property
    def consumed(self) -> int:
        return self._cursor

    def generate(self, request: GenerationRequest) -> GenerationSegment:
        if self._cursor >= len(self._trace.records):
            raise TraceExhaustedError(
                f"trace exhausted after {len(self._trace.records)} records"
            )
        record = self._trace.records[self._cursor]
        self._cursor += 1
        return record.segment


class RecordingProvider:
    """Pass-through wrapper that captures every segment as a trace record."""

    def __init__(self, inner: GenerationProvider):
        self._inner = inner
        self.trace = TraceFile()

    def generate(self, request: GenerationRequest) -> GenerationSegment:
        segment = self._inner.generate(request)
        self.trace.records.append(
            TraceRecord(step_key=f"step-{len(self.trace.records):03d}", segment=segment)
        )
        return segment

    def save(self, path: str | Path) -> None:
        write_trace(self.trace, path)


def fold_attention(raw_events: list[dict]) -> list[float]:
    """Fold per-step attn_to_past maps into one max_attn per token.

    raw_events[i]["attn_to_past"] maps an earlier token index (as emitted
    by the sidecar) to the weight this step paid to it. The result for
    token j is the maximum weight any later step paid to j; tokens nobody
    looked back at get 0.0.
    """
    folded = [0.0] * len(raw_events)
    for pos, item in enumerate(raw_events):
        for key, weight in item.get("attn_to_past", {}).items():
            j = int(key)
            if not 0 <= j < pos:
                raise ProtocolError(f"event {pos} references non-past token {j}")
            if not 0.0 <= weight <= 1.0:
                raise ProtocolError(f"attention weight {weight!r} outside [0, 1]")
            if weight > folded[j]:
                folded[j] = weight
    return folded


_RETRYABLE_STATUSES = (429, 503)


class SidecarProvider:
    """HTTP client for the streaming inference sidecar.

    Busy/loading responses (429, 503) are retried with a short pause;
    anything else outside the wire contract raises ProtocolError.
    """

    def __init__(self, base_url: str, timeout: float = 60.0, retries: int = 5, retry_wait: float = 0.2):
        self.base_url = base_url.rstrip("/")
        self._retries = retries
        self._retry_wait = retry_wait
        self._client = httpx.Client(timeout=timeout)

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "SidecarProvider":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def generate(self, request: GenerationRequest) -> GenerationSegment:
        payload = {
            "prompt": request.prompt,
            "max_tokens": request.max_tokens,
            "stop": list(request.stop_sequences),
        }
        for attempt in range(self._retries + 1):
            try:
                with self._client.stream("POST", f"{self.base_url}/generate", json=payload) as response:
                    if response.status_code in _RETRYABLE_STATUSES:
                        response.read()
                    else:
                        return self._consume_stream(response)
            except httpx.HTTPError as exc:
                if attempt == self._retries:
                    raise BackendUnreachableError(f"sidecar unreachable: {exc}") from exc
            time.sleep(self._retry_wait)
        raise BackendUnreachableError(
            f"sidecar still busy after {self._retries + 1} attempts"
        )

    def _consume_stream(self, response: httpx.Response) -> GenerationSegment:
        if response.status_code != 200:
            response.read()
            raise ProtocolError(f"sidecar answered HTTP {response.status_code}: {response.text[:200]}")

        raw_events: list[dict] = []
        finish: str | None = None
        for line in response.iter_lines():
            if not line.strip():
                continue
            if finish is not None:
                raise ProtocolError("sidecar kept streaming after the terminal record")
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                raise ProtocolError(f"sidecar sent invalid JSON: {line[:200]!r}") from None
            if "index" in obj:
                if obj.get("index") != len(raw_events):
                    raise ProtocolError(f"sidecar event index {obj.get('index')!r} out of order")
                if not isinstance(obj.get("entropy"), (int, float)) or obj["entropy"] < 0:
                    raise ProtocolError(f"sidecar event entropy {obj.get('entropy')!r} invalid")
                raw_events.append(obj)
            elif "finish_reason" in obj:
                finish = obj["finish_reason"]
                if finish == "error":
                    raise ProtocolError(f"sidecar generation failed: {obj.get('message', '')}")
            else:
                raise ProtocolError(f"sidecar sent unrecognized record: {line[:200]!r}")

        if finish is None:
            raise ProtocolError("sidecar stream ended without a terminal record")
        try:
            reason = FinishReason(finish)
        except ValueError:
            raise ProtocolError(f"sidecar sent unknown finish_reason {finish!r}") from None

        folded = fold_attention(raw_events)
        events = [
            TokenEvent(index=i, text=item["text"], entropy=float(item["entropy"]), max_attn=folded[i])
            for i, item in enumerate(raw_events)
        ]
        return GenerationSegment(
            text="".join(e.text for e in events),
            events=events,
            finish_reason=reason,
        )
