"""Okapi BM25 over an in-memory inverted index.

Tokenization is deliberately plain: case-fold, split on anything that is
not a letter or digit, keep everything else (no stemming, no stopwords).
Documents index title and body together. IDF uses the +1-inside-the-log
variant so scores never go negative:

    idf(t) = ln((N - df + 0.5) / (df + 0.5) + 1)

Snapshots serialize a built index with a format version byte and the
corpus content hash, so a stale or foreign snapshot is refused instead of
silently serving the wrong corpus.
"""

from __future__ import annotations

import hashlib
import json
import math
import pickle
import re
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, CorpusError, SnapshotError

_TERM = re.compile(r"[^\W_]+")

SNAPSHOT_MAGIC = b"HQIX"
SNAPSHOT_VERSION = 1

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75


def tokenize(text: str) -> list[str]:
    """Case-folded alphanumeric terms, in order; underscores split too."""
    return _TERM.findall(text.casefold())


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    text: str


@dataclass(frozen=True)
class ScoredDoc:
    doc_id: str
    score: float
    rank: int


@dataclass
class InvertedIndex:
    documents: list[Document]
    postings: dict[str, list[tuple[int, int]]]  # term -> [(ordinal, tf)], ordinal-sorted
    doc_lengths: list[int]
    avg_doc_length: float
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    search_calls: int = 0  # diagnostic counter, approximate under concurrent use
    _ordinals: dict[str, int] = field(default_factory=dict, repr=False)

    @property
    def doc_count(self) -> int:
        return len(self.documents)

    def ordinal(self, doc_id: str) -> int:
        if not self._ordinals:
            self._ordinals.update({d.doc_id: i for i, d in enumerate(self.documents)})
        return self._ordinals[doc_id]

    def document(self, doc_id: str) -> Document:
        return self.documents[self.ordinal(doc_id)]


def build_index(documents: list[Document], k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> InvertedIndex:
    postings: dict[str, list[tuple[int, int]]] = {}
    doc_lengths: list[int] = []
    for ordinal, doc in enumerate(documents):
        terms = tokenize(doc.title + " " + doc.text)
        doc_lengths.append(len(terms))
        counts: dict[str, int] = {}
        for term in terms:
            counts[term] = counts.get(term, 0) + 1
        for term, tf in counts.items():
            postings.setdefault(term, []).append((ordinal, tf))
    avg = sum(doc_lengths) / len(doc_lengths) if doc_lengths else 0.0
    return InvertedIndex(
        documents=list(documents),
        postings=postings,
        doc_lengths=doc_lengths,
        avg_doc_length=avg,
        k1=k1,
        b=b,
    )


def ingest_corpus(path: str | Path, k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> InvertedIndex:
    """Build an index from a newline-delimited corpus of doc_id/title/text."""
    documents: list[Document] = []
    seen: dict[str, int] = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc.strerror}") from None
    with fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {line_no}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"line {line_no}: record is not an object")
            for key in ("doc_id", "title", "text"):
                if key not in obj or not isinstance(obj[key], str):
                    raise CorpusError(f"line {line_no}: missing or non-string field {key!r}")
            if not obj["text"]:
                raise CorpusError(f"line {line_no}: empty text for doc_id {obj['doc_id']!r}")
            if obj["doc_id"] in seen:
                raise CorpusError(
                    f"line {line_no}: duplicate doc_id {obj['doc_id']!r} (first seen on line {seen[obj['doc_id']]})"
                )
            seen[obj["doc_id"]] = line_no
            documents.append(Document(doc_id=obj["doc_id"], title=obj["title"], text=obj["text"]))
    return build_index(documents, k1=k1, b=b)


def _term_weight(tf: int, df: int, doc_length: int, index: InvertedIndex) -> float:
    idf = math.log((index.doc_count - df + 0.5) / (df + 0.5) + 1.0)
    norm = tf + index.k1 * (1.0 - index.b + index.b * doc_length / index.avg_doc_length)
    return idf * tf * (index.k1 + 1.0) / norm


def bm25_score(query_terms: list[str], ordinal: int, index: InvertedIndex) -> float:
    """Sum of per-term BM25 contributions for one document.

    Repeated query terms contribute once per repetition, matching the
    plain Okapi sum over the query term list.
    """
    if not 0 <= ordinal < index.doc_count:
        raise ConfigError(f"ordinal {ordinal} outside corpus of {index.doc_count} documents")
    doc_length = index.doc_lengths[ordinal]
    score = 0.0
    for term in query_terms:
        plist = index.postings.get(term)
        if not plist:
            continue
        at = bisect_left(plist, (ordinal,))
        if at < len(plist) and plist[at][0] == ordinal:
            score += _term_weight(plist[at][1], len(plist), doc_length, index)
    return score


def search(query: str, k: int, index: InvertedIndex) -> list[ScoredDoc]:
    """Top-k documents for a free-text query.

    Candidates are the union of posting lists for the query's terms;
    ordering is score descending with doc_id ascending breaking ties.
    """
    if k < 1:
        raise ConfigError("search needs k >= 1")
    index.search_calls += 1
    accumulator: dict[int, float] = {}
    for term in tokenize(query):
        for ordinal, tf in index.postings.get(term, ()):
            weight = _term_weight(tf, len(index.postings[term]), index.doc_lengths[ordinal], index)
            accumulator[ordinal] = accumulator.get(ordinal, 0.0) + weight
    ranked = sorted(
        accumulator.items(), key=lambda item: (-item[1], index.documents[item[0]].doc_id)
    )[:k]
    return [
        ScoredDoc(doc_id=index.documents[ordinal].doc_id, score=score, rank=rank)
        for rank, (ordinal, score) in enumerate(ranked, start=1)
    ]


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------


def corpus_digest(path: str | Path) -> bytes:
    try:
        return hashlib.sha256(Path(path).read_bytes()).digest()
    except OSError as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc.strerror}") from None


def save_snapshot(index: InvertedIndex, path: str | Path, digest: bytes) -> None:
    payload = {
        "documents": index.documents,
        "postings": index.postings,
        "doc_lengths": index.doc_lengths,
        "avg_doc_length": index.avg_doc_length,
        "k1": index.k1,
        "b": index.b,
    }
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(bytes([SNAPSHOT_VERSION]))
        fh.write(digest)
        fh.write(pickle.dumps(payload))


def load_snapshot(path: str | Path, expected_digest: bytes) -> InvertedIndex:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise SnapshotError(f"cannot read snapshot {path}: {exc.strerror}") from None
    if blob[: len(SNAPSHOT_MAGIC)] != SNAPSHOT_MAGIC:
        raise SnapshotError(f"{path}: not an index snapshot")
    offset = len(SNAPSHOT_MAGIC)
    version = blob[offset]
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"{path}: snapshot version {version} unsupported (expected {SNAPSHOT_VERSION})")
    offset += 1
    stored_digest = blob[offset : offset + 32]
    if stored_digest != expected_digest:
        raise SnapshotError(f"{path}: snapshot was built from a different corpus")
    payload = pickle.loads(blob[offset + 32 :])
    return InvertedIndex(
        documents=payload["documents"],
        postings=payload["postings"],
        doc_lengths=payload["doc_lengths"],
        avg_doc_length=payload["avg_doc_length"],
        k1=payload["k1"],
        b=payload["b"],
    )


def load_or_build(
    corpus_path: str | Path,
    snapshot_path: str | Path | None = None,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> InvertedIndex:
    """Use a valid snapshot when available, otherwise ingest and refresh it."""
    digest = corpus_digest(corpus_path)
    if snapshot_path is not None and Path(snapshot_path).is_file():
        try:
            return load_snapshot(snapshot_path, digest)
        except SnapshotError:
            pass  # stale or foreign snapshot: rebuild below
    index = ingest_corpus(corpus_path, k1=k1, b=b)
    if snapshot_path is not None:
        save_snapshot(index, snapshot_path, digest)
    return index
