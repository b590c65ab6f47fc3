from __future__ import annotations

import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hopqa import (
    ConfigError,
    CorpusError,
    Document,
    SnapshotError,
    bm25_score,
    build_index,
    corpus_digest,
    ingest_corpus,
    load_or_build,
    load_snapshot,
    save_snapshot,
    search,
    tokenize,
)

from support import write_corpus


# ---------------------------------------------------------------------------
# independent oracle: plain-dict BM25 with the same +1-in-log IDF
# ---------------------------------------------------------------------------


def oracle_scores(docs: list[str], query_terms: list[str], k1=1.2, b=0.75) -> list[float]:
    token_lists = [tokenize(d) for d in docs]
    lengths = [len(t) for t in token_lists]
    avg = sum(lengths) / len(lengths)
    n = len(docs)
    scores = []
    for tokens, length in zip(token_lists, lengths):
        total = 0.0
        for term in query_terms:
            tf = tokens.count(term)
            if tf == 0:
                continue
            df = sum(1 for other in token_lists if term in other)
            idf = math.log((n - df + 0.5) / (df + 0.5) + 1.0)
            total += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * length / avg))
        scores.append(total)
    return scores


# ---------------------------------------------------------------------------
# tokenize
# ---------------------------------------------------------------------------


def test_tokenize_casefolds_and_splits():
    assert tokenize("La Trémoille's father") == ["la", "trémoille", "s", "father"]


def test_tokenize_underscore_and_punctuation_split():
    assert tokenize("A-B_c9") == ["a", "b", "c9"]


def test_tokenize_empty():
    assert tokenize("") == []
    assert tokenize("!!! ---") == []


@given(st.lists(st.sampled_from(["la", "trémoille", "father", "1737", "x9"]), max_size=10))
def test_tokenize_idempotent_on_own_output(terms):
    assert tokenize(" ".join(terms)) == terms


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def test_ingest_builds_over_title_and_text(tmp_path):
    path = write_corpus(
        tmp_path / "c.jsonl",
        [{"doc_id": "d1", "title": "Paris", "text": "capital of France"}],
    )
    index = ingest_corpus(path)
    assert index.doc_count == 1
    assert index.doc_lengths == [4]  # paris capital of france
    assert "paris" in index.postings


def test_ingest_rejects_duplicate_doc_id(tmp_path):
    path = write_corpus(
        tmp_path / "c.jsonl",
        [
            {"doc_id": "d1", "title": "A", "text": "x"},
            {"doc_id": "d1", "title": "B", "text": "y"},
        ],
    )
    with pytest.raises(CorpusError) as err:
        ingest_corpus(path)
    assert "line 2" in str(err.value)
    assert "d1" in str(err.value)


def test_ingest_rejects_empty_text_with_line_number(tmp_path):
    path = write_corpus(
        tmp_path / "c.jsonl",
        [
            {"doc_id": "d1", "title": "A", "text": "x"},
            {"doc_id": "d2", "title": "B", "text": ""},
        ],
    )
    with pytest.raises(CorpusError) as err:
        ingest_corpus(path)
    assert "line 2" in str(err.value)


def test_ingest_rejects_malformed_json(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"doc_id": "d1", "title": "A", "text": "x"}\nnot json\n', encoding="utf-8")
    with pytest.raises(CorpusError) as err:
        ingest_corpus(path)
    assert "line 2" in str(err.value)


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------


def test_bm25_hand_computed_single_doc():
    # idf = ln(4/3), tf part = 1.375, product ~0.3956
    index = build_index([Document("d1", "", "a a b")])
    assert bm25_score(["a"], 0, index) == pytest.approx(0.3956, abs=1e-4)
    assert bm25_score(["a"], 0, index) == pytest.approx(0.39556284962119864, abs=1e-12)


def test_bm25_zero_for_absent_terms():
    index = build_index([Document("d1", "", "a a b")])
    assert bm25_score(["zzz"], 0, index) == 0.0


def test_bm25_repeated_query_terms_accumulate():
    index = build_index([Document("d1", "", "a a b")])
    single = bm25_score(["a"], 0, index)
    double = bm25_score(["a", "a"], 0, index)
    assert double == pytest.approx(2 * single, abs=1e-12)


def test_bm25_rejects_bad_ordinal():
    index = build_index([Document("d1", "", "a")])
    with pytest.raises(ConfigError):
        bm25_score(["a"], 1, index)


def test_search_rank_and_tiebreak():
    docs = [
        Document("b", "", "apple apple"),
        Document("a", "", "apple apple"),
        Document("c", "", "apple banana banana"),
    ]
    index = build_index(docs)
    results = search("apple", 3, index)
    assert [r.rank for r in results] == [1, 2, 3]
    # first two docs tie exactly (identical term stats): doc_id ascending
    assert [r.doc_id for r in results] == ["a", "b", "c"]
    assert results[0].score == results[1].score


def test_search_k_limits_results():
    docs = [Document(f"d{i}", "", "apple " + "pad " * i) for i in range(5)]
    index = build_index(docs)
    assert len(search("apple", 2, index)) == 2
    assert len(search("apple", 50, index)) == 5


def test_search_rejects_k_zero():
    index = build_index([Document("d1", "", "a")])
    with pytest.raises(ConfigError):
        search("a", 0, index)


def test_search_no_hits():
    index = build_index([Document("d1", "", "alpha beta")])
    assert search("zzz qqq", 3, index) == []


def test_search_counts_calls():
    index = build_index([Document("d1", "", "a")])
    assert index.search_calls == 0
    search("a", 1, index)
    search("b", 1, index)
    assert index.search_calls == 2


def test_search_matches_bruteforce_oracle_randomized():
    rng = random.Random(11)
    vocabulary = [f"w{i}" for i in range(30)]
    docs = []
    texts = []
    for i in range(100):
        words = [rng.choice(vocabulary) for _ in range(rng.randint(1, 40))]
        texts.append(" ".join(words))
        docs.append(Document(f"doc{i:03d}", "", texts[-1]))
    index = build_index(docs)

    for _ in range(200):
        query_terms = [rng.choice(vocabulary) for _ in range(rng.randint(1, 5))]
        expected = oracle_scores(texts, query_terms)
        ranked = sorted(
            (
                (score, doc.doc_id)
                for score, doc in zip(expected, docs)
                if score > 0.0
            ),
            key=lambda pair: (-pair[0], pair[1]),
        )[:10]
        got = search(" ".join(query_terms), 10, index)
        assert [g.doc_id for g in got] == [doc_id for _, doc_id in ranked]
        assert got == [] or all(
            g.score == pytest.approx(score, abs=1e-12) for g, (score, _) in zip(got, ranked)
        )
        # spot-check bm25_score against the oracle for one random doc
        probe = rng.randrange(len(docs))
        assert bm25_score(query_terms, probe, index) == pytest.approx(expected[probe], abs=1e-12)


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------


def test_snapshot_roundtrip(tmp_path, tiny_corpus):
    index = ingest_corpus(tiny_corpus)
    digest = corpus_digest(tiny_corpus)
    snap = tmp_path / "index.snap"
    save_snapshot(index, snap, digest)
    loaded = load_snapshot(snap, digest)
    assert loaded.postings == index.postings
    assert loaded.doc_lengths == index.doc_lengths
    assert loaded.documents == index.documents
    assert search("beta", 2, loaded) == search("beta", 2, index)


def test_snapshot_rejects_corpus_change(tmp_path, tiny_corpus):
    index = ingest_corpus(tiny_corpus)
    snap = tmp_path / "index.snap"
    save_snapshot(index, snap, corpus_digest(tiny_corpus))
    with pytest.raises(SnapshotError):
        load_snapshot(snap, b"\x00" * 32)


def test_snapshot_rejects_wrong_version(tmp_path, tiny_corpus):
    index = ingest_corpus(tiny_corpus)
    digest = corpus_digest(tiny_corpus)
    snap = tmp_path / "index.snap"
    save_snapshot(index, snap, digest)
    blob = bytearray(snap.read_bytes())
    blob[4] = 99  # version byte
    snap.write_bytes(bytes(blob))
    with pytest.raises(SnapshotError):
        load_snapshot(snap, digest)


def test_load_or_build_rebuilds_on_stale_snapshot(tmp_path, tiny_corpus):
    snap = tmp_path / "index.snap"
    first = load_or_build(tiny_corpus, snap)
    assert snap.is_file()
    # corpus changes: stale snapshot must be rebuilt, not served
    extra = tiny_corpus.read_text() + '{"doc_id": "d9", "title": "New", "text": "zeta"}\n'
    tiny_corpus.write_text(extra)
    second = load_or_build(tiny_corpus, snap)
    assert second.doc_count == first.doc_count + 1
    # and the refreshed snapshot now loads cleanly
    assert load_snapshot(snap, corpus_digest(tiny_corpus)).doc_count == second.doc_count
