from __future__ import annotations

import json

import pytest
from hypothesis import given, strategies as st

from hopqa import (
    AnswerType,
    DEFAULT_GAMMA_DELTA_GRID,
    FilterConfig,
    FilterMode,
    PipelineConfig,
    QAExample,
    TriggerConfig,
    TriggerMode,
    aggregate,
    convert_2wiki,
    convert_hotpot,
    convert_iirc,
    convert_strategyqa,
    exact_match,
    load_dataset,
    normalize_answer,
    parse_provider_spec,
    run_benchmark,
    score_example,
    sweep_gamma_delta,
    sweep_trigger_modes,
    token_f1,
    write_dataset,
    write_trace,
    yesno_accuracy,
)
from hopqa.errors import ConfigError, DatasetError, InvalidExampleError
from hopqa.providers import TraceFile, TraceRecord

from support import segment_from_text, write_corpus


# ---------------------------------------------------------------------------
# normalization and metrics
# ---------------------------------------------------------------------------


def test_normalize_strips_case_punctuation_articles():
    assert normalize_answer("The Brown Act.") == "brown act"
    assert normalize_answer("  YES ") == "yes"
    assert normalize_answer("a an the") == ""


def test_normalize_keeps_article_substrings():
    # only whole words are articles
    assert normalize_answer("theater anthem") == "theater anthem"


def test_exact_match_cases():
    assert exact_match("Brown Act", ["the Brown Act"]) == 1
    assert exact_match("Paris", ["London"]) == 0
    assert exact_match("", [""]) == 1
    assert exact_match("paris", ["London", "PARIS!"]) == 1


def test_exact_match_requires_golds():
    with pytest.raises(InvalidExampleError):
        exact_match("x", [])


def test_f1_hand_value():
    # prediction has 3 tokens, 2 shared: P=2/3, R=1, F1=0.8
    assert token_f1("jean bretagne charles", ["bretagne charles"]) == pytest.approx(0.8, abs=1e-12)


def test_f1_boundaries():
    assert token_f1("same thing", ["same thing"]) == 1.0
    assert token_f1("alpha", ["omega"]) == 0.0
    assert token_f1("", [""]) == 1.0
    assert token_f1("", ["word"]) == 0.0
    assert token_f1("word", [""]) == 0.0


def test_f1_multiset_counts_duplicates():
    # "b b" vs "b": one shared b, P=1/2, R=1 -> 2/3
    assert token_f1("b b", ["b"]) == pytest.approx(2 / 3)


def test_f1_takes_best_gold():
    assert token_f1("paris", ["london", "paris"]) == 1.0


def test_yesno_cases():
    assert yesno_accuracy("yes, because...", ["yes"]) == 1
    assert yesno_accuracy("the answer is no", ["yes"]) == 0
    assert yesno_accuracy("unclear", ["no"]) == 0
    assert yesno_accuracy("No way", ["no"]) == 1


def test_yesno_first_token_wins():
    assert yesno_accuracy("no, wait, yes", ["yes"]) == 0


def test_yesno_rejects_non_boolean_gold():
    with pytest.raises(InvalidExampleError):
        yesno_accuracy("yes", ["maybe"])
    with pytest.raises(InvalidExampleError):
        yesno_accuracy("yes", [])


@given(st.text(max_size=40), st.text(max_size=40))
def test_f1_symmetric_single_gold(a, b):
    assert token_f1(a, [b]) == pytest.approx(token_f1(b, [a]))


@given(st.lists(st.sampled_from(["paris", "brown", "act", "the", "a", "1922"]), min_size=1, max_size=6))
def test_em_implies_f1(words):
    text = " ".join(words)
    if exact_match(text, [text.upper()]) == 1:
        assert token_f1(text, [text.upper()]) == 1.0


@given(st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789 ", max_size=40))
def test_metrics_case_and_article_invariant(text):
    decorated = "The " + text.upper()
    assert exact_match(decorated, [text]) == exact_match(text, [text])
    assert token_f1(decorated, [text]) == pytest.approx(token_f1(text, [text]))


# ---------------------------------------------------------------------------
# dataset loading and converters
# ---------------------------------------------------------------------------


def write_lines(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    return path


def test_dataset_round_trip(tmp_path):
    examples = [
        QAExample("q1", "who?", ("Paris",), AnswerType.SPAN),
        QAExample("q2", "is it?", ("yes",), AnswerType.YESNO),
    ]
    path = tmp_path / "data.jsonl"
    write_dataset(examples, path)
    assert load_dataset(path) == examples


def test_dataset_bad_json_line_number(tmp_path):
    path = tmp_path / "data.jsonl"
    path.write_text('{"qid": "q1", "question": "x", "answers": ["a"], "answer_type": "span"}\n{oops\n')
    with pytest.raises(DatasetError, match="line 2"):
        load_dataset(path)


def test_dataset_duplicate_qid(tmp_path):
    row = {"qid": "q1", "question": "x", "answers": ["a"], "answer_type": "span"}
    path = write_lines(tmp_path / "d.jsonl", [row, row])
    with pytest.raises(DatasetError, match="duplicate qid"):
        load_dataset(path)


def test_dataset_empty_answers(tmp_path):
    path = write_lines(tmp_path / "d.jsonl", [{"qid": "q", "question": "x", "answers": [], "answer_type": "span"}])
    with pytest.raises(DatasetError, match="no gold answers"):
        load_dataset(path)


def test_dataset_yesno_gold_validation(tmp_path):
    path = write_lines(
        tmp_path / "d.jsonl", [{"qid": "q", "question": "x", "answers": ["maybe"], "answer_type": "yesno"}]
    )
    with pytest.raises(DatasetError, match="maybe"):
        load_dataset(path)


def test_dataset_unknown_answer_type(tmp_path):
    path = write_lines(
        tmp_path / "d.jsonl", [{"qid": "q", "question": "x", "answers": ["a"], "answer_type": "essay"}]
    )
    with pytest.raises(DatasetError, match="line 1"):
        load_dataset(path)


def test_convert_hotpot(tmp_path):
    path = tmp_path / "hotpot.json"
    path.write_text(json.dumps([{"_id": "h1", "question": "who?", "answer": "Paris", "level": "hard"}]))
    examples = convert_hotpot(path)
    assert examples == [QAExample("h1", "who?", ("Paris",), AnswerType.SPAN)]


def test_convert_2wiki(tmp_path):
    path = tmp_path / "wiki.json"
    path.write_text(json.dumps([{"_id": 7, "question": "when?", "answer": "1922"}]))
    examples = convert_2wiki(path)
    assert examples[0].qid == "7"
    assert examples[0].gold_answers == ("1922",)


def test_convert_strategyqa(tmp_path):
    path = tmp_path / "sqa.json"
    path.write_text(
        json.dumps(
            [
                {"qid": "s1", "question": "is it?", "answer": True},
                {"qid": "s2", "question": "really?", "answer": False},
            ]
        )
    )
    examples = convert_strategyqa(path)
    assert [e.gold_answers for e in examples] == [("yes",), ("no",)]
    assert all(e.answer_type is AnswerType.YESNO for e in examples)


def test_convert_iirc(tmp_path):
    path = tmp_path / "iirc.json"
    path.write_text(
        json.dumps(
            [
                {
                    "questions": [
                        {
                            "qid": "i1",
                            "question": "where?",
                            "answer": {"type": "span", "answer_spans": [{"text": " Paris "}, {"text": "France"}]},
                        },
                        {"qid": "i2", "question": "how many?", "answer": {"type": "value", "answer_value": 3}},
                        {"qid": "i3", "question": "did it?", "answer": {"type": "binary", "answer_value": "Yes"}},
                        {"qid": "i4", "question": "unknowable?", "answer": {"type": "none"}},
                    ]
                }
            ]
        )
    )
    examples, skipped = convert_iirc(path)
    assert skipped == 1
    by_qid = {e.qid: e for e in examples}
    assert by_qid["i1"].gold_answers == ("Paris France",)
    assert by_qid["i2"].gold_answers == ("3",)
    assert by_qid["i3"].answer_type is AnswerType.YESNO
    assert by_qid["i3"].gold_answers == ("yes",)
    assert "i4" not in by_qid


def test_convert_rejects_non_array(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"not": "a list"}))
    with pytest.raises(DatasetError, match="array"):
        convert_hotpot(path)


def test_convert_malformed_record(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps([{"question": "missing id"}]))
    with pytest.raises(DatasetError, match="record 0"):
        convert_hotpot(path)


# ---------------------------------------------------------------------------
# benchmark runs
# ---------------------------------------------------------------------------


def test_parse_provider_spec():
    assert parse_provider_spec("trace:/tmp/traces") == ("trace", "/tmp/traces")
    assert parse_provider_spec("sidecar:http://localhost:8000") == ("sidecar", "http://localhost:8000")
    for bad in ("trace:", "sidecar:", "oracle:x", "trace"):
        with pytest.raises(ConfigError):
            parse_provider_spec(bad)


def test_aggregate_means():
    results = [
        score_example(
            QAExample("q1", "?", ("paris",), AnswerType.SPAN),
            _trace_stub("Paris", retrievals=2),
        ),
        score_example(
            QAExample("q2", "?", ("london",), AnswerType.SPAN),
            _trace_stub("Rome", retrievals=4),
        ),
    ]
    agg = aggregate(results, failed=1)
    assert agg.evaluated == 2
    assert agg.failed == 1
    assert agg.em_pct == 50.0
    assert agg.mean_retrievals == 3.0
    assert agg.acc_pct is None  # no yes/no examples


def test_aggregate_empty():
    agg = aggregate([], failed=2)
    assert agg.evaluated == 0 and agg.failed == 2
    assert agg.em_pct == 0.0 and agg.f1_pct == 0.0
    assert agg.acc_pct is None and agg.mean_retrievals == 0.0


def _trace_stub(answer, retrievals=0):
    from hopqa import HopTrace, MemoryStore, TerminatedBy

    return HopTrace(
        question="?",
        hops=[],
        final_answer=answer,
        total_retrievals=retrievals,
        terminated_by=TerminatedBy.NO_TRIGGER,
        memory=MemoryStore().records(),
    )


def _quiet(text):
    return segment_from_text(text, signals=[(0.1, 0.1)])


def _spiky(text):
    chunks = text.splitlines(keepends=True)
    signals = [(1.5, 0.9)] + [(0.1, 0.1)] * (len(chunks) - 1)
    return segment_from_text(text, chunks=chunks, signals=signals)


def _write_question_trace(directory, qid, segments):
    records = [TraceRecord(step_key=f"s{i}", segment=seg) for i, seg in enumerate(segments)]
    write_trace(TraceFile(records=records), directory / f"{qid}.jsonl")


@pytest.fixture
def bench(tmp_path):
    """Three-question fixture: one correct span, one wrong span, one yes/no."""
    corpus = write_corpus(
        tmp_path / "corpus.jsonl",
        [
            {"doc_id": "d1", "title": "Paris", "text": "paris is the capital of france"},
            {"doc_id": "d2", "title": "Berlin", "text": "berlin is the capital of germany"},
            {"doc_id": "d3", "title": "Filler", "text": "nothing about capitals here"},
        ],
    )
    dataset = tmp_path / "dataset.jsonl"
    write_dataset(
        [
            QAExample("q1", "capital of france?", ("Paris",), AnswerType.SPAN),
            QAExample("q2", "capital of germany?", ("Berlin",), AnswerType.SPAN),
            QAExample("q3", "is paris in france?", ("yes",), AnswerType.YESNO),
        ],
        dataset,
    )
    traces = tmp_path / "traces"
    traces.mkdir()
    _write_question_trace(traces, "q1", [_quiet("Answer: Paris")])
    _write_question_trace(
        traces,
        "q2",
        [
            _spiky("Checking capitals.\nENTITY: Berlin | RELATION: capital of germany\n"),
            _quiet("Answer: London"),  # wrong on purpose
        ],
    )
    _write_question_trace(traces, "q3", [_quiet("Answer: yes, it is")])
    return {"corpus": corpus, "dataset": dataset, "traces": traces, "tmp": tmp_path}


def bench_config():
    return PipelineConfig(
        trigger=TriggerConfig(mode=TriggerMode.FIXED, fixed_threshold=0.6),
        entity_filter=FilterConfig(mode=FilterMode.CONF),
        retrieval_k=2,
        max_hops=4,
    )


def test_run_benchmark_scores_and_accounting(bench):
    report = run_benchmark(bench["dataset"], bench["corpus"], bench_config(), f"trace:{bench['traces']}")
    assert [r.qid for r in report.results] == ["q1", "q2", "q3"]
    by_qid = {r.qid: r for r in report.results}
    assert by_qid["q1"].em == 1 and by_qid["q1"].f1 == 1.0 and by_qid["q1"].retrievals == 0
    assert by_qid["q2"].em == 0 and by_qid["q2"].retrievals == 1
    # "yes, it is" satisfies the first-word accuracy rule but not exact match
    assert by_qid["q3"].acc == 1
    assert by_qid["q3"].em == 0
    agg = report.aggregates
    assert agg.evaluated == 3 and agg.failed == 0
    assert agg.em_pct == pytest.approx(100.0 / 3)
    assert agg.acc_pct == 100.0
    assert agg.mean_retrievals == pytest.approx(1 / 3)


def test_run_benchmark_records_failures(bench):
    # a fourth example with no trace file fails without aborting the run
    examples = load_dataset(bench["dataset"])
    examples.append(QAExample("q9", "orphan?", ("x",), AnswerType.SPAN))
    write_dataset(examples, bench["dataset"])
    report = run_benchmark(bench["dataset"], bench["corpus"], bench_config(), f"trace:{bench['traces']}")
    assert report.aggregates.evaluated == 3
    assert report.aggregates.failed == 1
    assert [f.qid for f in report.failures] == ["q9"]
    assert "q9" in report.failures[0].error


def test_run_benchmark_writes_report_files(bench):
    out = bench["tmp"] / "out"
    report = run_benchmark(
        bench["dataset"], bench["corpus"], bench_config(), f"trace:{bench['traces']}", out_dir=out
    )
    records = [json.loads(line) for line in (out / "records.jsonl").read_text().splitlines()]
    assert [r["qid"] for r in records] == ["q1", "q2", "q3"]
    traces = [json.loads(line) for line in (out / "traces.jsonl").read_text().splitlines()]
    assert len(traces) == 3 and all("hops" in t for t in traces)
    assert (out / "failures.jsonl").read_text() == ""
    on_disk = json.loads((out / "report.json").read_text())
    assert on_disk["aggregates"] == report.aggregates.to_dict()
    assert on_disk["config"]["retrieval_k"] == 2


def test_aggregates_match_record_stream_recomputation(bench):
    out = bench["tmp"] / "out"
    report = run_benchmark(
        bench["dataset"], bench["corpus"], bench_config(), f"trace:{bench['traces']}", out_dir=out
    )
    records = [json.loads(line) for line in (out / "records.jsonl").read_text().splitlines()]
    n = len(records)
    assert report.aggregates.em_pct == pytest.approx(100.0 * sum(r["em"] for r in records) / n)
    assert report.aggregates.f1_pct == pytest.approx(100.0 * sum(r["f1"] for r in records) / n)
    assert report.aggregates.mean_retrievals == pytest.approx(sum(r["retrievals"] for r in records) / n)


def test_run_benchmark_deterministic(bench):
    kwargs = (bench["dataset"], bench["corpus"], bench_config(), f"trace:{bench['traces']}")
    first = run_benchmark(*kwargs)
    second = run_benchmark(*kwargs, workers=1)
    assert [r.to_dict() for r in first.results] == [r.to_dict() for r in second.results]
    assert first.aggregates.to_dict() == second.aggregates.to_dict()
    assert [t.to_json() for _, t in first.traces] == [t.to_json() for _, t in second.traces]


def test_sweep_gamma_delta_rows(bench):
    rows = sweep_gamma_delta(
        bench["dataset"], bench["corpus"], bench_config(), f"trace:{bench['traces']}"
    )
    assert [(row["gamma"], row["delta"]) for row in rows] == list(DEFAULT_GAMMA_DELTA_GRID)
    for row in rows:
        assert set(row) == {"gamma", "delta", "em", "f1", "ret", "evaluated", "failed"}
        assert row["evaluated"] == 3 and row["failed"] == 0
    # confidence weights do not affect trigger decisions, so #Ret is stable
    assert len({row["ret"] for row in rows}) == 1


def test_sweep_trigger_modes_rows(bench):
    rows = sweep_trigger_modes(
        bench["dataset"], bench["corpus"], bench_config(), f"trace:{bench['traces']}"
    )
    assert [row["trigger"] for row in rows] == ["fixed", "dynamic"]
    for row in rows:
        assert row["evaluated"] == 3
