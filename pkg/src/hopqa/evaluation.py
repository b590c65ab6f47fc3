"""Answer metrics, dataset plumbing, and the benchmark/sweep drivers.

Predictions and golds are compared after a shared normalization:
lowercase, strip punctuation, drop the articles a/an/the, collapse
whitespace. Exact match accepts any gold; token F1 takes the best gold
under whitespace-token multiset overlap; yes/no accuracy reads the first
whole-word yes or no out of the prediction.

The unified dataset format is newline-delimited JSON:

    {"qid": "...", "question": "...", "answers": ["..."], "answer_type": "span"}

Converters from common benchmark distribution formats produce that shape.
"""

from __future__ import annotations

import json
import string
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .errors import ConfigError, DatasetError, EngineError, InvalidExampleError, ProviderError
from .orchestrator import HopTrace, PipelineConfig, run_question
from .providers import SidecarProvider, TraceProvider, load_trace
from .retriever import load_or_build
from .signals import TriggerMode
from .templates import PromptLibrary
from dataclasses import replace as _replace


class AnswerType(str, Enum):
    SPAN = "span"
    YESNO = "yesno"


@dataclass(frozen=True)
class QAExample:
    qid: str
    question: str
    gold_answers: tuple[str, ...]
    answer_type: AnswerType


_PUNCTUATION = set(string.punctuation)
_ARTICLES = {"a", "an", "the"}


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation, drop articles, collapse whitespace."""
    lowered = text.lower()
    stripped = "".join(ch for ch in lowered if ch not in _PUNCTUATION)
    words = [w for w in stripped.split() if w not in _ARTICLES]
    return " ".join(words)


def exact_match(prediction: str, golds: tuple[str, ...] | list[str]) -> int:
    """1 iff the normalized prediction equals any normalized gold."""
    if not golds:
        raise InvalidExampleError("exact_match needs at least one gold answer")
    normalized = normalize_answer(prediction)
    return int(any(normalized == normalize_answer(g) for g in golds))


def _f1_single(prediction_tokens: list[str], gold_tokens: list[str]) -> float:
    if not prediction_tokens and not gold_tokens:
        return 1.0
    if not prediction_tokens or not gold_tokens:
        return 0.0
    common = sum((Counter(prediction_tokens) & Counter(gold_tokens)).values())
    if common == 0:
        return 0.0
    precision = common / len(prediction_tokens)
    recall = common / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def token_f1(prediction: str, golds: tuple[str, ...] | list[str]) -> float:
    """Best token-overlap F1 against any gold."""
    if not golds:
        raise InvalidExampleError("token_f1 needs at least one gold answer")
    prediction_tokens = normalize_answer(prediction).split()
    return max(_f1_single(prediction_tokens, normalize_answer(g).split()) for g in golds)


def yesno_accuracy(prediction: str, golds: tuple[str, ...] | list[str]) -> int:
    """1 iff the first whole-word yes/no in the prediction matches a gold."""
    if not golds:
        raise InvalidExampleError("yesno_accuracy needs at least one gold answer")
    gold_set = {normalize_answer(g) for g in golds}
    if not gold_set <= {"yes", "no"}:
        raise InvalidExampleError(f"yes/no golds must normalize to yes or no, got {sorted(gold_set)}")
    for word in normalize_answer(prediction).split():
        if word in ("yes", "no"):
            return int(word in gold_set)
    return 0


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def load_dataset(path: str | Path) -> list[QAExample]:
    examples: list[QAExample] = []
    seen: set[str] = set()
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc.strerror}") from None
    with fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {line_no}: invalid JSON ({exc.msg})") from None
            try:
                example = QAExample(
                    qid=obj["qid"],
                    question=obj["question"],
                    gold_answers=tuple(obj["answers"]),
                    answer_type=AnswerType(obj["answer_type"]),
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise DatasetError(f"line {line_no}: malformed example ({exc})") from None
            if not example.gold_answers:
                raise DatasetError(f"line {line_no}: example {example.qid!r} has no gold answers")
            if example.qid in seen:
                raise DatasetError(f"line {line_no}: duplicate qid {example.qid!r}")
            if example.answer_type is AnswerType.YESNO:
                bad = {normalize_answer(g) for g in example.gold_answers} - {"yes", "no"}
                if bad:
                    raise DatasetError(
                        f"line {line_no}: yes/no example {example.qid!r} has golds {sorted(bad)}"
                    )
            seen.add(example.qid)
            examples.append(example)
    return examples


def write_dataset(examples: list[QAExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {
                        "qid": ex.qid,
                        "question": ex.question,
                        "answers": list(ex.gold_answers),
                        "answer_type": ex.answer_type.value,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def _load_json_array(path: str | Path, label: str) -> list:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise DatasetError(f"{label}: cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{label}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, list):
        raise DatasetError(f"{label}: expected a top-level JSON array")
    return data


def convert_hotpot(path: str | Path) -> list[QAExample]:
    """HotpotQA distribution JSON (_id/question/answer) to unified examples."""
    examples = []
    for i, item in enumerate(_load_json_array(path, "hotpot")):
        try:
            examples.append(
                QAExample(
                    qid=str(item["_id"]),
                    question=item["question"],
                    gold_answers=(item["answer"],),
                    answer_type=AnswerType.SPAN,
                )
            )
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"hotpot: record {i} malformed ({exc})") from None
    return examples


def convert_2wiki(path: str | Path) -> list[QAExample]:
    """2WikiMultihopQA shares hotpot's _id/question/answer shape."""
    examples = []
    for i, item in enumerate(_load_json_array(path, "2wiki")):
        try:
            examples.append(
                QAExample(
                    qid=str(item["_id"]),
                    question=item["question"],
                    gold_answers=(item["answer"],),
                    answer_type=AnswerType.SPAN,
                )
            )
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"2wiki: record {i} malformed ({exc})") from None
    return examples


def convert_strategyqa(path: str | Path) -> list[QAExample]:
    """StrategyQA: boolean answers become yes/no examples."""
    examples = []
    for i, item in enumerate(_load_json_array(path, "strategyqa")):
        try:
            examples.append(
                QAExample(
                    qid=str(item["qid"]),
                    question=item["question"],
                    gold_answers=("yes" if item["answer"] else "no",),
                    answer_type=AnswerType.YESNO,
                )
            )
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"strategyqa: record {i} malformed ({exc})") from None
    return examples


def convert_iirc(path: str | Path) -> tuple[list[QAExample], int]:
    """IIRC nests questions under articles; unanswerable ones are dropped.

    Returns (examples, skipped) where skipped counts "none"-type answers.
    """
    examples: list[QAExample] = []
    skipped = 0
    for i, article in enumerate(_load_json_array(path, "iirc")):
        for j, item in enumerate(article.get("questions", [])):
            try:
                answer = item["answer"]
                kind = answer["type"]
                if kind == "none":
                    skipped += 1
                    continue
                if kind == "span":
                    golds = (" ".join(s["text"].strip() for s in answer["answer_spans"]),)
                    answer_type = AnswerType.SPAN
                elif kind == "value":
                    golds = (str(answer["answer_value"]),)
                    answer_type = AnswerType.SPAN
                elif kind == "binary":
                    golds = (str(answer["answer_value"]).lower(),)
                    answer_type = AnswerType.YESNO
                else:
                    raise DatasetError(f"iirc: article {i} question {j} has unknown answer type {kind!r}")
                examples.append(
                    QAExample(
                        qid=str(item["qid"]),
                        question=item["question"],
                        gold_answers=golds,
                        answer_type=answer_type,
                    )
                )
            except (KeyError, TypeError) as exc:
                raise DatasetError(f"iirc: article {i} question {j} malformed ({exc})") from None
    return examples, skipped


# ---------------------------------------------------------------------------
# benchmark runs
# ---------------------------------------------------------------------------


@dataclass
class ExampleResult:
    qid: str
    prediction: str
    em: int
    f1: float
    acc: int | None
    retrievals: int
    answer_type: AnswerType

    def to_dict(self) -> dict:
        return {
            "qid": self.qid,
            "prediction": self.prediction,
            "em": self.em,
            "f1": self.f1,
            "acc": self.acc,
            "retrievals": self.retrievals,
            "answer_type": self.answer_type.value,
        }


@dataclass
class FailureRecord:
    qid: str
    error: str


@dataclass
class Aggregates:
    evaluated: int
    failed: int
    em_pct: float
    f1_pct: float
    acc_pct: float | None
    mean_retrievals: float

    def to_dict(self) -> dict:
        return {
            "evaluated": self.evaluated,
            "failed": self.failed,
            "em_pct": self.em_pct,
            "f1_pct": self.f1_pct,
            "acc_pct": self.acc_pct,
            "mean_retrievals": self.mean_retrievals,
        }


@dataclass
class RunReport:
    results: list[ExampleResult]
    failures: list[FailureRecord]
    traces: list[tuple[str, HopTrace]]  # (qid, trace), qid-ordered
    aggregates: Aggregates
    config_snapshot: dict


def parse_provider_spec(spec: str) -> tuple[str, str]:
    kind, _, arg = spec.partition(":")
    if kind == "trace" and arg:
        return "trace", arg
    if kind == "sidecar" and arg:
        return "sidecar", arg
    raise ConfigError(f"provider spec must be trace:<dir> or sidecar:<url>, got {spec!r}")


def _make_provider(kind: str, arg: str, qid: str):
    if kind == "trace":
        trace_path = Path(arg) / f"{qid}.jsonl"
        if not trace_path.is_file():
            raise ProviderError(f"no trace file for {qid!r} at {trace_path}")
        return TraceProvider(load_trace(trace_path))
    return SidecarProvider(arg)


def score_example(example: QAExample, trace: HopTrace) -> ExampleResult:
    prediction = trace.final_answer
    acc = yesno_accuracy(prediction, example.gold_answers) if example.answer_type is AnswerType.YESNO else None
    return ExampleResult(
        qid=example.qid,
        prediction=prediction,
        em=exact_match(prediction, example.gold_answers),
        f1=token_f1(prediction, example.gold_answers),
        acc=acc,
        retrievals=trace.total_retrievals,
        answer_type=example.answer_type,
    )


def aggregate(results: list[ExampleResult], failed: int) -> Aggregates:
    n = len(results)
    if n == 0:
        return Aggregates(evaluated=0, failed=failed, em_pct=0.0, f1_pct=0.0, acc_pct=None, mean_retrievals=0.0)
    yesno = [r for r in results if r.acc is not None]
    return Aggregates(
        evaluated=n,
        failed=failed,
        em_pct=100.0 * sum(r.em for r in results) / n,
        f1_pct=100.0 * sum(r.f1 for r in results) / n,
        acc_pct=100.0 * sum(r.acc for r in yesno) / len(yesno) if yesno else None,
        mean_retrievals=sum(r.retrievals for r in results) / n,
    )


def run_benchmark(
    dataset_path: str | Path,
    corpus_path: str | Path,
    config: PipelineConfig,
    provider_spec: str,
    out_dir: str | Path | None = None,
    workers: int = 4,
    snapshot_path: str | Path | None = None,
    prompts: PromptLibrary | None = None,
) -> RunReport:
    """Run every dataset example through the pipeline and score it.

    Examples run in a thread pool, one provider instance each, sharing the
    read-only index. A failing example is recorded and excluded from the
    aggregates; it never aborts the run.
    """
    examples = load_dataset(dataset_path)
    index = load_or_build(corpus_path, snapshot_path)
    kind, arg = parse_provider_spec(provider_spec)

    def run_one(example: QAExample) -> tuple[QAExample, HopTrace | None, str | None]:
        provider = None
        try:
            provider = _make_provider(kind, arg, example.qid)
            trace = run_question(example.question, provider, index, config, prompts)
            return example, trace, None
        except EngineError as exc:
            return example, None, f"{type(exc).__name__}: {exc}"
        finally:
            if provider is not None and hasattr(provider, "close"):
                provider.close()

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = list(pool.map(run_one, examples))
    outcomes.sort(key=lambda item: item[0].qid)

    results: list[ExampleResult] = []
    failures: list[FailureRecord] = []
    traces: list[tuple[str, HopTrace]] = []
    for example, trace, error in outcomes:
        if error is not None:
            failures.append(FailureRecord(qid=example.qid, error=error))
            continue
        traces.append((example.qid, trace))
        results.append(score_example(example, trace))

    report = RunReport(
        results=results,
        failures=failures,
        traces=traces,
        aggregates=aggregate(results, failed=len(failures)),
        config_snapshot=config_snapshot(config, provider_spec, dataset_path, corpus_path),
    )
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def config_snapshot(config: PipelineConfig, provider_spec: str, dataset_path, corpus_path) -> dict:
    trigger = config.trigger
    entity_filter = config.entity_filter
    selection = entity_filter.selection
    return {
        "dataset": str(dataset_path),
        "corpus": str(corpus_path),
        "provider": provider_spec,
        "trigger": {
            "mode": trigger.mode.value,
            "alpha": trigger.alpha,
            "beta": trigger.beta,
            "fixed_threshold": trigger.fixed_threshold,
        },
        "filter": {
            "mode": entity_filter.mode.value,
            "gamma": entity_filter.gamma,
            "delta": entity_filter.delta,
            "selection": {"k": selection.k} if hasattr(selection, "k") else {"tau": selection.tau},
        },
        "retrieval_k": config.retrieval_k,
        "max_hops": config.max_hops,
        "max_tokens_per_segment": config.max_tokens_per_segment,
        "memory_budget_chars": config.memory_budget_chars,
    }


def write_report(report: RunReport, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "records.jsonl", "w", encoding="utf-8") as fh:
        for result in report.results:
            fh.write(json.dumps(result.to_dict(), ensure_ascii=False) + "\n")
    with open(out / "traces.jsonl", "w", encoding="utf-8") as fh:
        for _, trace in report.traces:
            fh.write(trace.to_json() + "\n")
    with open(out / "failures.jsonl", "w", encoding="utf-8") as fh:
        for failure in report.failures:
            fh.write(json.dumps({"qid": failure.qid, "error": failure.error}, ensure_ascii=False) + "\n")
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(
            {"aggregates": report.aggregates.to_dict(), "config": report.config_snapshot},
            fh,
            ensure_ascii=False,
            indent=2,
        )
        fh.write("\n")


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

# the confidence-weight grid reported in the reference ablation
DEFAULT_GAMMA_DELTA_GRID: tuple[tuple[float, float], ...] = ((0.5, 0.1), (1.0, 0.2), (1.5, 0.3))


def sweep_gamma_delta(
    dataset_path: str | Path,
    corpus_path: str | Path,
    base_config: PipelineConfig,
    provider_spec: str,
    grid: tuple[tuple[float, float], ...] = DEFAULT_GAMMA_DELTA_GRID,
    workers: int = 4,
) -> list[dict]:
    """One benchmark run per (gamma, delta) pair; rows carry EM/F1/#Ret."""
    rows = []
    for gamma, delta in grid:
        config = _replace(
            base_config,
            entity_filter=_replace(base_config.entity_filter, gamma=gamma, delta=delta),
        )
        report = run_benchmark(dataset_path, corpus_path, config, provider_spec, workers=workers)
        rows.append(
            {
                "gamma": gamma,
                "delta": delta,
                "em": report.aggregates.em_pct,
                "f1": report.aggregates.f1_pct,
                "ret": report.aggregates.mean_retrievals,
                "evaluated": report.aggregates.evaluated,
                "failed": report.aggregates.failed,
            }
        )
    return rows


def sweep_trigger_modes(
    dataset_path: str | Path,
    corpus_path: str | Path,
    base_config: PipelineConfig,
    provider_spec: str,
    fixed_threshold: float = 0.6,
    workers: int = 4,
) -> list[dict]:
    """Fixed-threshold vs segment-derived trigger, same EM/F1/#Ret columns."""
    rows = []
    for label, trigger in (
        ("fixed", _replace(base_config.trigger, mode=TriggerMode.FIXED, fixed_threshold=fixed_threshold)),
        ("dynamic", _replace(base_config.trigger, mode=TriggerMode.DYNAMIC)),
    ):
        config = _replace(base_config, trigger=trigger)
        report = run_benchmark(dataset_path, corpus_path, config, provider_spec, workers=workers)
        rows.append(
            {
                "trigger": label,
                "em": report.aggregates.em_pct,
                "f1": report.aggregates.f1_pct,
                "ret": report.aggregates.mean_retrievals,
                "evaluated": report.aggregates.evaluated,
                "failed": report.aggregates.failed,
            }
        )
    return rows
