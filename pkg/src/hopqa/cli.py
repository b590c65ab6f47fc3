"""Command-line front end.

Subcommands: ingest (corpus -> index snapshot), convert (benchmark
distribution file -> unified dataset), run (benchmark run), sweep
(hyperparameter grids), trace-dump (pretty-print a trace stream).

Exit codes: 0 success, 1 configuration error, 2 data error, 3 provider
error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, DataError, ProviderError
from .evaluation import (
    DEFAULT_GAMMA_DELTA_GRID,
    convert_2wiki,
    convert_hotpot,
    convert_iirc,
    convert_strategyqa,
    run_benchmark,
    sweep_gamma_delta,
    sweep_trigger_modes,
    write_dataset,
)
from .filtering import FilterConfig, FilterMode, TopK
from .orchestrator import PipelineConfig
from .retriever import corpus_digest, ingest_corpus, save_snapshot
from .signals import TriggerConfig, TriggerMode
from .templates import PromptLibrary


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; bad flags are a
    # configuration problem here, so reroute through ConfigError.
    def error(self, message):
        raise ConfigError(message)


def _parse_trigger(value: str) -> TriggerConfig:
    if value == "dynamic":
        return TriggerConfig(mode=TriggerMode.DYNAMIC)
    if value == "fixed":
        return TriggerConfig(mode=TriggerMode.FIXED)
    if value.startswith("fixed:"):
        try:
            threshold = float(value.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad fixed threshold in {value!r}") from None
        return TriggerConfig(mode=TriggerMode.FIXED, fixed_threshold=threshold)
    raise ConfigError(f"--trigger must be dynamic or fixed:<threshold>, got {value!r}")


def _parse_grid(value: str) -> tuple[tuple[float, float], ...]:
    pairs = []
    for chunk in value.split(","):
        try:
            gamma, delta = chunk.split(":")
            pairs.append((float(gamma), float(delta)))
        except ValueError:
            raise ConfigError(f"bad grid entry {chunk!r}, expected gamma:delta") from None
    if not pairs:
        raise ConfigError("empty sweep grid")
    return tuple(pairs)


def _pipeline_config(args) -> PipelineConfig:
    trigger = _parse_trigger(args.trigger)
    trigger = TriggerConfig(
        mode=trigger.mode,
        alpha=args.alpha,
        beta=args.beta,
        fixed_threshold=trigger.fixed_threshold,
    )
    entity_filter = FilterConfig(
        mode=FilterMode(args.mode),
        gamma=args.gamma,
        delta=args.delta,
        selection=TopK(args.topk),
    )
    return PipelineConfig(
        trigger=trigger,
        entity_filter=entity_filter,
        retrieval_k=args.retrieval_k,
        max_hops=args.max_hops,
    )


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", required=True, help="unified dataset (jsonl)")
    parser.add_argument("--corpus", required=True, help="retrieval corpus (jsonl)")
    parser.add_argument("--provider", required=True, help="trace:<dir> or sidecar:<url>")
    parser.add_argument("--mode", default="nofilter", choices=[m.value for m in FilterMode])
    parser.add_argument("--trigger", default="dynamic", help="dynamic or fixed:<threshold>")
    parser.add_argument("--gamma", type=float, default=1.0)
    parser.add_argument("--delta", type=float, default=0.2)
    parser.add_argument("--alpha", type=float, default=1.0)
    parser.add_argument("--beta", type=float, default=1.0)
    parser.add_argument("--topk", type=int, default=5)
    parser.add_argument("--retrieval-k", type=int, default=3)
    parser.add_argument("--max-hops", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0, help="reserved; the pipeline is deterministic")
    parser.add_argument("--workers", type=int, default=4)
    parser.add_argument("--snapshot", default=None, help="optional index snapshot to reuse/refresh")
    parser.add_argument("--prompts", default=None, help="directory of prompt template overrides")


def _build_parser() -> _Parser:
    parser = _Parser(prog="hopqa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="build an index snapshot from a corpus")
    p_ingest.add_argument("--corpus", required=True)
    p_ingest.add_argument("--out", required=True, help="snapshot file to write")
    p_ingest.add_argument("--k1", type=float, default=1.2)
    p_ingest.add_argument("--b", type=float, default=0.75)

    p_convert = sub.add_parser("convert", help="convert a benchmark file to the unified format")
    p_convert.add_argument("--format", required=True, choices=["hotpot", "2wiki", "strategyqa", "iirc"])
    p_convert.add_argument("--in", dest="infile", required=True)
    p_convert.add_argument("--out", required=True)

    p_run = sub.add_parser("run", help="run a benchmark")
    _add_run_flags(p_run)
    p_run.add_argument("--out", default=None, help="directory for records/traces/report")

    p_sweep = sub.add_parser("sweep", help="sweep confidence weights (and optionally trigger modes)")
    _add_run_flags(p_sweep)
    p_sweep.add_argument("--grid", default=None, help="gamma:delta pairs, comma separated")
    p_sweep.add_argument("--thresholds", action="store_true", help="also compare fixed vs dynamic triggers")
    p_sweep.add_argument("--out", default=None, help="file for the sweep table (json)")

    p_dump = sub.add_parser("trace-dump", help="pretty-print a trace stream")
    p_dump.add_argument("path", help="traces.jsonl produced by run")

    return parser


def _cmd_ingest(args) -> int:
    index = ingest_corpus(args.corpus, k1=args.k1, b=args.b)
    save_snapshot(index, args.out, corpus_digest(args.corpus))
    print(f"indexed {index.doc_count} documents -> {args.out}")
    return 0


def _cmd_convert(args) -> int:
    skipped = 0
    if args.format == "hotpot":
        examples = convert_hotpot(args.infile)
    elif args.format == "2wiki":
        examples = convert_2wiki(args.infile)
    elif args.format == "strategyqa":
        examples = convert_strategyqa(args.infile)
    else:
        examples, skipped = convert_iirc(args.infile)
    write_dataset(examples, args.out)
    note = f" ({skipped} unanswerable skipped)" if skipped else ""
    print(f"wrote {len(examples)} examples -> {args.out}{note}")
    return 0


def _fmt(value, width=8, digits=3):
    if value is None:
        return " " * (width - 1) + "-"
    return f"{value:{width}.{digits}f}"


def _cmd_run(args) -> int:
    prompts = PromptLibrary.from_dir(args.prompts) if args.prompts else None
    report = run_benchmark(
        args.dataset,
        args.corpus,
        _pipeline_config(args),
        args.provider,
        out_dir=args.out,
        workers=args.workers,
        snapshot_path=args.snapshot,
        prompts=prompts,
    )
    agg = report.aggregates
    print("examples      em%      f1%     acc%     #ret   failed")
    print(
        f"{agg.evaluated:8d} {_fmt(agg.em_pct)} {_fmt(agg.f1_pct)} {_fmt(agg.acc_pct)}"
        f" {_fmt(agg.mean_retrievals)} {agg.failed:8d}"
    )
    if args.out:
        print(f"report written to {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    grid = _parse_grid(args.grid) if args.grid else DEFAULT_GAMMA_DELTA_GRID
    base = _pipeline_config(args)
    rows = sweep_gamma_delta(args.dataset, args.corpus, base, args.provider, grid=grid, workers=args.workers)
    print("   gamma    delta       EM       F1     #Ret")
    for row in rows:
        print(
            f"{_fmt(row['gamma'])} {_fmt(row['delta'])} {_fmt(row['em'])}"
            f" {_fmt(row['f1'])} {_fmt(row['ret'])}"
        )

    threshold_rows = []
    if args.thresholds:
        threshold_rows = sweep_trigger_modes(args.dataset, args.corpus, base, args.provider, workers=args.workers)
        print()
        print(" trigger       EM       F1     #Ret")
        for row in threshold_rows:
            print(f"{row['trigger']:>8} {_fmt(row['em'])} {_fmt(row['f1'])} {_fmt(row['ret'])}")

    if args.out:
        payload = {"gamma_delta": rows}
        if threshold_rows:
            payload["triggers"] = threshold_rows
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, ensure_ascii=False, indent=2)
            fh.write("\n")
        print(f"sweep table written to {args.out}")
    return 0


def _cmd_trace_dump(args) -> int:
    path = Path(args.path)
    if not path.is_file():
        raise DataError(f"no trace stream at {path}")
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                trace = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: invalid JSON ({exc.msg})") from None
            print(f"Q: {trace.get('question', '?')}")
            for hop in trace.get("hops", []):
                decision = hop.get("decision", {})
                mark = "triggered" if decision.get("triggered") else "no trigger"
                line_out = (
                    f"  hop {hop.get('hop_index')}: {mark}"
                    f" (max {decision.get('max_score', 0):.3f}"
                    f" vs {decision.get('threshold_used', 0):.3f})"
                )
                if hop.get("subquery"):
                    # last line is the retrieval cue (question when nothing was kept)
                    cue = hop["subquery"].splitlines()[-1].removeprefix("Find: ")
                    line_out += f" | find: {cue[:60]}"
                if hop.get("retrieved"):
                    ids = ", ".join(d["doc_id"] for d in hop["retrieved"])
                    line_out += f" | docs: {ids}"
                print(line_out)
            print(f"  answer: {trace.get('final_answer', '')!r}")
            print(
                f"  retrievals: {trace.get('total_retrievals')}"
                f" | ended: {trace.get('terminated_by')}"
                f" | memory: {len(trace.get('memory', []))} facts"
            )
            print()
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "ingest": _cmd_ingest,
            "convert": _cmd_convert,
            "run": _cmd_run,
            "sweep": _cmd_sweep,
            "trace-dump": _cmd_trace_dump,
        }[args.command]
        return handler(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
