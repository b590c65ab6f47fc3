"""Multi-hop question answering with uncertainty-triggered retrieval.

The pipeline generates reasoning segments, watches per-token entropy and
attention signals, and only reaches for the retriever when a segment
looks uncertain. Extracted entities are filtered, remembered across hops,
and folded into refined sub-queries for a BM25 index.
"""

from .errors import (
    BackendUnreachableError,
    ConfigError,
    CorpusError,
    DataError,
    DatasetError,
    EmptySegmentError,
    EngineError,
    InvalidDistributionError,
    InvalidExampleError,
    InvalidWeightError,
    MissingSpanError,
    ProtocolError,
    ProviderError,
    SignalError,
    SnapshotError,
    TraceError,
    TraceExhaustedError,
)
from .evaluation import (
    DEFAULT_GAMMA_DELTA_GRID,
    Aggregates,
    AnswerType,
    ExampleResult,
    FailureRecord,
    QAExample,
    RunReport,
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
    yesno_accuracy,
)
from .extraction import (
    CandidateEntity,
    align_spans,
    build_extraction_prompt,
    cot_validate,
    format_entity_line,
    parse_extraction_output,
)
from .filtering import (
    FilterConfig,
    FilterMode,
    MemoryRecord,
    MemorySource,
    MemoryStore,
    Threshold,
    TopK,
    entity_confidence,
    filter_entities,
    normalize_key,
)
from .orchestrator import (
    HopRecord,
    HopTrace,
    PipelineConfig,
    TerminatedBy,
    extract_final_answer,
    form_subquery,
    run_question,
    synthesize_answer,
)
from .providers import (
    FinishReason,
    GenerationProvider,
    GenerationRequest,
    GenerationSegment,
    RecordingProvider,
    SidecarProvider,
    TraceFile,
    TraceProvider,
    TraceRecord,
    fold_attention,
    load_trace,
    write_trace,
)
from .retriever import (
    Document,
    InvertedIndex,
    ScoredDoc,
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
from .signals import (
    TokenEvent,
    TriggerConfig,
    TriggerDecision,
    TriggerMode,
    dynamic_threshold,
    max_attention,
    should_retrieve,
    token_entropy,
    trigger_score,
)
from .templates import PromptLibrary, default_prompts

__version__ = "0.1.0"
