import pytest

from sidecar import GenerationEngine, build_model


@pytest.fixture(scope="session")
def engine() -> GenerationEngine:
    # Built once: the seeded model is deterministic, so sharing is safe.
    model, tokenizer = build_model()
    return GenerationEngine(model, tokenizer)
