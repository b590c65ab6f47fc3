import pytest

from support import write_corpus


@pytest.fixture
def tiny_corpus(tmp_path):
    return write_corpus(
        tmp_path / "corpus.jsonl",
        [
            {"doc_id": "d1", "title": "Alpha", "text": "alpha beta gamma"},
            {"doc_id": "d2", "title": "Beta", "text": "beta beta delta"},
            {"doc_id": "d3", "title": "Gamma", "text": "gamma delta epsilon"},
        ],
    )
