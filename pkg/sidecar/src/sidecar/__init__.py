"""Streaming inference sidecar: per-token text, entropy, and attention over HTTP."""

from .app import create_app
from .engine import GenerationEngine
from .model import EOS_ID, VOCAB_SIZE, CharTokenizer, build_model

__version__ = "0.1.0"

__all__ = [
    "CharTokenizer",
    "EOS_ID",
    "GenerationEngine",
    "VOCAB_SIZE",
    "build_model",
    "create_app",
]
