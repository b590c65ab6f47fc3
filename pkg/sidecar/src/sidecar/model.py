"""Model and tokenizer construction.

The default model is a tiny character-level causal transformer built from
seeded random weights, so the server runs anywhere with no downloads and
gives byte-identical streams across processes. MODEL_ID can instead point
at a local transformers checkpoint directory for real workloads.

The character vocabulary is printable ASCII: id i maps to chr(32 + i) for
i in 0..94, and id 95 is end-of-sequence. Anything outside that range
encodes as a space.
"""

from __future__ import annotations

import torch
from transformers import GPT2Config, GPT2LMHeadModel

VOCAB_SIZE = 96
EOS_ID = 95
_CHAR_BASE = 32
_BUILTIN_ID = "builtin:tiny"
_BUILTIN_SEED = 7


class CharTokenizer:
    """Printable-ASCII character tokenizer matching the builtin model."""

    def encode(self, text: str) -> list[int]:
        ids = []
        for ch in text:
            code = ord(ch)
            ids.append(code - _CHAR_BASE if _CHAR_BASE <= code <= 126 else 0)
        return ids

    def decode_token(self, token_id: int) -> str:
        if token_id == EOS_ID:
            return ""
        return chr(_CHAR_BASE + token_id)


def build_model(model_id: str = _BUILTIN_ID, device: str = "cpu") -> tuple[GPT2LMHeadModel, CharTokenizer]:
    """Construct the model and its tokenizer on the requested device.

    Attention weights must be materialized for streaming, so the eager
    attention path is forced (fused kernels do not expose them).
    """
    if model_id == _BUILTIN_ID:
        torch.manual_seed(_BUILTIN_SEED)
        config = GPT2Config(
            vocab_size=VOCAB_SIZE,
            n_positions=2048,
            n_embd=64,
            n_layer=2,
            n_head=2,
            bos_token_id=EOS_ID,
            eos_token_id=EOS_ID,
            attn_implementation="eager",
        )
        model = GPT2LMHeadModel(config)
    else:
        model = GPT2LMHeadModel.from_pretrained(model_id, attn_implementation="eager")
    model.to(device)
    model.eval()
    return model, CharTokenizer()
