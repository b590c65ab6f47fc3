"""Greedy streaming generation with per-token signals.

Each generated token becomes one wire record:

    {"index": t, "text": "...", "entropy": 0.42, "attn_to_past": {"0": 0.2}}

entropy is Shannon entropy of the full next-token distribution at that
step, in nats. attn_to_past holds this step's attention toward earlier
GENERATED tokens: final decoder layer, maximum over heads, prompt
positions excluded. The attention executed while producing token t
belongs to the query at position t-1, so the map covers indices up to
t-2; the query's own key is not a look at an earlier token. The stream
ends with a terminal record {"finish_reason": "stop" | "length"}.
"""

from __future__ import annotations

from typing import Iterator, Sequence

import torch

from .model import EOS_ID, CharTokenizer


class GenerationEngine:
    def __init__(self, model, tokenizer: CharTokenizer, device: str = "cpu"):
        self.model = model
        self.tokenizer = tokenizer
        self.device = device

    @torch.no_grad()
    def stream(self, prompt: str, max_tokens: int, stop: Sequence[str] = ()) -> Iterator[dict]:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        if max_tokens < 1:
            raise ValueError("max_tokens must be at least 1")

        prompt_ids = self.tokenizer.encode(prompt)
        # fixed position window: keep the tail of an over-long prompt and
        # never let prompt + generation run past the last position slot
        window = int(self.model.config.n_positions)
        keep = max(1, window - max_tokens)
        if len(prompt_ids) > keep:
            prompt_ids = prompt_ids[-keep:]
        limit = min(max_tokens, window - len(prompt_ids))

        input_ids = torch.tensor([prompt_ids], dtype=torch.long, device=self.device)
        output = self.model(input_ids=input_ids, use_cache=True, output_attentions=True)
        prompt_len = len(prompt_ids)

        completion = ""
        finish = "length"
        for t in range(limit):
            logits = output.logits[0, -1]
            probs = torch.softmax(logits.double(), dim=-1)
            # -sum p ln p; every term is non-negative, so no cancellation
            entropy = float(-(probs * torch.log(probs.clamp_min(1e-300))).sum())

            # final layer, max over heads, last query row
            attn_row = output.attentions[-1][0].max(dim=0).values[-1]
            generated_keys = attn_row[prompt_len:].tolist()
            attn_to_past = {
                str(j): min(1.0, max(0.0, float(w)))
                for j, w in enumerate(generated_keys[: max(0, t - 1)])
            }

            token_id = int(torch.argmax(logits).item())
            text = self.tokenizer.decode_token(token_id)
            completion += text
            yield {"index": t, "text": text, "entropy": entropy, "attn_to_past": attn_to_past}

            if token_id == EOS_ID or any(s and s in completion for s in stop):
                finish = "stop"
                break
            if t + 1 >= limit:
                break
            output = self.model(
                input_ids=torch.tensor([[token_id]], dtype=torch.long, device=self.device),
                past_key_values=output.past_key_values,
                use_cache=True,
                output_attentions=True,
            )
        yield {"finish_reason": finish}
