"""Self-contained tiny causal LM in standard pretrained-model layout.

Builds a character-level tokenizer over a given text corpus plus a small
randomly initialized decoder, and saves both to a directory loadable with
``AutoTokenizer``/``AutoModel``. This stands in for a real pretrained
checkpoint wherever downloading one is impossible (tests, offline CI); the
export code path is identical either way.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

import torch

UNK_TOKEN = "[UNK]"


def build_tiny_model_dir(path, corpus: Iterable[str], hidden_size: int = 32,
                         num_layers: int = 2, num_heads: int = 2,
                         seed: int = 0) -> Path:
    """Write tokenizer + model files under ``path`` and return it.

    The tokenizer covers every character appearing in ``corpus``; anything
    else maps to the UNK token.
    """
    from tokenizers import Regex, Tokenizer
    from tokenizers.models import WordLevel
    from tokenizers.pre_tokenizers import Split
    from transformers import LlamaConfig, LlamaModel

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)

    chars = sorted(set("".join(corpus)))
    vocab = {UNK_TOKEN: 0}
    for ch in chars:
        vocab.setdefault(ch, len(vocab))
    tokenizer = Tokenizer(WordLevel(vocab, unk_token=UNK_TOKEN))
    tokenizer.pre_tokenizer = Split(Regex("."), behavior="isolated")
    tokenizer.save(str(path / "tokenizer.json"))
    (path / "tokenizer_config.json").write_text(json.dumps({
        "tokenizer_class": "PreTrainedTokenizerFast",
        "unk_token": UNK_TOKEN,
        "model_max_length": 2048,
    }), encoding="utf-8")

    torch.manual_seed(seed)
    config = LlamaConfig(
        vocab_size=len(vocab), hidden_size=hidden_size,
        intermediate_size=2 * hidden_size, num_hidden_layers=num_layers,
        num_attention_heads=num_heads, num_key_value_heads=num_heads,
        max_position_embeddings=2048)
    LlamaModel(config).save_pretrained(path)
    return path
