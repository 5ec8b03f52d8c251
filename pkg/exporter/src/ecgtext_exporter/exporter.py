"""Frozen-LM prompt embedding export.

For each label the prompt template is rendered and run through a frozen
pretrained autoregressive model; the final hidden layer is pooled into one
vector per prompt and the resulting table is written as ETB1, keyed by the
raw label strings. Pooling is ``last_token`` (the natural summary position
for autoregressive models) or ``mean`` over token positions.

ETB1 has no metadata slot, so the model id, pooling, template and hidden
size are recorded in a ``<out>.meta.txt`` sidecar.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .etb1 import write_table

DEFAULT_TEMPLATE = "This ECG shows {reports}."
PLACEHOLDER = "{reports}"
POOLINGS = ("last_token", "mean")


class ExportError(Exception):
    pass


@dataclass(frozen=True)
class ExportJob:
    model: str
    labels: tuple[str, ...]
    out: str
    template: str = DEFAULT_TEMPLATE
    pooling: str = "last_token"

    def __post_init__(self):
        if not self.labels:
            raise ExportError("no labels to export")
        if len(set(self.labels)) != len(self.labels):
            raise ExportError("labels must be unique")
        if any(not lab for lab in self.labels):
            raise ExportError("labels must be non-empty")
        if self.template.count(PLACEHOLDER) != 1:
            raise ExportError(
                f"template must contain exactly one {PLACEHOLDER!r} placeholder")
        if self.pooling not in POOLINGS:
            raise ExportError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")


def _load_frozen(model_id: str):
    from transformers import AutoModel, AutoTokenizer
    try:
        tokenizer = AutoTokenizer.from_pretrained(model_id)
        model = AutoModel.from_pretrained(model_id)
    except (OSError, ValueError) as exc:
        raise ExportError(f"cannot load model {model_id!r}: {exc}") from exc
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return tokenizer, model


def export(job: ExportJob) -> Path:
    """Run the job; returns the ETB1 path. Deterministic: two runs of the
    same job produce byte-identical files."""
    torch.set_num_threads(1)
    tokenizer, model = _load_frozen(job.model)
    hidden = int(getattr(model.config, "hidden_size", 0))
    if hidden < 1:
        raise ExportError(f"model {job.model!r} reports hidden size {hidden}")

    vectors = np.empty((len(job.labels), hidden), dtype=np.float32)
    with torch.no_grad():
        for i, label in enumerate(job.labels):
            prompt = job.template.replace(PLACEHOLDER, label)
            encoded = tokenizer(prompt, return_tensors="pt")
            if encoded["input_ids"].numel() == 0:
                raise ExportError(f"tokenizer produced no tokens for {label!r}")
            states = model(**encoded).last_hidden_state[0].to(torch.float32)
            pooled = states[-1] if job.pooling == "last_token" else states.mean(dim=0)
            vectors[i] = pooled.numpy()

    out = Path(job.out)
    write_table(out, job.labels, vectors)
    sidecar = out.with_name(out.name + ".meta.txt")
    sidecar.write_text(
        f"model = {job.model}\n"
        f"pooling = {job.pooling}\n"
        f"template = {job.template}\n"
        f"hidden_size = {hidden}\n"
        f"labels = {len(job.labels)}\n",
        encoding="utf-8")
    return out
