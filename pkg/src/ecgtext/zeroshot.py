"""Fine-grained and zero-shot superset classification with top-k reports.

Classification matches a projected ECG embedding against projected candidate
prompt embeddings by cosine similarity. The fine-grained task uses the bank's
own labels as candidates; the three superset tasks regroup fine labels through
the shipped mapping table and score against the (much smaller) superset
vocabularies. Records whose fine label has no entry in a task's column are
excluded from that task. Superset tasks report top-1 only; fine-grained
reports top-1 and top-k.

Mapping file: UTF-8 tab-separated with header
``fine_label<TAB>superclass<TAB>rhythm<TAB>mitbih``; an empty cell means the
fine label takes no part in that task; trailing empty cells may be omitted;
lines starting with ``#`` are comments.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np
import torch

from .checkpoint import Checkpoint, build_model
from .data import EcgDataset
from .encoder import EcgEncoder, ProjectionHead, project
from .errors import DataError, NumericError
from .textbank import EmbeddingTable

SUPERCLASS_LABELS = ("Normal ECG", "Conduction Disturbance",
                     "Mycardinal Infarction", "Hypertrophy", "ST/T change")
RHYTHM_LABELS = ("Sinus Arrhythmia", "ST/T change")
MITBIH_LABELS = ("Normal Beat", "Sinus Tachycardia", "Sinus Bradycardia",
                 "Sinus Arrhythmia", "Atrial fibrillation",
                 "Atrial premature beat", "Left bundle branch block beat",
                 "Right bundle branch block beat",
                 "Premature ventricular contraction")

TASK_NAMES = ("finegrained", "superclass", "rhythm", "mitbih")
_TASK_VOCAB = {"superclass": SUPERCLASS_LABELS, "rhythm": RHYTHM_LABELS,
               "mitbih": MITBIH_LABELS}
_MAPPING_COLUMNS = ("fine_label", "superclass", "rhythm", "mitbih")


@dataclass(frozen=True)
class MappingRow:
    superclass: str | None
    rhythm: str | None
    mitbih: str | None

    def for_task(self, task: str) -> str | None:
        return getattr(self, task)


@dataclass(frozen=True)
class MappingTable:
    rows: dict[str, MappingRow]

    def __len__(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class TaskSpec:
    task: str
    candidates: tuple[str, ...]

    def __post_init__(self):
        if self.task not in TASK_NAMES:
            raise DataError(f"unknown task {self.task!r}; expected one of {TASK_NAMES}")
        if not self.candidates:
            raise DataError("candidate set must be non-empty")
        if len(set(self.candidates)) != len(self.candidates):
            raise DataError("candidate set contains duplicates")


@dataclass
class ReportRow:
    label: str
    support: int
    top1: float
    top5: float | None


@dataclass
class EvalReport:
    task: str
    overall: ReportRow
    per_label: list[ReportRow]


def default_mapping_path():
    return resources.files("ecgtext").joinpath("assets/zero_shot_label_map.tsv")


def load_mapping(path=None) -> MappingTable:
    """Parse the fine-label -> superset mapping; validates vocabularies."""
    if path is None:
        path = default_mapping_path()
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    body = [ln for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    if not body:
        raise DataError("mapping file has no content rows")
    header = tuple(body[0].split("\t"))
    if header != _MAPPING_COLUMNS:
        raise DataError(
            f"mapping header {header} != expected {_MAPPING_COLUMNS}")
    rows: dict[str, MappingRow] = {}
    for ln in body[1:]:
        cells = ln.split("\t")
        if len(cells) > 4:
            raise DataError(f"mapping row has {len(cells)} cells, expected 4: {ln!r}")
        cells += [""] * (4 - len(cells))  # trailing empty cells may be omitted
        fine, sup, rhy, mit = (c.strip() for c in cells)
        if not fine:
            raise DataError(f"empty fine label in mapping row {ln!r}")
        if fine in rows:
            raise DataError(f"duplicate fine label {fine!r} in mapping")
        for value, vocab, col in ((sup, SUPERCLASS_LABELS, "superclass"),
                                  (rhy, RHYTHM_LABELS, "rhythm"),
                                  (mit, MITBIH_LABELS, "mitbih")):
            if value and value not in vocab:
                raise DataError(
                    f"unknown {col} value {value!r} for fine label {fine!r}")
        rows[fine] = MappingRow(sup or None, rhy or None, mit or None)
    return MappingTable(rows)


def task_spec(task: str, bank: EmbeddingTable) -> TaskSpec:
    if task == "finegrained":
        return TaskSpec(task, bank.labels)
    if task in _TASK_VOCAB:
        return TaskSpec(task, _TASK_VOCAB[task])
    raise DataError(f"unknown task {task!r}; expected one of {TASK_NAMES}")


def _normalize_rows(m: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    bad = np.nonzero(norms[:, 0] == 0.0)[0]
    if bad.size:
        raise NumericError(f"zero-norm {what} vector at row {int(bad[0])}")
    return m / norms


def classify(query: np.ndarray, candidates: EmbeddingTable,
             k: int) -> list[tuple[str, float]]:
    """Top-k candidate labels by cosine similarity, ties broken by table order."""
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if query.shape[0] != candidates.dim:
        raise DataError(
            f"query dim {query.shape[0]} != candidate dim {candidates.dim}")
    if not (1 <= k <= len(candidates)):
        raise DataError(f"k={k} outside [1, {len(candidates)}]")
    qnorm = np.linalg.norm(query)
    if qnorm == 0.0:
        raise NumericError("zero-norm query embedding")
    cand = _normalize_rows(candidates.vectors.astype(np.float64), "candidate")
    scores = cand @ (query / qnorm)
    order = np.argsort(-scores, kind="stable")[:k]
    return [(candidates.labels[i], float(scores[i])) for i in order]


def _rank_all(queries: np.ndarray, cand_vecs: np.ndarray) -> np.ndarray:
    """Ranked candidate indices per query row (stable descending cosine)."""
    q = _normalize_rows(np.asarray(queries, dtype=np.float64), "query")
    c = _normalize_rows(np.asarray(cand_vecs, dtype=np.float64), "candidate")
    scores = q @ c.T
    return np.argsort(-scores, axis=1, kind="stable")


def project_dataset(encoder: EcgEncoder, ecg_head: ProjectionHead,
                    dataset: EcgDataset, batch_size: int = 64) -> np.ndarray:
    """Projected ECG embeddings for every record, inference mode."""
    encoder.eval()
    ecg_head.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(dataset.records), batch_size):
            chunk = dataset.records[start:start + batch_size]
            x = torch.from_numpy(np.stack([r.samples for r in chunk]))
            out.append(project(ecg_head, encoder(x)).numpy())
    return np.concatenate(out, axis=0)


def project_candidates(text_head: ProjectionHead, bank: EmbeddingTable,
                       labels: tuple[str, ...]) -> np.ndarray:
    """Project the bank vectors of the given labels through the text head."""
    missing = [lab for lab in labels if lab not in bank]
    if missing:
        raise DataError(
            "candidate labels missing from embedding bank: "
            + ", ".join(repr(m) for m in missing)
            + " (rebuild the bank including the superset vocabulary)")
    vecs = np.stack([bank.lookup(lab) for lab in labels])
    with torch.no_grad():
        return project(text_head, torch.from_numpy(vecs)).numpy()


def evaluate_projected(proj: np.ndarray, truths: list[str | None],
                       spec: TaskSpec, cand_vecs: np.ndarray,
                       topk: int = 5) -> EvalReport:
    """Score pre-projected embeddings; None truths are excluded from the task."""
    keep = [i for i, t in enumerate(truths) if t is not None]
    if not keep:
        raise DataError(f"empty evaluable set for task {spec.task!r}")
    proj = np.asarray(proj)[keep]
    kept_truths = [truths[i] for i in keep]
    cand_index = {lab: i for i, lab in enumerate(spec.candidates)}
    for t in kept_truths:
        if t not in cand_index:
            raise DataError(f"ground-truth label {t!r} not in candidate set")
    with_top5 = spec.task == "finegrained"
    k5 = min(topk, len(spec.candidates))
    ranked = _rank_all(proj, cand_vecs)
    truth_idx = np.array([cand_index[t] for t in kept_truths])
    hit1 = ranked[:, 0] == truth_idx
    hitk = (ranked[:, :k5] == truth_idx[:, None]).any(axis=1)

    def row(label: str, mask: np.ndarray) -> ReportRow:
        support = int(mask.sum())
        top1 = float(hit1[mask].mean())
        top5 = float(hitk[mask].mean()) if with_top5 else None
        return ReportRow(label, support, top1, top5)

    per_label = []
    for lab in spec.candidates:
        mask = truth_idx == cand_index[lab]
        if mask.any():
            per_label.append(row(lab, mask))
    overall = row("all", np.ones(len(kept_truths), dtype=bool))
    return EvalReport(task=spec.task, overall=overall, per_label=per_label)


def eval_task(ckpt: Checkpoint, dataset: EcgDataset, bank: EmbeddingTable,
              mapping: MappingTable, task: str, topk: int = 5) -> EvalReport:
    """Full evaluation of a checkpoint on one task over a dataset."""
    encoder, ecg_head, text_head, _ = build_model(ckpt)
    spec = task_spec(task, bank)
    cand_vecs = project_candidates(text_head, bank, spec.candidates)
    proj = project_dataset(encoder, ecg_head, dataset)
    truths: list[str | None] = []
    for rec in dataset.records:
        fine = dataset.label_of(rec)
        if task == "finegrained":
            truths.append(fine)
        else:
            mrow = mapping.rows.get(fine)
            truths.append(mrow.for_task(task) if mrow is not None else None)
    return evaluate_projected(proj, truths, spec, cand_vecs, topk=topk)


def topk_accuracy(encoder: EcgEncoder, ecg_head: ProjectionHead,
                  text_head: ProjectionHead, dataset: EcgDataset,
                  bank: EmbeddingTable, topk: int = 5) -> tuple[float, float]:
    """Fine-grained (top1, topk) over bank labels; the training-time metric."""
    spec = task_spec("finegrained", bank)
    cand_vecs = project_candidates(text_head, bank, spec.candidates)
    proj = project_dataset(encoder, ecg_head, dataset)
    truths = [dataset.label_of(r) for r in dataset.records]
    report = evaluate_projected(proj, truths, spec, cand_vecs, topk=topk)
    return report.overall.top1, report.overall.top5 if report.overall.top5 is not None else 0.0


def _fmt_pct(x: float | None) -> str:
    return "" if x is None else f"{100.0 * x:.2f}%"


def render_report(report: EvalReport, path=None) -> str:
    """Deterministic TSV: header, the overall row, then per-label rows."""
    lines = ["label\tsupport\ttop1\ttop5"]
    for r in [report.overall] + report.per_label:
        lines.append(f"{r.label}\t{r.support}\t{_fmt_pct(r.top1)}\t{_fmt_pct(r.top5)}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    return text
