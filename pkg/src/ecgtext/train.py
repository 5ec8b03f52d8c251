"""Mini-batch contrastive training loop, optimizer, and gradient checker.

One step: look up each record's frozen text vector, project both sides into
the shared space, build the cosine similarity matrix, take the bidirectional
InfoNCE loss, and apply one optimizer update to the encoder, both heads, and
log_tau. The bank is read-only throughout.

The optimizer is written out explicitly (adaptive moments with decoupled
multiplicative weight decay, beta1=0.9, beta2=0.999, eps=1e-8) so training is
reproducible from this file alone and the full optimizer state serializes into
CKP1. Weight decay skips normalization parameters and log_tau. Epoch shuffles
are a pure function of (seed, epoch), which is what makes checkpoint resume
bit-exact in single-threaded mode.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from time import perf_counter
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .checkpoint import Checkpoint, build_model, save_checkpoint, snapshot_params
from .contrastive import TAU_INIT, Temperature, similarity_matrix, total_loss
from .data import EcgDataset, EcgRecord, LabelTable, assert_patient_disjoint, validate_dataset
from .encoder import EcgEncoder, EncoderConfig, ProjectionHead, init_model, project
from .errors import DataError, NumericError
from .textbank import EmbeddingTable, table_sha256
from .zeroshot import topk_accuracy

METRICS_FILENAME = "metrics.jsonl"
CHECKPOINT_FILENAME = "checkpoint.ckpt"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-3
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    width_factor: float = 1.0
    proj_dim: int = 256
    tau_init: float = TAU_INIT
    freeze_tau: bool = False
    eval_every: int = 0        # 0 = no validation passes
    checkpoint_every: int = 0  # 0 = final checkpoint only
    target_top1: float = 0.0   # stop once validation top-1 reaches this (0 = off)
    num_threads: int = 0       # 0 = leave the torch default

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise DataError("learning rate and weight decay must be non-negative")
        if self.batch_size < 2:
            raise DataError("contrastive training needs batch_size >= 2")
        if self.epochs < 0:
            raise DataError("epochs must be non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1 and self.eps > 0):
            raise DataError("invalid optimizer constants")
        if not (self.width_factor > 0 and self.proj_dim > 0 and self.tau_init > 0):
            raise DataError("width_factor, proj_dim and tau_init must be positive")
        if self.eval_every < 0 or self.checkpoint_every < 0 or self.num_threads < 0:
            raise DataError("cadence and thread counts must be non-negative")


class DecoupledAdam:
    """Adam-style moments; weight decay multiplies parameters by (1 - lr*wd)."""

    def __init__(self, params: "OrderedDict[str, nn.Parameter]", no_decay: set[str],
                 lr: float, weight_decay: float, beta1: float, beta2: float, eps: float):
        self.params = params
        self.no_decay = no_decay
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: torch.zeros_like(p) for name, p in params.items()}
        self.v = {name: torch.zeros_like(p) for name, p in params.items()}

    def step(self, grads: dict[str, torch.Tensor | None]) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        with torch.no_grad():
            for name, p in self.params.items():
                g = grads.get(name)
                if g is None:
                    g = torch.zeros_like(p)
                m, v = self.m[name], self.v[name]
                m.mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
                v.mul_(self.beta2).addcmul_(g, g, value=1.0 - self.beta2)
                if self.weight_decay != 0.0 and name not in self.no_decay:
                    p.mul_(1.0 - self.lr * self.weight_decay)
                denom = (v / bc2).sqrt_().add_(self.eps)
                p.addcdiv_(m / bc1, denom, value=-self.lr)

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name in self.params:
            out[f"m.{name}"] = self.m[name].detach().cpu().numpy().copy()
            out[f"v.{name}"] = self.v[name].detach().cpu().numpy().copy()
        return out

    def load_state_arrays(self, arrays: "OrderedDict[str, np.ndarray]", step: int) -> None:
        self.step_count = step
        for name, p in self.params.items():
            for slot, store in (("m", self.m), ("v", self.v)):
                key = f"{slot}.{name}"
                if key not in arrays:
                    raise DataError(f"optimizer state missing {key!r}")
                arr = arrays[key]
                if tuple(arr.shape) != tuple(p.shape):
                    raise DataError(f"optimizer state {key!r} shape {arr.shape} "
                                    f"!= parameter shape {tuple(p.shape)}")
                store[name] = torch.from_numpy(arr.copy())


def collect_trainables(encoder: EcgEncoder, ecg_head: ProjectionHead,
                       text_head: ProjectionHead, temperature: Temperature,
                       ) -> tuple["OrderedDict[str, nn.Parameter]", set[str]]:
    """Named trainable parameters plus the weight-decay exclusion set."""
    params: "OrderedDict[str, nn.Parameter]" = OrderedDict()
    no_decay: set[str] = set()
    norm_ids = {id(p) for mod in encoder.modules()
                if isinstance(mod, nn.BatchNorm1d)
                for p in mod.parameters(recurse=False)}
    for prefix, module in (("encoder", encoder), ("ecg_head", ecg_head),
                           ("text_head", text_head)):
        for key, p in module.named_parameters():
            name = f"{prefix}.{key}"
            params[name] = p
            if id(p) in norm_ids:
                no_decay.add(name)
    if not temperature.frozen:
        params["log_tau"] = temperature.log_tau
        no_decay.add("log_tau")
    return params, no_decay


@dataclass
class TrainState:
    config: TrainConfig
    encoder_config: EncoderConfig
    encoder: EcgEncoder
    ecg_head: ProjectionHead
    text_head: ProjectionHead
    temperature: Temperature
    optimizer: DecoupledAdam
    text_dim: int
    bank_sha256: str
    epoch: int = 0


def init_state(config: TrainConfig, text_dim: int, bank_sha256: str = "",
               encoder_config: EncoderConfig | None = None) -> TrainState:
    if encoder_config is None:
        encoder_config = EncoderConfig().scaled(config.width_factor)
    encoder, ecg_head, text_head = init_model(
        encoder_config, text_dim, config.proj_dim, seed=config.seed)
    temperature = Temperature(tau=config.tau_init, frozen=config.freeze_tau)
    params, no_decay = collect_trainables(encoder, ecg_head, text_head, temperature)
    opt = DecoupledAdam(params, no_decay, config.learning_rate, config.weight_decay,
                        config.beta1, config.beta2, config.eps)
    return TrainState(config=config, encoder_config=encoder_config, encoder=encoder,
                      ecg_head=ecg_head, text_head=text_head, temperature=temperature,
                      optimizer=opt, text_dim=text_dim, bank_sha256=bank_sha256)


def state_to_checkpoint(state: TrainState) -> Checkpoint:
    return Checkpoint(
        encoder_config=state.encoder_config,
        proj_dim=state.config.proj_dim,
        text_dim=state.text_dim,
        epoch=state.epoch,
        seed=state.config.seed,
        opt_step=state.optimizer.step_count,
        freeze_tau=state.config.freeze_tau,
        bank_sha256=state.bank_sha256,
        train_config=asdict(state.config),
        params=snapshot_params(state.encoder, state.ecg_head, state.text_head,
                               state.temperature),
        opt_state=state.optimizer.state_arrays(),
    )


def state_from_checkpoint(ckpt: Checkpoint) -> TrainState:
    config = TrainConfig(**ckpt.train_config)
    encoder, ecg_head, text_head, temperature = build_model(ckpt)
    params, no_decay = collect_trainables(encoder, ecg_head, text_head, temperature)
    opt = DecoupledAdam(params, no_decay, config.learning_rate, config.weight_decay,
                        config.beta1, config.beta2, config.eps)
    opt.load_state_arrays(ckpt.opt_state, ckpt.opt_step)
    return TrainState(config=config, encoder_config=ckpt.encoder_config,
                      encoder=encoder, ecg_head=ecg_head, text_head=text_head,
                      temperature=temperature, optimizer=opt, text_dim=ckpt.text_dim,
                      bank_sha256=ckpt.bank_sha256, epoch=ckpt.epoch)


def batch_loss(encoder: EcgEncoder, ecg_head: ProjectionHead,
               text_head: ProjectionHead, tau, x: torch.Tensor,
               text_vecs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Loss and similarity matrix for one (ECG batch, text batch) pairing."""
    e = project(ecg_head, encoder(x))
    t = project(text_head, text_vecs)
    S = similarity_matrix(t, e)
    return total_loss(S, tau), S


def _s_stats(S: torch.Tensor) -> str:
    S = S.detach()
    return (f"similarity stats: min={float(S.min()):.6g} max={float(S.max()):.6g} "
            f"mean={float(S.mean()):.6g} std={float(S.std()):.6g}")


def train_step(state: TrainState, records: Sequence[EcgRecord],
               label_table: LabelTable, bank: EmbeddingTable) -> float:
    """One optimizer update over a batch; returns the batch loss."""
    if len(records) < 2:
        raise DataError(f"contrastive step needs >= 2 records, got {len(records)}")
    labels = [label_table[r.label_index] for r in records]
    missing = sorted({lab for lab in labels if lab not in bank})
    if missing:
        raise DataError("labels missing from embedding bank: "
                        + ", ".join(repr(m) for m in missing))
    x = torch.from_numpy(np.stack([r.samples for r in records]))
    text_vecs = torch.from_numpy(np.stack([bank.lookup(lab) for lab in labels]))

    state.encoder.train()
    state.ecg_head.train()
    state.text_head.train()
    for p in state.optimizer.params.values():
        p.grad = None
    loss, S = batch_loss(state.encoder, state.ecg_head, state.text_head,
                         state.temperature.tau_tensor(), x, text_vecs)
    if not torch.isfinite(loss):
        raise NumericError(f"non-finite loss {float(loss)}; {_s_stats(S)}")
    loss.backward()
    grads = {name: p.grad for name, p in state.optimizer.params.items()}
    state.optimizer.step(grads)
    state.temperature.clamp_()
    return float(loss.detach())


def _require_valid(name: str, dataset: EcgDataset) -> None:
    violations = validate_dataset(dataset)
    if violations:
        raise DataError(f"{name} dataset invalid: " + "; ".join(violations[:5]))


def train(config: TrainConfig, train_set: EcgDataset, val_set: EcgDataset | None,
          bank: EmbeddingTable, out_dir,
          resume_from: Checkpoint | None = None) -> tuple[Checkpoint, list[dict]]:
    """Epoch loop with seeded reshuffling, incremental metrics, checkpoints.

    Batches smaller than 2 at the end of an epoch are dropped. Returns the
    final checkpoint and the per-epoch metrics records.
    """
    if config.num_threads > 0:
        torch.set_num_threads(config.num_threads)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    _require_valid("train", train_set)
    if val_set is not None and val_set.records:
        _require_valid("validation", val_set)
        assert_patient_disjoint(train_set, val_set)
    if len(train_set.records) < 2:
        raise DataError("training set needs at least 2 records")
    train_labels = {train_set.label_of(r) for r in train_set.records}
    missing = sorted(lab for lab in train_labels if lab not in bank)
    if missing:
        raise DataError("training labels missing from embedding bank: "
                        + ", ".join(repr(m) for m in missing))

    bank_hash = table_sha256(bank)
    if resume_from is not None:
        if resume_from.bank_sha256 and resume_from.bank_sha256 != bank_hash:
            raise DataError("checkpoint was trained against a different embedding bank")
        state = state_from_checkpoint(resume_from)
    else:
        state = init_state(config, bank.dim, bank_hash)

    metrics: list[dict] = []
    metrics_path = out_dir / METRICS_FILENAME
    ckpt_path = out_dir / CHECKPOINT_FILENAME
    log_mode = "a" if resume_from is not None else "w"
    n = len(train_set.records)

    with open(metrics_path, log_mode, encoding="utf-8") as log:
        for epoch in range(state.epoch, config.epochs):
            t_start = perf_counter()
            perm = np.random.default_rng([config.seed, epoch]).permutation(n)
            losses = []
            for start in range(0, n, config.batch_size):
                idx = perm[start:start + config.batch_size]
                if len(idx) < 2:
                    break
                recs = [train_set.records[i] for i in idx]
                losses.append(train_step(state, recs, train_set.label_table, bank))
            state.epoch = epoch + 1
            record = {
                "epoch": state.epoch,
                "loss": float(np.mean(losses)) if losses else None,
                "tau": state.temperature.tau,
                "val_top1": None,
                "val_top5": None,
                "seconds": perf_counter() - t_start,
            }
            run_val = (val_set is not None and val_set.records
                       and config.eval_every > 0
                       and state.epoch % config.eval_every == 0)
            if run_val:
                top1, top5 = topk_accuracy(state.encoder, state.ecg_head,
                                           state.text_head, val_set, bank)
                record["val_top1"], record["val_top5"] = top1, top5
            metrics.append(record)
            log.write(json.dumps(record, sort_keys=False) + "\n")
            log.flush()
            if config.checkpoint_every > 0 and state.epoch % config.checkpoint_every == 0:
                save_checkpoint(state_to_checkpoint(state), ckpt_path)
            if (config.target_top1 > 0 and record["val_top1"] is not None
                    and record["val_top1"] >= config.target_top1):
                break

    final = state_to_checkpoint(state)
    save_checkpoint(final, ckpt_path)
    return final, metrics


# ---------------------------------------------------------------------------
# Gradient verification against central finite differences.
# ---------------------------------------------------------------------------

@dataclass
class GradGroupReport:
    name: str
    checked: int
    max_rel_err: float


@dataclass
class GradCheckReport:
    groups: list[GradGroupReport] = field(default_factory=list)
    tolerance: float = 1e-4
    text_grad_free: bool = True

    @property
    def max_rel_err(self) -> float:
        return max((g.max_rel_err for g in self.groups), default=0.0)

    @property
    def passed(self) -> bool:
        return self.text_grad_free and self.max_rel_err < self.tolerance

    def summary(self) -> str:
        lines = [f"{'group':40s} {'checked':>7s} {'max rel err':>12s}"]
        for g in self.groups:
            lines.append(f"{g.name:40s} {g.checked:7d} {g.max_rel_err:12.3e}")
        lines.append(f"text vectors received gradient: {not self.text_grad_free}")
        lines.append(f"overall max rel err {self.max_rel_err:.3e} "
                     f"(tolerance {self.tolerance:.1e}) -> "
                     + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def grad_check(seed: int = 0, width_factor: float = 0.125, input_len: int = 500,
               batch_size: int = 4, text_dim: int = 32, proj_dim: int = 32,
               samples_per_group: int | None = 16, eps: float = 1e-6,
               tolerance: float = 1e-4,
               mutation: str | None = None) -> GradCheckReport:
    """Compare reverse-mode gradients of the training loss against central
    finite differences, in float64, on a width-reduced model.

    The step must sit inside the central-difference truncation regime: batch
    norm and the softmax give the loss strong curvature along conv-weight
    directions, so steps around 1e-3 measure a secant, not the derivative;
    1e-6 in float64 leaves truncation and cancellation errors orders of
    magnitude below the tolerance. An entry whose difference window happens to
    straddle a ReLU or max-pool kink is re-measured once at eps/10, which
    moves the kink outside the window except for vanishingly close ones.

    A bounded sample of entries per parameter tensor is checked (all entries
    when ``samples_per_group`` is None). ``mutation`` names a parameter
    substring whose analytic gradient gets scaled by 1.1 before comparison,
    for verifying that the check itself can fail.
    """
    rng = np.random.default_rng(seed)
    config = EncoderConfig(input_len=input_len).scaled(width_factor)
    encoder, ecg_head, text_head = init_model(config, text_dim, proj_dim, seed=seed)
    encoder.double()
    ecg_head.double()
    text_head.double()
    log_tau = torch.tensor(float(np.log(TAU_INIT)), dtype=torch.float64,
                           requires_grad=True)

    x = torch.from_numpy(
        rng.standard_normal((batch_size, config.in_leads, input_len)))
    text_vecs = torch.from_numpy(rng.standard_normal((batch_size, text_dim)))
    text_vecs.requires_grad_(False)

    temp = Temperature()
    params, _ = collect_trainables(encoder, ecg_head, text_head, temp)
    params.pop("log_tau", None)
    params["log_tau"] = log_tau

    def loss_value() -> torch.Tensor:
        return batch_loss(encoder, ecg_head, text_head, torch.exp(log_tau),
                          x, text_vecs)[0]

    encoder.train()
    for p in params.values():
        p.grad = None
    loss = loss_value()
    loss.backward()
    analytic = {name: p.grad.detach().clone() for name, p in params.items()}
    if mutation is not None:
        hits = [name for name in analytic if mutation in name]
        if not hits:
            raise DataError(f"mutation target {mutation!r} matches no parameter")
        analytic[hits[0]] = analytic[hits[0]] * 1.1

    report = GradCheckReport(tolerance=tolerance,
                             text_grad_free=text_vecs.grad is None)
    for name, p in params.items():
        flat = p.detach().reshape(-1)
        numel = flat.shape[0]
        if samples_per_group is None or samples_per_group >= numel:
            indices = np.arange(numel)
        else:
            indices = rng.choice(numel, size=samples_per_group, replace=False)
        worst = 0.0
        an_flat = analytic[name].reshape(-1)
        for idx in indices:
            idx = int(idx)
            orig = float(flat[idx])

            def central(step: float) -> float:
                with torch.no_grad():
                    flat[idx] = orig + step
                    plus = float(loss_value())
                    flat[idx] = orig - step
                    minus = float(loss_value())
                    flat[idx] = orig
                return (plus - minus) / (2.0 * step)

            an = float(an_flat[idx])
            err = _rel_err(central(eps), an)
            if err >= tolerance:
                err = min(err, _rel_err(central(eps / 10.0), an))
            worst = max(worst, err)
        report.groups.append(GradGroupReport(name, len(indices), worst))
    return report
