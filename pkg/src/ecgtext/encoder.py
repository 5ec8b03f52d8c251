"""Trainable ECG encoder: an 18-layer 1-D residual network plus linear heads.

Input records are standardized per lead per record (subtract mean, divide by
std + 1e-6) before the stem, so raw amplitude units never matter; a flat lead
standardizes to zeros. The stem is conv(stride 2) -> batch norm -> ReLU ->
max-pool(k=3, stride 2); four stages of two basic residual blocks follow, the
entry block of stages 2..4 downsampling by stride 2 with a 1x1-conv shortcut.
Global average pooling over time yields one feature vector per record.

All convolutions use odd kernels with symmetric padding, so every stride-2
layer maps length L to ceil(L / 2); 5000 input samples reach the pooling stage
at 157 time steps.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch
from torch import nn

from .errors import DataError

STANDARDIZE_EPS = 1e-6


@dataclass(frozen=True)
class EncoderConfig:
    in_leads: int = 12
    input_len: int = 5000
    stage_blocks: tuple[int, ...] = (2, 2, 2, 2)
    stage_channels: tuple[int, ...] = (64, 128, 256, 512)
    stem_kernel: int = 15
    block_kernel: int = 7

    def __post_init__(self):
        if self.in_leads < 1 or self.input_len < 1:
            raise DataError("in_leads and input_len must be positive")
        if len(self.stage_blocks) != len(self.stage_channels) or not self.stage_blocks:
            raise DataError("stage_blocks and stage_channels must align and be non-empty")
        if any(b < 1 for b in self.stage_blocks) or any(c < 1 for c in self.stage_channels):
            raise DataError("stage sizes must be positive")
        for k in (self.stem_kernel, self.block_kernel):
            if k < 1 or k % 2 == 0:
                raise DataError(f"kernel sizes must be odd and positive, got {k}")

    @property
    def feature_dim(self) -> int:
        return self.stage_channels[-1]

    def scaled(self, width_factor: float) -> "EncoderConfig":
        """Shrink or grow every stage width; used for desk-scale tests."""
        if not (width_factor > 0):
            raise DataError(f"width factor must be positive, got {width_factor}")
        chans = tuple(max(1, round(c * width_factor)) for c in self.stage_channels)
        return replace(self, stage_channels=chans)


def standardize(x: torch.Tensor) -> torch.Tensor:
    """Per-record per-lead zero mean, unit std; flat leads become all zeros."""
    mean = x.mean(dim=-1, keepdim=True)
    std = x.std(dim=-1, keepdim=True, unbiased=False)
    return (x - mean) / (std + STANDARDIZE_EPS)


class BasicBlock1d(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int):
        super().__init__()
        pad = (kernel - 1) // 2
        self.conv1 = nn.Conv1d(in_ch, out_ch, kernel, stride=stride, padding=pad, bias=False)
        self.bn1 = nn.BatchNorm1d(out_ch)
        self.conv2 = nn.Conv1d(out_ch, out_ch, kernel, stride=1, padding=pad, bias=False)
        self.bn2 = nn.BatchNorm1d(out_ch)
        self.downsample = None
        if stride != 1 or in_ch != out_ch:
            self.downsample = nn.Sequential(
                nn.Conv1d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm1d(out_ch),
            )

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = torch.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return torch.relu(out + identity)


class EcgEncoder(nn.Module):
    """Maps a (B, leads, input_len) batch to (B, feature_dim) embeddings."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        c0 = config.stage_channels[0]
        self.stem_conv = nn.Conv1d(config.in_leads, c0, config.stem_kernel,
                                   stride=2, padding=(config.stem_kernel - 1) // 2,
                                   bias=False)
        self.stem_bn = nn.BatchNorm1d(c0)
        self.stem_pool = nn.MaxPool1d(3, stride=2, padding=1)
        stages = []
        in_ch = c0
        for i, (blocks, out_ch) in enumerate(zip(config.stage_blocks, config.stage_channels)):
            layer = []
            for j in range(blocks):
                stride = 2 if (i > 0 and j == 0) else 1
                layer.append(BasicBlock1d(in_ch, out_ch, config.block_kernel, stride))
                in_ch = out_ch
            stages.append(nn.Sequential(*layer))
        self.stages = nn.ModuleList(stages)

    def _check_input(self, x: torch.Tensor) -> None:
        cfg = self.config
        if x.dim() != 3 or x.shape[1] != cfg.in_leads or x.shape[2] != cfg.input_len:
            raise DataError(
                f"expected (B, {cfg.in_leads}, {cfg.input_len}) input, got {tuple(x.shape)}")

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Pre-pooling feature map, shape (B, feature_dim, T)."""
        self._check_input(x)
        x = standardize(x)
        x = self.stem_pool(torch.relu(self.stem_bn(self.stem_conv(x))))
        for stage in self.stages:
            x = stage(x)
        return x

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.features(x).mean(dim=-1)


class ProjectionHead(nn.Linear):
    """Linear map y = Wx + b into the shared text/ECG comparison space."""


def project(head: ProjectionHead, x) -> torch.Tensor:
    x = torch.as_tensor(x)
    if x.shape[-1] != head.in_features:
        raise DataError(
            f"projection expects last dim {head.in_features}, got {x.shape[-1]}")
    return head(x.to(head.weight.dtype))


def _fan_in_uniform_(tensor: torch.Tensor, fan_in: int, gen: torch.Generator) -> None:
    bound = 1.0 / (fan_in ** 0.5)
    with torch.no_grad():
        tensor.uniform_(-bound, bound, generator=gen)


def init_encoder(config: EncoderConfig, seed: int) -> EcgEncoder:
    """Deterministic init: fan-in-scaled uniform convs, identity-affine norms."""
    enc = EcgEncoder(config)
    gen = torch.Generator().manual_seed(seed)
    for module in enc.modules():
        if isinstance(module, nn.Conv1d):
            fan_in = module.in_channels * module.kernel_size[0]
            _fan_in_uniform_(module.weight, fan_in, gen)
        elif isinstance(module, nn.BatchNorm1d):
            with torch.no_grad():
                module.weight.fill_(1.0)
                module.bias.fill_(0.0)
    return enc


def init_head(in_dim: int, proj_dim: int, seed: int) -> ProjectionHead:
    if in_dim < 1 or proj_dim < 1:
        raise DataError("projection dimensions must be positive")
    head = ProjectionHead(in_dim, proj_dim)
    gen = torch.Generator().manual_seed(seed)
    _fan_in_uniform_(head.weight, in_dim, gen)
    with torch.no_grad():
        head.bias.zero_()
    return head


def init_model(config: EncoderConfig, text_dim: int, proj_dim: int,
               seed: int) -> tuple[EcgEncoder, ProjectionHead, ProjectionHead]:
    """Encoder plus (ecg_head, text_head), all deterministic in the seed."""
    enc = init_encoder(config, seed)
    ecg_head = init_head(config.feature_dim, proj_dim, seed + 1)
    text_head = init_head(text_dim, proj_dim, seed + 2)
    return enc, ecg_head, text_head
