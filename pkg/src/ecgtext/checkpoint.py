"""CKP1 checkpoint format: everything needed to resume training bit-exactly.

Layout (little-endian): magic "CKP1", u32 version=1, then three sections in
fixed order, each ``u16 name-length + name | u64 payload-length + payload``:

    meta    canonical JSON: epoch, seed, optimizer step, bank hash, config
    params  tensor table: encoder weights/buffers, both heads, log_tau
    opt     tensor table: first/second-moment accumulators, one pair per
            trainable parameter

Tensor table encoding: u32 count, then per tensor u16 name-length + name,
u8 dtype code (0=f32, 1=f64, 2=i64), u8 ndim, u32 per dim, u64 byte length,
raw little-endian data. Arrays are stored in insertion order so a load/save
round trip reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import torch

from .contrastive import Temperature
from .data import _Cursor
from .encoder import EcgEncoder, EncoderConfig, ProjectionHead, init_model
from .errors import DataError, FormatError

CKP_MAGIC = b"CKP1"
CKP_VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


def _write_tensor_table(tensors: "OrderedDict[str, np.ndarray]") -> bytes:
    parts = [struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _DTYPE_CODES:
            raise DataError(f"unsupported tensor dtype {arr.dtype} for {name!r}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
        parts.append(struct.pack("<Q", len(payload)))
        parts.append(payload)
    return b"".join(parts)


def _read_tensor_table(cur: _Cursor) -> "OrderedDict[str, np.ndarray]":
    (count,) = cur.unpack("<I", "tensor count")
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for i in range(count):
        (name_len,) = cur.unpack("<H", f"tensor {i} name length")
        name = cur.take(name_len, f"tensor {i} name").decode("utf-8")
        code, ndim = cur.unpack("<BB", f"tensor {name!r} header")
        if code not in _DTYPES:
            raise FormatError(f"unknown dtype code {code} for tensor {name!r}",
                              offset=cur.off - 2)
        shape = cur.unpack(f"<{ndim}I", f"tensor {name!r} shape")
        (nbytes,) = cur.unpack("<Q", f"tensor {name!r} byte length")
        dtype = _DTYPES[code]
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        if nbytes != expected:
            raise FormatError(
                f"tensor {name!r}: payload {nbytes} bytes, shape implies {expected}",
                offset=cur.off - 8)
        raw = cur.take(nbytes, f"tensor {name!r} data")
        out[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return out


@dataclass
class Checkpoint:
    encoder_config: EncoderConfig
    proj_dim: int
    text_dim: int
    epoch: int
    seed: int
    opt_step: int
    freeze_tau: bool
    bank_sha256: str
    train_config: dict
    params: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    opt_state: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)


def _meta_dict(ckpt: Checkpoint) -> dict:
    cfg = ckpt.encoder_config
    return {
        "bank_sha256": ckpt.bank_sha256,
        "encoder_config": {
            "in_leads": cfg.in_leads,
            "input_len": cfg.input_len,
            "stage_blocks": list(cfg.stage_blocks),
            "stage_channels": list(cfg.stage_channels),
            "stem_kernel": cfg.stem_kernel,
            "block_kernel": cfg.block_kernel,
        },
        "epoch": ckpt.epoch,
        "freeze_tau": ckpt.freeze_tau,
        "opt_step": ckpt.opt_step,
        "proj_dim": ckpt.proj_dim,
        "seed": ckpt.seed,
        "text_dim": ckpt.text_dim,
        "train_config": ckpt.train_config,
    }


def _section(name: str, payload: bytes) -> bytes:
    raw = name.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw + struct.pack("<Q", len(payload)) + payload


def checkpoint_to_bytes(ckpt: Checkpoint) -> bytes:
    meta = json.dumps(_meta_dict(ckpt), sort_keys=True, ensure_ascii=False,
                      separators=(",", ":")).encode("utf-8")
    return b"".join([
        CKP_MAGIC,
        struct.pack("<I", CKP_VERSION),
        _section("meta", meta),
        _section("params", _write_tensor_table(ckpt.params)),
        _section("opt", _write_tensor_table(ckpt.opt_state)),
    ])


def checkpoint_from_bytes(buf: bytes) -> Checkpoint:
    cur = _Cursor(buf)
    magic = cur.take(4, "magic")
    if magic != CKP_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CKP_MAGIC!r}", offset=0)
    (version,) = cur.unpack("<I", "version")
    if version != CKP_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    sections = {}
    for expected in ("meta", "params", "opt"):
        (name_len,) = cur.unpack("<H", "section name length")
        name = cur.take(name_len, "section name").decode("utf-8")
        if name != expected:
            raise FormatError(f"expected section {expected!r}, found {name!r}",
                              offset=cur.off - name_len)
        (payload_len,) = cur.unpack("<Q", f"section {name!r} length")
        sections[name] = cur.take(payload_len, f"section {name!r}")
    cur.expect_end("opt section")

    try:
        meta = json.loads(sections["meta"].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"invalid meta JSON: {exc}")
    ec = meta["encoder_config"]
    config = EncoderConfig(
        in_leads=ec["in_leads"], input_len=ec["input_len"],
        stage_blocks=tuple(ec["stage_blocks"]),
        stage_channels=tuple(ec["stage_channels"]),
        stem_kernel=ec["stem_kernel"], block_kernel=ec["block_kernel"])
    params = _read_tensor_table(_Cursor(sections["params"]))
    opt_state = _read_tensor_table(_Cursor(sections["opt"]))
    return Checkpoint(
        encoder_config=config, proj_dim=meta["proj_dim"], text_dim=meta["text_dim"],
        epoch=meta["epoch"], seed=meta["seed"], opt_step=meta["opt_step"],
        freeze_tau=meta["freeze_tau"], bank_sha256=meta["bank_sha256"],
        train_config=meta["train_config"], params=params, opt_state=opt_state)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    with open(path, "wb") as f:
        f.write(checkpoint_to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        return checkpoint_from_bytes(f.read())


def snapshot_params(encoder: EcgEncoder, ecg_head: ProjectionHead,
                    text_head: ProjectionHead,
                    temperature: Temperature) -> "OrderedDict[str, np.ndarray]":
    """Flatten model state (weights and norm buffers) into named numpy arrays."""
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for prefix, module in (("encoder", encoder), ("ecg_head", ecg_head),
                           ("text_head", text_head)):
        for key, value in module.state_dict().items():
            out[f"{prefix}.{key}"] = value.detach().cpu().numpy().copy()
    out["log_tau"] = temperature.log_tau.detach().cpu().numpy().reshape(())
    return out


def build_model(ckpt: Checkpoint) -> tuple[EcgEncoder, ProjectionHead, ProjectionHead, Temperature]:
    """Reconstruct modules from a checkpoint's tensors."""
    encoder, ecg_head, text_head = init_model(
        ckpt.encoder_config, ckpt.text_dim, ckpt.proj_dim, seed=ckpt.seed)
    temperature = Temperature(frozen=ckpt.freeze_tau)
    groups: dict[str, dict[str, torch.Tensor]] = {"encoder": {}, "ecg_head": {}, "text_head": {}}
    for name, arr in ckpt.params.items():
        if name == "log_tau":
            with torch.no_grad():
                temperature.log_tau.copy_(torch.from_numpy(arr.copy()))
            continue
        prefix, _, key = name.partition(".")
        if prefix not in groups:
            raise FormatError(f"unknown parameter group {prefix!r} in checkpoint")
        groups[prefix][key] = torch.from_numpy(arr.copy())
    for prefix, module in (("encoder", encoder), ("ecg_head", ecg_head),
                           ("text_head", text_head)):
        module.load_state_dict(groups[prefix], strict=True)
    return encoder, ecg_head, text_head, temperature
