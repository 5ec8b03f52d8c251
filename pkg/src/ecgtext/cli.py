"""Command-line pipeline: generate data, build banks, train, evaluate, inspect.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.
Every command prints its resolved configuration before doing work, so a run is
reproducible from its own output plus the input files.
"""

from __future__ import annotations

import argparse
import json
import struct
import sys
from pathlib import Path

from . import checkpoint as ckpt_io
from .data import EDS_MAGIC, load_dataset, save_dataset
from .errors import DataError, EcgTextError, NumericError
from .synth import default_suite, gen_dataset
from .textbank import (ETB_MAGIC, build_bank, load_table, save_table)
from .train import TrainConfig, grad_check, train
from .zeroshot import (MITBIH_LABELS, RHYTHM_LABELS, SUPERCLASS_LABELS,
                       TASK_NAMES, default_mapping_path, eval_task,
                       load_mapping, render_report)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _print_config(command: str, values: dict) -> None:
    print(f"resolved config ({command}):")
    for key in sorted(values):
        print(f"  {key} = {values[key]}")


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise DataError(f"truncated file while reading {what}")
    return buf


def _cmd_gen_synth(args) -> int:
    suite = default_suite()
    if not (1 <= args.classes <= len(suite)):
        raise UsageError(f"--classes must be in [1, {len(suite)}]")
    _print_config("gen-synth", {"out": args.out, "classes": args.classes,
                                "per_class": args.per_class,
                                "patients_per_class": args.patients_per_class,
                                "seed": args.seed,
                                "first_patient_id": args.first_patient_id})
    dataset = gen_dataset(suite[:args.classes], args.per_class,
                          args.patients_per_class, args.seed,
                          first_patient_id=args.first_patient_id)
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset.records)} records, "
          f"{len(dataset.label_table)} labels -> {args.out}")
    return 0


def _labels_from_file(path: str) -> list[str]:
    with open(path, "rb") as f:
        head = f.read(4)
    if head == EDS_MAGIC:
        return list(load_dataset(path).label_table.labels)
    with open(path, "r", encoding="utf-8") as f:
        labels = [ln.strip() for ln in f if ln.strip() and not ln.startswith("#")]
    if not labels:
        raise DataError(f"no labels found in {path}")
    return labels


def _cmd_make_bank(args) -> int:
    _print_config("make-bank", {"labels_from": args.labels_from,
                                "import": args.import_table, "dim": args.dim,
                                "seed": args.seed, "out": args.out,
                                "with_superset_labels": args.with_superset_labels})
    if (args.import_table is None) == (args.labels_from is None):
        raise UsageError("provide exactly one of --labels-from or --import")
    if args.import_table is not None:
        table = load_table(args.import_table)
    else:
        labels = _labels_from_file(args.labels_from)
        if args.with_superset_labels:
            for extra in SUPERCLASS_LABELS + RHYTHM_LABELS + MITBIH_LABELS:
                if extra not in labels:
                    labels.append(extra)
        table = build_bank(labels, args.dim, args.seed)
    save_table(table, args.out)
    print(f"wrote embedding table: {len(table)} entries, dim {table.dim} -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = TrainConfig(
        learning_rate=args.lr, weight_decay=args.weight_decay,
        batch_size=args.batch, epochs=args.epochs, seed=args.seed,
        width_factor=args.width_factor, proj_dim=args.proj_dim,
        tau_init=args.tau_init, freeze_tau=args.freeze_tau,
        eval_every=args.eval_every, checkpoint_every=args.checkpoint_every,
        target_top1=args.target_top1, num_threads=args.threads)
    shown = {"data": args.data, "val_data": args.val_data, "bank": args.bank,
             "out_dir": args.out_dir, "resume": args.resume}
    shown.update({k: getattr(config, k) for k in (
        "learning_rate", "weight_decay", "batch_size", "epochs", "seed",
        "width_factor", "proj_dim", "tau_init", "freeze_tau", "eval_every",
        "checkpoint_every", "target_top1", "num_threads")})
    _print_config("train", shown)
    train_set = load_dataset(args.data)
    val_set = load_dataset(args.val_data) if args.val_data else None
    bank = load_table(args.bank)
    resume = ckpt_io.load_checkpoint(args.resume) if args.resume else None
    final, metrics = train(config, train_set, val_set, bank, args.out_dir,
                           resume_from=resume)
    for rec in metrics:
        print(json.dumps(rec, sort_keys=False))
    print(f"final checkpoint (epoch {final.epoch}) -> "
          f"{Path(args.out_dir) / 'checkpoint.ckpt'}")
    return 0


def _cmd_eval(args) -> int:
    _print_config("eval", {"checkpoint": args.checkpoint, "data": args.data,
                           "bank": args.bank, "mapping": args.mapping or "(builtin)",
                           "task": args.task, "topk": args.topk, "out": args.out})
    ckpt = ckpt_io.load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    bank = load_table(args.bank)
    mapping = load_mapping(args.mapping) if args.mapping else load_mapping()
    report = eval_task(ckpt, dataset, bank, mapping, args.task, topk=args.topk)
    text = render_report(report, args.out)
    print(text, end="")
    return 0


def _cmd_grad_check(args) -> int:
    _print_config("grad-check", {"seed": args.seed,
                                 "samples_per_group": args.samples_per_group,
                                 "tolerance": args.tolerance})
    report = grad_check(seed=args.seed, samples_per_group=args.samples_per_group,
                        tolerance=args.tolerance)
    print(report.summary())
    if not report.passed:
        raise NumericError(f"gradient check failed: max rel err {report.max_rel_err:.3e}")
    return 0


def _cmd_inspect(args) -> int:
    _print_config("inspect", {"file": args.file})
    with open(args.file, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic == EDS_MAGIC:
            version, rate = struct.unpack("<If", _read_exact(f, 8, "header"))
            (label_count,) = struct.unpack("<I", _read_exact(f, 4, "label count"))
            labels = []
            for i in range(label_count):
                (n,) = struct.unpack("<H", _read_exact(f, 2, f"label {i} length"))
                labels.append(_read_exact(f, n, f"label {i}").decode("utf-8"))
            (record_count,) = struct.unpack("<I", _read_exact(f, 4, "record count"))
            print("format = EDS1")
            print(f"version = {version}")
            print(f"sampling_rate_hz = {rate}")
            print(f"label_count = {label_count}")
            print(f"record_count = {record_count}")
            for lab in labels[:10]:
                print(f"label: {lab}")
            if label_count > 10:
                print(f"... {label_count - 10} more labels")
        elif magic == ETB_MAGIC:
            version, entry_count, dim = struct.unpack("<III", _read_exact(f, 12, "header"))
            print("format = ETB1")
            print(f"version = {version}")
            print(f"entry_count = {entry_count}")
            print(f"dim = {dim}")
        elif magic == ckpt_io.CKP_MAGIC:
            (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, "section name length"))
            section = _read_exact(f, name_len, "section name").decode("utf-8")
            if section != "meta":
                raise DataError(f"expected leading meta section, found {section!r}")
            (payload_len,) = struct.unpack("<Q", _read_exact(f, 8, "section length"))
            meta = json.loads(_read_exact(f, payload_len, "meta payload"))
            print("format = CKP1")
            print(f"version = {version}")
            for key in ("epoch", "seed", "opt_step", "proj_dim", "text_dim",
                        "freeze_tau", "bank_sha256"):
                print(f"{key} = {meta[key]}")
            print(f"encoder_config = {json.dumps(meta['encoder_config'], sort_keys=True)}")
        else:
            raise DataError(f"unrecognized magic {magic!r}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="ecgtext", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synth", help="generate a synthetic EDS1 dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--per-class", type=int, default=250)
    p.add_argument("--patients-per-class", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--first-patient-id", type=int, default=1,
                   help="offset the patient id range so separately generated "
                        "cohorts stay patient-disjoint")
    p.set_defaults(func=_cmd_gen_synth)

    p = sub.add_parser("make-bank", help="build or import an ETB1 embedding table")
    p.add_argument("--labels-from", help="EDS1 file or newline-separated label list")
    p.add_argument("--import", dest="import_table",
                   help="existing ETB1 file to validate and copy")
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--with-superset-labels", action="store_true",
                   help="also embed the zero-shot superset vocabularies")
    p.set_defaults(func=_cmd_make_bank)

    p = sub.add_parser("train", help="contrastive training run")
    p.add_argument("--data", required=True)
    p.add_argument("--val-data")
    p.add_argument("--bank", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width-factor", type=float, default=1.0)
    p.add_argument("--proj-dim", type=int, default=256)
    p.add_argument("--tau-init", type=float, default=0.07)
    p.add_argument("--freeze-tau", action="store_true")
    p.add_argument("--eval-every", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--target-top1", type=float, default=0.0)
    p.add_argument("--threads", type=int, default=0)
    p.add_argument("--resume", help="checkpoint file to continue from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a task")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--mapping", help=f"default: {default_mapping_path()}")
    p.add_argument("--task", choices=TASK_NAMES, default="finegrained")
    p.add_argument("--topk", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples-per-group", type=int, default=16)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser("inspect", help="print the header of an EDS1/ETB1/CKP1 file")
    p.add_argument("--file", required=True)
    p.set_defaults(func=_cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except EcgTextError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
