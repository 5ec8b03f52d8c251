"""Command line for the embedding exporter.

``run`` mirrors the export job fields; ``make-tiny-model`` builds a small
local stand-in checkpoint for environments without access to a real one.
Exit codes: 0 success, 1 usage error, 2 export/data error.
"""

from __future__ import annotations

import argparse
import sys

from .exporter import DEFAULT_TEMPLATE, POOLINGS, ExportError, ExportJob, export
from .tinylm import build_tiny_model_dir


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _read_labels(path: str) -> tuple[str, ...]:
    with open(path, "r", encoding="utf-8") as f:
        labels = tuple(ln.strip() for ln in f
                       if ln.strip() and not ln.startswith("#"))
    if not labels:
        raise ExportError(f"no labels found in {path}")
    return labels


def _cmd_run(args) -> int:
    labels = _read_labels(args.labels_from)
    job = ExportJob(model=args.model, labels=labels, out=args.out,
                    template=args.template, pooling=args.pooling)
    print("resolved config (run):")
    for key in ("model", "out", "template", "pooling"):
        print(f"  {key} = {getattr(job, key)}")
    print(f"  labels = {len(labels)} from {args.labels_from}")
    out = export(job)
    print(f"wrote {len(labels)} embeddings -> {out}")
    return 0


def _cmd_make_tiny_model(args) -> int:
    corpus = list(_read_labels(args.labels_from)) + [DEFAULT_TEMPLATE]
    print("resolved config (make-tiny-model):")
    for key in ("out", "hidden_size", "seed"):
        print(f"  {key} = {getattr(args, key)}")
    path = build_tiny_model_dir(args.out, corpus, hidden_size=args.hidden_size,
                                seed=args.seed)
    print(f"wrote tiny model -> {path}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="ecgtext-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="export label prompt embeddings to ETB1")
    p.add_argument("--model", required=True,
                   help="pretrained model id or local directory")
    p.add_argument("--labels-from", required=True,
                   help="newline-separated label list")
    p.add_argument("--out", required=True)
    p.add_argument("--template", default=DEFAULT_TEMPLATE)
    p.add_argument("--pooling", choices=POOLINGS, default="last_token")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("make-tiny-model",
                       help="build a local stand-in checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--labels-from", required=True)
    p.add_argument("--hidden-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_make_tiny_model)

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
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ExportError as exc:
        print(f"export error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
