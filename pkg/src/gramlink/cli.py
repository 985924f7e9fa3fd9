"""Command-line entry point: ``gramlink {train,eval,graph,fixture,convert}``.

Exit codes are 0 on success, 2 for bad input (missing files, malformed data,
invalid config, vocabulary mismatch) and 1 for anything unexpected.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, dataset
from .config import PRESETS, RunConfig, read_config_file
from .errors import ConfigError, GramlinkError, UserInputError
from .evaluator import evaluate, format_table
from .model import LinkPredictor
from .ngram_graph import build_graph, graph_to_dot, graph_to_json, tokenize

log = logging.getLogger("gramlink")

EXIT_OK, EXIT_INTERNAL, EXIT_USER = 0, 1, 2

# flag dest -> TrainConfig key, for overrides that are only applied when given
_OVERRIDES = {
    "seed": "seed",
    "variant": "variant",
    "score_fn": "score_fn",
    "mask_mode": "mask_mode",
    "strategy": "strategy",
    "max_n": "max_n",
    "max_nodes": "max_nodes",
    "epochs": "epochs",
    "lr": "learning_rate",
    "batch_size": "batch_size",
    "dropout": "dropout",
    "label_smoothing": "label_smoothing",
    "d_model": "d_model",
    "n_heads": "n_heads",
    "n_layers": "n_layers",
    "d_ff": "d_ff",
    "patience": "patience",
    "edge_embeddings": "edge_embeddings",
    "keep": "keep",
}


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of config keys (a previous config.json works)")
    p.add_argument("--preset", choices=sorted(PRESETS), help="dataset profile applied before other settings")
    p.add_argument("--dataset", help="split directory")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=["full", "wng", "wg"])
    p.add_argument("--score-fn", choices=["transe", "distmult"])
    p.add_argument("--mask-mode", choices=["post", "post-renorm", "pre"])
    p.add_argument("--strategy", choices=["word_major", "level_major"])
    p.add_argument("--max-n", type=int)
    p.add_argument("--max-nodes", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--label-smoothing", type=float)
    p.add_argument("--d-model", type=int)
    p.add_argument("--n-heads", type=int)
    p.add_argument("--n-layers", type=int)
    p.add_argument("--d-ff", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--keep", choices=["best_dev", "last"], help="which epoch's parameters to save")
    p.add_argument("--edge-embeddings", help="tensor file with 'adjoin' and 'compositional' vectors")
    p.add_argument("--strip-prefix", action="store_true", default=None, help="drop a leading 'namespace:' from names")
    p.add_argument("--split-camel", action="store_true", default=None, help="split camelCase names into words")


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    """Defaults < preset < config file < command-line flags."""
    values = read_config_file(args.config) if args.config else {}
    if args.preset is not None:
        values["preset"] = args.preset
    for dest, key in _OVERRIDES.items():
        v = getattr(args, dest, None)
        if v is not None:
            values[key] = v
    for flag in ("strip_prefix", "split_camel"):
        if getattr(args, flag, None):
            values[flag] = True
    if args.dataset is not None:
        values["dataset"] = args.dataset
    if args.out is not None:
        values["out"] = args.out
    return RunConfig.from_dict(values)


def cmd_train(args: argparse.Namespace) -> int:
    from .trainer import train

    run = resolve_run_config(args)
    if not run.dataset:
        raise ConfigError("no dataset given (--dataset or 'dataset' in the config file)")
    if not run.out:
        raise ConfigError("no output directory given (--out or 'out' in the config file)")
    split = dataset.load(run.dataset)
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    run.write(out / "config.json")
    for w in split.warnings:
        log.warning("%s", w)

    def report(record):
        dev = "n/a" if record["dev_mrr"] is None else f"{record['dev_mrr']:.4f}"
        print(f"epoch {record['epoch']:4d}  loss {record['loss']:.5f}  dev MRR {dev}", flush=True)

    result = train(split, run.train, out_dir=out, on_epoch=None if args.quiet else report)
    print(f"best epoch {result.best_epoch}; checkpoint written to {out / 'checkpoint'}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    model = LinkPredictor.load(args.checkpoint)
    split = dataset.load(args.dataset)
    model.check_compatible(split)
    if args.split == "test":
        queries = split.test
    else:
        queries = [
            dataset.Query(t.head, t.relation, t.tail, tuple(model.entity_ids), split.relations[t.relation])
            for t in split.dev
        ]
    report = evaluate(queries, model)
    print(format_table(report.metrics), end="")
    out = Path(args.out) if args.out else Path(args.checkpoint)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(report.to_json(), encoding="utf-8", newline="\n")
    (out / "per_query.jsonl").write_text(report.records_jsonl(), encoding="utf-8", newline="\n")
    return EXIT_OK


def cmd_graph(args: argparse.Namespace) -> int:
    name = tokenize(args.text, args.strip_prefix, args.split_camel)
    graph = build_graph(name, args.max_n, args.strategy, args.max_nodes)
    text = graph_to_dot(graph) if args.format == "dot" else graph_to_json(graph)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_fixture(args: argparse.Namespace) -> int:
    split = dataset.synth_fixture(
        seed=args.seed,
        out_dir=args.out,
        n_entities=args.n_entities,
        n_seen=args.n_seen,
        n_unseen=args.n_unseen,
        triples_per_relation=args.triples_per_relation,
        candidates=args.candidates,
    )
    print(
        f"wrote {args.out}: {len(split.entities)} entities, {len(split.relations)} relations, "
        f"{len(split.train)} train, {len(split.dev)} dev, {len(split.test)} test queries"
    )
    return EXIT_OK


def cmd_convert(args: argparse.Namespace) -> int:
    counts = dataset.convert_zsgan(args.src, args.out, args.n_seen, args.n_unseen, args.seed)
    print(json.dumps(counts, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gramlink", description="Zero-shot link prediction from relation surface names.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a split and write a checkpoint")
    _add_model_flags(p)
    p.add_argument("-q", "--quiet", action="store_true", help="no per-epoch lines")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank test queries with a trained checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory written by 'train'")
    p.add_argument("--dataset", required=True, help="split directory")
    p.add_argument("--split", choices=["test", "dev"], default="test")
    p.add_argument("--out", help="where to write metrics.json and per_query.jsonl (default: the checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("graph", help="print the n-gram graph of a relation name")
    p.add_argument("text", help="relation surface name")
    p.add_argument("--strategy", choices=["word_major", "level_major"], default="level_major")
    p.add_argument("--max-n", type=int, default=13)
    p.add_argument("--max-nodes", type=int)
    p.add_argument("--format", choices=["json", "dot"], default="json")
    p.add_argument("--output", "-o", help="write to a file instead of stdout")
    p.add_argument("--strip-prefix", action="store_true")
    p.add_argument("--split-camel", action="store_true")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("fixture", help="write the synthetic zero-shot split")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-entities", type=int, default=50)
    p.add_argument("--n-seen", type=int, default=8)
    p.add_argument("--n-unseen", type=int, default=2)
    p.add_argument("--triples-per-relation", type=int, default=40)
    p.add_argument("--candidates", type=int, default=20)
    p.set_defaults(func=cmd_fixture)

    p = sub.add_parser("convert", help="convert NELL-ZS / Wiki-ZS JSON files to the native layout")
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-seen", type=int)
    p.add_argument("--n-unseen", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UserInputError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USER
    except GramlinkError as exc:
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (ValueError, OSError) as exc:
        # malformed sizes or an unwritable directory are still the caller's input
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
