"""Command-line entry point: ingest, stats, split, train, evaluate, predict, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

import argparse
import json
import os
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

from . import corpus, ndcompute as nd
from .errors import (BadTarget, ConfigError, DivergedLoss, EmptyLoss,
                     GuwenError, NotScalar, ShapeMismatch, VocabMismatch,
                     WindowTooSmall)
from .model import (format_index_string, load_model, model_gradcheck,
                    predict_labels, restore_text)
from .preprocess import (SplitSpec, Vocab, default_inventory, encode,
                         load_inventory, split_dataset, strip_punctuation)
from .train_eval import (TrainConfig, evaluate_checkpoint, render_report,
                         report_to_json, train)

USAGE_ERROR = 1
DATA_ERROR = 2
NUMERIC_ERROR = 3

GRADCHECK_TOLERANCE = 1e-4

_TRAIN_KEYS = {f.name for f in dataclass_fields(TrainConfig)}
_CONFIG_KEYS = _TRAIN_KEYS | {"data", "out_dir", "inventory", "genre_table", "threads"}

_NUMERIC_ERRORS = (DivergedLoss, NotScalar, BadTarget, EmptyLoss,
                   ShapeMismatch, WindowTooSmall)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write("error: %s\n" % message)
        raise _UsageError(message)


def _default_threads():
    try:
        return max(1, int(os.environ.get("GUWEN_THREADS", "1")))
    except ValueError:
        return 1


def load_config(path) -> dict:
    """Flat JSON config; unknown keys are rejected, paths checked up front."""
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(cfg) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError("unknown config keys: %s" % ", ".join(unknown))
    for key in ("data", "inventory"):
        if cfg.get(key) and not Path(cfg[key]).exists():
            raise ConfigError("config %s path does not exist: %s" % (key, cfg[key]))
    return cfg


def _inventory_from(path):
    return load_inventory(path) if path else default_inventory()


def build_parser() -> _Parser:
    parser = _Parser(prog="guwenpunct",
                     description="Punctuation restoration toolkit for ancient Chinese text")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("ingest", help="parse corpus JSON files into a JSONL dataset")
    p.add_argument("--src", required=True, help="directory of chinese-poetry JSON files")
    p.add_argument("--out", required=True, help="output dataset.jsonl path")
    p.add_argument("--inventory", help="punctuation inventory override (JSON)")
    p.add_argument("--config", help="config file supplying genre_table overrides")
    p.add_argument("--threads", type=int, default=_default_threads())
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", help="corpus statistics for a JSONL dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--inventory")
    p.add_argument("--json", action="store_true", help="emit JSON instead of text")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("split", help="seeded train/test split")
    p.add_argument("--data", required=True)
    p.add_argument("--fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", help="defaults to the dataset directory")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a tagger")
    p.add_argument("--config", help="flat JSON config; flags override it")
    p.add_argument("--data", help="training dataset (JSONL)")
    p.add_argument("--out-dir", help="where to write checkpoint/vocab/loss.csv")
    p.add_argument("--task", choices=("binary", "4class"))
    p.add_argument("--model", choices=("baseline", "core"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--d-e", type=int)
    p.add_argument("--d-h", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--rebalance", choices=("none", "oversample_minority", "undersample_majority"))
    p.add_argument("--inventory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", help="defaults to vocab.json next to the checkpoint")
    p.add_argument("--inventory")
    p.add_argument("--json", metavar="PATH", help="also write the report as JSON ('-' for stdout)")
    p.add_argument("--threads", type=int, default=_default_threads())
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="restore punctuation for text")
    p.add_argument("--ckpt", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--text", help="one line of text")
    group.add_argument("--file", help="file with one line per prediction")
    p.add_argument("--vocab", help="defaults to vocab.json next to the checkpoint")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of the tiny f64 models")
    p.add_argument("--model", choices=("baseline", "core", "both"), default="both")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coords", type=int, default=6,
                   help="max coordinates checked per tensor")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def cmd_ingest(args):
    inv = _inventory_from(args.inventory)
    genre_table = None
    if args.config:
        genre_table = load_config(args.config).get("genre_table")
    sources = corpus.discover_sources(args.src, genre_table)
    if not sources:
        raise corpus.MalformedSource("no .json files under %s" % args.src)
    records = corpus.ingest(sources, inv, threads=max(1, args.threads))
    corpus.write_jsonl(records, args.out)
    counts = corpus.genre_counts(records)
    print("ingested %d records from %d sources -> %s" % (len(records), len(sources), args.out))
    print("genres: " + ", ".join("%s=%d" % (g, n) for g, n in counts.items()))
    return 0


def cmd_stats(args):
    records = corpus.read_jsonl(args.data)
    stats = corpus.corpus_stats(records, _inventory_from(args.inventory))
    if args.json:
        print(json.dumps(stats.to_dict(), ensure_ascii=False, sort_keys=True, indent=2))
        return 0
    print("records:      %d" % stats.record_count)
    print("genres:       " + ", ".join("%s=%d" % kv for kv in stats.per_genre_counts.items()))
    print("characters:   %d" % stats.char_count)
    print("punctuation:  %d  (ratio %.4f)" % (stats.punct_count, stats.punct_ratio))
    print("class shares: " + ", ".join("%s=%.4f" % kv for kv in stats.per_class_ratio.items()))
    print("marks:        " + ", ".join("%s=%d" % kv for kv in stats.per_mark_counts.items()))
    return 0


def cmd_split(args):
    records = corpus.read_jsonl(args.data)
    spec = SplitSpec(train_fraction=args.fraction, seed=args.seed)
    train_recs, test_recs = split_dataset(records, spec)
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.data).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus.write_jsonl(train_recs, out_dir / "train.jsonl")
    corpus.write_jsonl(test_recs, out_dir / "test.jsonl")
    manifest = {
        "seed": args.seed,
        "fraction": args.fraction,
        "n_total": len(records),
        "n_train": len(train_recs),
        "n_test": len(test_recs),
        "train_file": "train.jsonl",
        "test_file": "test.jsonl",
    }
    with open(out_dir / "split_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")
    print("split %d records -> %d train / %d test (fraction %.3f, seed %d)"
          % (len(records), len(train_recs), len(test_recs), args.fraction, args.seed))
    return 0


_TRAIN_FLAGS = ("task", "model", "epochs", "batch_size", "lr", "seed", "d_e",
                "d_h", "heads", "dropout", "window", "rebalance")


def cmd_train(args):
    cfg_map = load_config(args.config) if args.config else {}
    for name in _TRAIN_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            cfg_map[name] = value
    data_path = args.data or cfg_map.get("data")
    if not data_path:
        raise ConfigError("train needs --data or a config with a data entry")
    out_dir = args.out_dir or cfg_map.get("out_dir") or "run"
    inv = _inventory_from(args.inventory or cfg_map.get("inventory"))
    cfg = TrainConfig(**{k: v for k, v in cfg_map.items() if k in _TRAIN_KEYS})
    records = corpus.read_jsonl(data_path)
    result = train(records, cfg, inv=inv, out_dir=out_dir)
    last = result.loss_log[-1]
    print("trained %s/%s for %d epochs (best epoch %d)"
          % (cfg.model, cfg.task, last.epoch, result.stopped_epoch))
    print("final train loss %.6f  val loss %.6f  token accuracy %.4f"
          % (last.train_loss, last.val_loss, last.train_token_accuracy))
    print("checkpoint: %s" % result.checkpoint_path)
    return 0


def _load_vocab_for(args):
    vocab_path = args.vocab or Path(args.ckpt).parent / "vocab.json"
    return Vocab.load(vocab_path)


def cmd_evaluate(args):
    records = corpus.read_jsonl(args.data)
    vocab = _load_vocab_for(args)
    inv = _inventory_from(args.inventory)
    views = evaluate_checkpoint(args.ckpt, records, vocab, inv,
                                threads=max(1, args.threads))
    for name in sorted(views):
        print(render_report(views[name]))
        print()
    if args.json:
        payload = report_to_json(views)
        if args.json == "-":
            print(payload)
        else:
            Path(args.json).write_text(payload, encoding="utf-8")
    return 0


def cmd_predict(args):
    model, meta = load_model(args.ckpt)
    vocab = _load_vocab_for(args)
    if vocab.sha256() != meta["vocab_sha256"]:
        raise VocabMismatch("vocabulary does not match the checkpoint sidecar")
    inv = default_inventory()
    if args.text is not None:
        lines = [args.text]
    else:
        lines = Path(args.file).read_text(encoding="utf-8").splitlines()
    for line in lines:
        if not line:
            continue
        # accept punctuated input: strip to the model's input convention first
        input_text, _ = strip_punctuation(line, inv)
        if not input_text:
            continue
        with nd.no_grad():
            logits = model.forward(encode(input_text, vocab))
        labels = predict_labels(logits)
        print("input:    %s" % input_text)
        print("restored: %s" % restore_text(input_text, labels))
        print("labels:   %s" % "".join(str(l) for l in labels.labels))
        print("indices:  %s" % format_index_string(labels))
    return 0


def cmd_gradcheck(args):
    kinds = ("baseline", "core") if args.model == "both" else (args.model,)
    worst = 0.0
    for kind in kinds:
        err = model_gradcheck(kind=kind, seed=args.seed,
                              max_coords_per_tensor=args.coords)
        status = "PASS" if err < GRADCHECK_TOLERANCE else "FAIL"
        print("gradcheck %-8s max relative error %.3e  %s" % (kind, err, status))
        worst = max(worst, err)
    return 0 if worst < GRADCHECK_TOLERANCE else NUMERIC_ERROR


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return USAGE_ERROR
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    try:
        return args.func(args)
    except _NUMERIC_ERRORS as exc:
        sys.stderr.write("numeric failure: %s\n" % exc)
        return NUMERIC_ERROR
    except GuwenError as exc:
        sys.stderr.write("error: %s\n" % exc)
        return DATA_ERROR
    except FileNotFoundError as exc:
        sys.stderr.write("error: %s\n" % exc)
        return DATA_ERROR
    except json.JSONDecodeError as exc:
        sys.stderr.write("error: invalid JSON: %s\n" % exc)
        return DATA_ERROR


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
