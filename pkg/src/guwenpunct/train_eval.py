"""Training loop, confusion-matrix metrics, and report generation."""

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ndcompute as nd
from .errors import (DivergedLoss, EmptyDataset, LengthMismatch, TaskMismatch,
                     VocabMismatch)
from .model import BaselineModel, CoreModel, load_model, predict_labels, save_model
from .preprocess import (BINARY_NAMES, CLASS_NAMES, PAD_ID, LabelSequence,
                         Vocab, build_vocab, default_inventory, encode,
                         labels_from_metadata, rebalance, record_metadata)

TASKS = ("binary", "4class")
MODELS = ("baseline", "core")
IGNORE = -1


@dataclass
class TrainConfig:
    task: str = "4class"
    model: str = "core"
    epochs: int = 10
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    grad_clip: float = 5.0
    rebalance: str = "none"
    patience: int = 10
    val_fraction: float = 0.05
    d_e: int = 128
    d_h: int = 128
    heads: int = 4
    dropout: float = 0.1
    window: int = None
    min_count: int = 1
    dtype: str = "f64"
    stop_at_train_accuracy: float = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.task not in TASKS:
            raise ValueError("task must be one of %s" % (TASKS,))
        if self.model not in MODELS:
            raise ValueError("model must be one of %s" % (MODELS,))
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")

    @property
    def n_classes(self):
        return 2 if self.task == "binary" else 4

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "f64" else np.float32


class ConfusionMatrix:
    """C x C counts; rows are the actual class, columns the predicted one."""

    def __init__(self, n_classes):
        self.counts = np.zeros((n_classes, n_classes), dtype=np.int64)

    @property
    def n_classes(self):
        return self.counts.shape[0]

    def add(self, actual, predicted):
        self.counts[actual, predicted] += 1

    def merge(self, other):
        self.counts += other.counts

    def total(self):
        return int(self.counts.sum())

    def accuracy(self):
        total = self.total()
        return float(np.trace(self.counts)) / total if total else 0.0

    def support(self, c):
        return int(self.counts[c].sum())


def confusion(golds, preds, n_classes=4) -> ConfusionMatrix:
    """Tally gold/predicted label pairs position by position."""
    if len(golds) != len(preds):
        raise LengthMismatch("%d gold sequences vs %d predictions" % (len(golds), len(preds)))
    cm = ConfusionMatrix(n_classes)
    for gold, pred in zip(golds, preds):
        g = gold.labels if isinstance(gold, LabelSequence) else gold
        p = pred.labels if isinstance(pred, LabelSequence) else pred
        if len(g) != len(p):
            raise LengthMismatch("sequence lengths differ: %d vs %d" % (len(g), len(p)))
        for a, b in zip(g, p):
            cm.counts[a, b] += 1
    return cm


def precision_recall(cm: ConfusionMatrix, c: int):
    """(precision, recall) for one class, with 0/0 defined as 0."""
    tp = float(cm.counts[c, c])
    fp = float(cm.counts[:, c].sum()) - tp
    fn = float(cm.counts[c, :].sum()) - tp
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    return precision, recall


def f1_scores(cm: ConfusionMatrix):
    """Per-class F1 plus macro (mean over all classes) and support-weighted F1."""
    n = cm.n_classes
    per_class = []
    supports = []
    for c in range(n):
        p, r = precision_recall(cm, c)
        per_class.append(2.0 * p * r / (p + r) if p + r > 0 else 0.0)
        supports.append(cm.support(c))
    macro_f1 = sum(per_class) / n
    total = sum(supports)
    weighted_f1 = (sum(f * s for f, s in zip(per_class, supports)) / total
                   if total else 0.0)
    return {"per_class": per_class, "macro_f1": macro_f1, "weighted_f1": weighted_f1}


def weighted_f1_unnormalized(cm: ConfusionMatrix) -> float:
    """Support-count weighted sum of per-class F1 divided by the class count.

    Not bounded by 1; kept only for auditing against reports that use this
    convention instead of support-share weights.
    """
    scores = f1_scores(cm)["per_class"]
    supports = [cm.support(c) for c in range(cm.n_classes)]
    return sum(f * s for f, s in zip(scores, supports)) / cm.n_classes


@dataclass
class MetricsReport:
    task: str
    accuracy: float
    per_class: dict
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    N: int
    confusion: ConfusionMatrix

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix, task: str) -> "MetricsReport":
        names = BINARY_NAMES if cm.n_classes == 2 else CLASS_NAMES
        per_class = {}
        precisions, recalls, f1s, supports = [], [], [], []
        for c, name in enumerate(names):
            p, r = precision_recall(cm, c)
            f1 = 2.0 * p * r / (p + r) if p + r > 0 else 0.0
            support = cm.support(c)
            per_class[name] = {"precision": p, "recall": r, "f1": f1, "support": support}
            precisions.append(p)
            recalls.append(r)
            f1s.append(f1)
            supports.append(support)
        n = len(names)
        total = sum(supports)
        weights = [s / total if total else 0.0 for s in supports]
        return cls(
            task=task,
            accuracy=cm.accuracy(),
            per_class=per_class,
            weighted_precision=sum(w * p for w, p in zip(weights, precisions)),
            weighted_recall=sum(w * r for w, r in zip(weights, recalls)),
            weighted_f1=sum(w * f for w, f in zip(weights, f1s)),
            macro_precision=sum(precisions) / n,
            macro_recall=sum(recalls) / n,
            macro_f1=sum(f1s) / n,
            N=n,
            confusion=cm,
        )

    def to_dict(self):
        return {
            "task": self.task,
            "accuracy": self.accuracy,
            "per_class": self.per_class,
            "weighted_precision": self.weighted_precision,
            "weighted_recall": self.weighted_recall,
            "weighted_f1": self.weighted_f1,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "N": self.N,
            "confusion": self.confusion.counts.tolist(),
        }


def render_report(report: MetricsReport) -> str:
    """Plain-text table: per-class rows then weighted and macro summary rows."""
    lines = []
    lines.append("task: %s   accuracy: %.4f" % (report.task, report.accuracy))
    lines.append("%-12s %9s %9s %9s %9s" % ("class", "precision", "recall", "f1", "support"))
    for name, row in report.per_class.items():
        lines.append("%-12s %9.3f %9.3f %9.3f %9d"
                     % (name, row["precision"], row["recall"], row["f1"], row["support"]))
    lines.append("%-12s %9.3f %9.3f %9.3f" % ("weighted", report.weighted_precision,
                                              report.weighted_recall, report.weighted_f1))
    lines.append("%-12s %9.3f %9.3f %9.3f" % ("macro", report.macro_precision,
                                              report.macro_recall, report.macro_f1))
    lines.append("confusion (rows=actual, cols=predicted):")
    for row in report.confusion.counts:
        lines.append("  " + " ".join("%8d" % v for v in row))
    return "\n".join(lines)


def compare_reports(a: MetricsReport, b: MetricsReport) -> dict:
    """Per-metric differences, sign convention b - a."""
    if a.task != b.task:
        raise TaskMismatch("cannot compare %r against %r" % (a.task, b.task))
    delta = {
        "accuracy": b.accuracy - a.accuracy,
        "weighted_f1": b.weighted_f1 - a.weighted_f1,
        "macro_f1": b.macro_f1 - a.macro_f1,
        "per_class": {},
    }
    for name in a.per_class:
        delta["per_class"][name] = {
            key: b.per_class[name][key] - a.per_class[name][key]
            for key in ("precision", "recall", "f1")
        }
    return delta


# ---------------------------------------------------------------------------
# label preparation and evaluation


def gold_labels(record, inv, task: str) -> LabelSequence:
    seq = labels_from_metadata(len(record.input_text), record_metadata(record), inv)
    return seq.binary() if task == "binary" else seq


def _predict_one(model, ids):
    with nd.no_grad():
        logits = model.forward(ids)
    return predict_labels(logits)


def evaluate_model(model, records, vocab: Vocab, task: str, inv=None,
                   threads: int = 1) -> dict:
    """Metrics over a record set; 4class additionally reports the binary view.

    Returns a dict of views: {"4class": report, "binary": report} or just
    {"binary": report}.
    """
    inv = inv or default_inventory()
    rows = [r for r in records if len(r.input_text) > 0]
    if not rows:
        raise EmptyDataset("no non-empty lines to evaluate")

    def work(record):
        ids = encode(record.input_text, vocab)
        return gold_labels(record, inv, task), _predict_one(model, ids)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pairs = list(pool.map(work, rows))
    else:
        pairs = [work(r) for r in rows]

    golds = [g for g, _ in pairs]
    preds = [p for _, p in pairs]
    views = {}
    if task == "binary":
        views["binary"] = MetricsReport.from_confusion(confusion(golds, preds, 2), "binary")
    else:
        views["4class"] = MetricsReport.from_confusion(confusion(golds, preds, 4), "4class")
        binary_cm = confusion([g.binary() for g in golds], [p.binary() for p in preds], 2)
        views["binary"] = MetricsReport.from_confusion(binary_cm, "binary")
    return views


def evaluate_checkpoint(ckpt_path, records, vocab: Vocab, inv=None,
                        threads: int = 1) -> dict:
    """Load a checkpoint, verify the vocab/inventory sidecar, and evaluate."""
    model, meta = load_model(ckpt_path)
    if vocab.sha256() != meta["vocab_sha256"]:
        raise VocabMismatch("vocabulary hash does not match the checkpoint sidecar")
    inv = inv or default_inventory()
    sidecar_marks = meta.get("inventory", {}).get("marks")
    if sidecar_marks is not None and list(inv.marks) != list(sidecar_marks):
        raise VocabMismatch("punctuation inventory does not match the checkpoint sidecar")
    return evaluate_model(model, records, vocab, meta["task"], inv, threads=threads)


# ---------------------------------------------------------------------------
# training


@dataclass
class LossEntry:
    epoch: int
    train_loss: float
    val_loss: float
    train_token_accuracy: float


@dataclass
class TrainResult:
    model: object
    vocab: Vocab
    loss_log: list
    checkpoint_path: Path = None
    stopped_epoch: int = 0


def _build_model(cfg: TrainConfig, vocab_size, seed):
    if cfg.model == "core":
        return CoreModel(vocab_size, cfg.n_classes, d_e=cfg.d_e, d_h=cfg.d_h,
                         heads=cfg.heads, dropout=cfg.dropout, window=cfg.window,
                         seed=seed, dtype=cfg.np_dtype)
    return BaselineModel(vocab_size, cfg.n_classes, d_e=cfg.d_e, d_h=cfg.d_h,
                         dropout=cfg.dropout, seed=seed, dtype=cfg.np_dtype)


def _length_batches(items, batch_size):
    """Group line indices of similar length into fixed batches."""
    order = sorted(range(len(items)), key=lambda i: (len(items[i][0]), i))
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def _pad_batch(items, batch):
    """Pad ids with PAD and labels with IGNORE up to the batch max length."""
    width = max(len(items[i][0]) for i in batch)
    padded = []
    for i in batch:
        ids, labels = items[i]
        fill = width - len(ids)
        padded.append((ids + [PAD_ID] * fill, labels + [IGNORE] * fill))
    return padded


def train(records, cfg: TrainConfig, inv=None, out_dir=None, vocab=None,
          log_every: int = 0) -> TrainResult:
    """Train a tagger; deterministic given cfg.seed.

    Keeps the parameter snapshot with the best validation loss (train loss
    when val_fraction is 0) and writes checkpoint + sidecar + vocab +
    per-epoch loss CSV under out_dir when given.
    """
    inv = inv or default_inventory()
    rows = [r for r in records if len(r.input_text) > 0]
    if not rows:
        raise EmptyDataset("no non-empty lines to train on")

    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    rows = rebalance(rows, cfg.rebalance, seed=cfg.seed, inv=inv)
    if vocab is None:
        vocab = build_vocab(rows, min_count=cfg.min_count)

    # per-line (ids, labels) with the task's label projection
    items = []
    for rec in rows:
        labels = gold_labels(rec, inv, cfg.task).labels
        items.append((encode(rec.input_text, vocab), labels))

    # carve the validation slice from the shuffled line order
    n_val = int(math.floor(cfg.val_fraction * len(items) + 0.5))
    perm = np.random.default_rng(seeds[1]).permutation(len(items))
    val_items = [items[i] for i in perm[:n_val]]
    train_items = [items[i] for i in perm[n_val:]]
    if not train_items:
        raise EmptyDataset("validation split consumed every line")

    model = _build_model(cfg, len(vocab), seeds[0])
    params = model.named_tensors()
    state = nd.AdamState()
    loop_rng = np.random.default_rng(seeds[2])

    batches = _length_batches(train_items, cfg.batch_size)
    best_loss = math.inf
    best_snapshot = {name: t.data.copy() for name, t in params.items()}
    best_epoch = 0
    loss_log = []
    since_best = 0

    for epoch in range(1, cfg.epochs + 1):
        batch_order = loop_rng.permutation(len(batches))
        epoch_loss = 0.0
        n_lines = 0
        correct = 0
        seen = 0
        for b in batch_order:
            padded = _pad_batch(train_items, batches[b])
            nd.zero_grads(params)
            for ids, labels in padded:
                targets = np.asarray(labels)
                logits = model.forward(ids, training=True, rng=loop_rng)
                loss = nd.cross_entropy(logits, targets, ignore_index=IGNORE)
                nd.backward(nd.scale(loss, 1.0 / len(padded)))
                epoch_loss += loss.item()
                n_lines += 1
                valid = targets != IGNORE
                pred = np.argmax(logits.data, axis=1)
                correct += int((pred[valid] == targets[valid]).sum())
                seen += int(valid.sum())
            grads = {name: t.grad for name, t in params.items()}
            if cfg.grad_clip and cfg.grad_clip > 0:
                nd.clip_grad_norm(grads, cfg.grad_clip)
            nd.adam_step(params, grads, state, cfg.lr)

        train_loss = epoch_loss / n_lines
        if math.isnan(train_loss) or math.isinf(train_loss):
            raise DivergedLoss("training loss became %r at epoch %d" % (train_loss, epoch))
        val_loss = _mean_loss(model, val_items) if val_items else train_loss
        accuracy = correct / seen if seen else 0.0
        loss_log.append(LossEntry(epoch, train_loss, val_loss, accuracy))
        if log_every and epoch % log_every == 0:
            print("epoch %d  train %.6f  val %.6f  acc %.4f"
                  % (epoch, train_loss, val_loss, accuracy))

        if val_loss < best_loss:
            best_loss = val_loss
            best_epoch = epoch
            best_snapshot = {name: t.data.copy() for name, t in params.items()}
            since_best = 0
        else:
            since_best += 1
        if cfg.stop_at_train_accuracy is not None and accuracy >= cfg.stop_at_train_accuracy:
            # keep the memorized parameters regardless of validation loss
            best_snapshot = {name: t.data.copy() for name, t in params.items()}
            best_epoch = epoch
            break
        if val_items and cfg.patience and since_best >= cfg.patience:
            break

    for name, tensor in params.items():
        tensor.data = best_snapshot[name]
        tensor.grad = np.zeros_like(tensor.data)

    result = TrainResult(model=model, vocab=vocab, loss_log=loss_log,
                         stopped_epoch=best_epoch)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt_path = out_dir / "model.gwpt"
        save_model(model, ckpt_path, vocab, cfg.task, inv)
        vocab.save(out_dir / "vocab.json")
        write_loss_csv(out_dir / "loss.csv", loss_log)
        result.checkpoint_path = ckpt_path
    return result


def _mean_loss(model, items):
    total = 0.0
    for ids, labels in items:
        with nd.no_grad():
            logits = model.forward(ids)
            loss = nd.cross_entropy(logits, np.asarray(labels), ignore_index=IGNORE)
        total += loss.item()
    return total / len(items)


def write_loss_csv(path, loss_log):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for entry in loss_log:
            writer.writerow([entry.epoch, repr(entry.train_loss), repr(entry.val_loss)])


def report_to_json(views: dict) -> str:
    return json.dumps({task: report.to_dict() for task, report in views.items()},
                      ensure_ascii=False, sort_keys=True, indent=2)
