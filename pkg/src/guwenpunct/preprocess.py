"""Punctuation stripping and labeling, vocabulary, dataset split, rebalancing.

Characters and indices are Unicode scalar values throughout; punctuation
indices always refer to positions in the original (punctuated) text.
"""

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyCorpus, IndexOutOfRange

# Label classes. The 4-class scheme is none/comma/period/other; the binary
# projection keeps none at 0 and collapses the rest to 1.
NONE, COMMA, PERIOD, OTHER = 0, 1, 2, 3
CLASS_NAMES = ("none", "comma", "period", "other")
BINARY_NAMES = ("none", "punct")

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

# Full-width CJK marks stripped when a source flags spaces as punctuation.
SPACE_MARKS = (" ", "　")

_CLASS_BY_NAME = {name: idx for idx, name in enumerate(CLASS_NAMES)}

# Default 12-mark inventory: the standard full-width CJK marks, with the
# ideographic comma and full stop as their own classes.
DEFAULT_MARKS = ("，", "。", "、", "；", "：", "？", "！", "「", "」", "『", "』", "·")


@dataclass(frozen=True)
class PunctuationInventory:
    """The recognized punctuation marks and their class assignments."""

    marks: tuple
    class_map: dict

    def __post_init__(self):
        if len(self.marks) != 12:
            raise ValueError("inventory must hold exactly 12 marks, got %d" % len(self.marks))
        if len(set(self.marks)) != len(self.marks):
            raise ValueError("inventory marks must be unique")
        if set(self.class_map) != set(self.marks):
            raise ValueError("class_map keys must equal the mark set")
        commas = [m for m, c in self.class_map.items() if c == COMMA]
        periods = [m for m, c in self.class_map.items() if c == PERIOD]
        if commas != ["，"] or periods != ["。"]:
            raise ValueError("comma class must be exactly ， and period class exactly 。")


def default_inventory() -> PunctuationInventory:
    class_map = {m: OTHER for m in DEFAULT_MARKS}
    class_map["，"] = COMMA
    class_map["。"] = PERIOD
    return PunctuationInventory(marks=DEFAULT_MARKS, class_map=class_map)


def load_inventory(path) -> PunctuationInventory:
    """Read an inventory override file: a JSON list of {mark, class}."""
    with open(path, encoding="utf-8") as fh:
        entries = json.load(fh)
    marks = []
    class_map = {}
    for entry in entries:
        mark = entry["mark"]
        cls = entry["class"]
        if cls not in _CLASS_BY_NAME or cls == "none":
            raise ValueError("bad class %r for mark %r" % (cls, mark))
        marks.append(mark)
        class_map[mark] = _CLASS_BY_NAME[cls]
    return PunctuationInventory(marks=tuple(marks), class_map=class_map)


def class_of_mark(mark: str, inv: PunctuationInventory) -> int:
    """Class of a removed mark; anything outside the inventory (spaces) is other."""
    return inv.class_map.get(mark, OTHER)


@dataclass
class LabelSequence:
    """Per-character punctuation classes for one stripped line."""

    labels: list
    dropped_marks: int = 0

    def __len__(self):
        return len(self.labels)

    def binary(self) -> "LabelSequence":
        return LabelSequence([0 if l == NONE else 1 for l in self.labels], self.dropped_marks)


def strip_punctuation(original_text: str, inv: PunctuationInventory,
                      space_is_punct: bool = False):
    """Remove every inventory mark, recording (index, mark) pairs.

    Indices are 0-based positions in ``original_text``. Returns
    ``(input_text, metadata)``.
    """
    strip_set = set(inv.marks)
    if space_is_punct:
        strip_set.update(SPACE_MARKS)
    kept = []
    metadata = []
    for i, ch in enumerate(original_text):
        if ch in strip_set:
            metadata.append((i, ch))
        else:
            kept.append(ch)
    return "".join(kept), metadata


def reinsert_punctuation(input_text: str, metadata) -> str:
    """Exact inverse of strip_punctuation."""
    out = list(input_text)
    prev = -1
    for inserted, (idx, mark) in enumerate(metadata):
        if idx <= prev:
            raise IndexOutOfRange("indices must be strictly increasing")
        if idx > len(input_text) + inserted:
            raise IndexOutOfRange("index %d past end of text" % idx)
        out.insert(idx, mark)
        prev = idx
    return "".join(out)


def labels_from_metadata(input_len: int, metadata, inv: PunctuationInventory) -> LabelSequence:
    """Label each stripped character with the class of the mark that follows it.

    When several marks follow one character, the first mark wins and the rest
    are tallied in ``dropped_marks``; a mark before character 0 is dropped too.
    """
    labels = [NONE] * input_len
    dropped = 0
    for k, (idx, mark) in enumerate(metadata):
        # idx - k == number of stripped characters before this mark
        j = idx - k - 1
        if j < 0:
            dropped += 1
        elif labels[j] != NONE:
            dropped += 1
        else:
            labels[j] = class_of_mark(mark, inv)
    return LabelSequence(labels, dropped)


class Vocab:
    """Character-to-id table with reserved PAD=0 and UNK=1."""

    def __init__(self, id_to_token):
        if id_to_token[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError("ids 0 and 1 are reserved for PAD and UNK")
        self.id_to_token = list(id_to_token)
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}

    def __len__(self):
        return len(self.id_to_token)

    def sha256(self) -> str:
        return hashlib.sha256("\x00".join(self.id_to_token).encode("utf-8")).hexdigest()

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"tokens": self.id_to_token}, fh, ensure_ascii=False)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh)["tokens"])


def build_vocab(records, min_count: int = 1) -> Vocab:
    """Assign ids by descending corpus frequency, ties by codepoint order."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = {}
    for rec in records:
        for ch in rec.input_text:
            counts[ch] = counts.get(ch, 0) + 1
    if not counts:
        raise EmptyCorpus("no characters to build a vocabulary from")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    tokens = [PAD_TOKEN, UNK_TOKEN] + [ch for ch, n in ranked if n >= min_count]
    return Vocab(tokens)


def encode(text: str, vocab: Vocab):
    """Map characters to ids; unknown characters become UNK."""
    return [vocab.token_to_id.get(ch, UNK_ID) for ch in text]


def decode(ids, vocab: Vocab) -> str:
    return "".join(vocab.id_to_token[i] for i in ids)


@dataclass
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    strategy: str = "random_line"

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")
        if self.strategy != "random_line":
            raise ValueError("unknown split strategy %r" % self.strategy)


def split_dataset(records, spec: SplitSpec):
    """Deterministic seeded line-level split into (train, test).

    |train| = round(train_fraction * N), half-up.
    """
    n = len(records)
    n_train = int(math.floor(spec.train_fraction * n + 0.5))
    perm = np.random.default_rng(spec.seed).permutation(n)
    train = [records[i] for i in perm[:n_train]]
    test = [records[i] for i in perm[n_train:]]
    return train, test


def record_metadata(record):
    """(index, mark) pairs of a corpus record."""
    return list(zip(record.punct_indices, record.punct_marks))


def _record_labels(record, inv):
    return labels_from_metadata(len(record.input_text), record_metadata(record), inv).labels


def rebalance(train, strategy: str, seed: int, inv: PunctuationInventory = None,
              other_share_floor: float = None, none_share_ceiling: float = None):
    """Class rebalancing at line granularity.

    oversample_minority duplicates lines carrying other-class marks until the
    other-class token share reaches the floor (default: twice the current
    share). undersample_majority drops punctuation-free lines until the
    none-class token share falls to the ceiling (default 0.5). Strategy
    "none" is the identity.
    """
    if strategy == "none":
        return list(train)
    if strategy not in ("oversample_minority", "undersample_majority"):
        raise ValueError("unknown rebalance strategy %r" % strategy)
    inv = inv or default_inventory()
    rng = np.random.default_rng(seed)

    per_line = [_record_labels(r, inv) for r in train]
    other_counts = [sum(1 for l in labels if l == OTHER) for labels in per_line]
    none_counts = [sum(1 for l in labels if l == NONE) for labels in per_line]
    lengths = [len(labels) for labels in per_line]
    total = sum(lengths)
    total_other = sum(other_counts)

    if strategy == "oversample_minority":
        pool = [i for i, c in enumerate(other_counts) if c > 0]
        if not pool or total == 0:
            return list(train)
        floor = other_share_floor
        if floor is None:
            floor = 2.0 * total_other / total
        out = list(train)
        added = 0
        cap = 50 * len(train)
        while total_other / total < floor and added < cap:
            i = pool[rng.integers(len(pool))]
            out.append(train[i])
            total += lengths[i]
            total_other += other_counts[i]
            added += 1
        return out

    # undersample_majority
    punct_free = [i for i, r in enumerate(train) if not r.punct_marks]
    if not punct_free:
        return list(train)
    ceiling = 0.5 if none_share_ceiling is None else none_share_ceiling
    total_none = sum(none_counts)
    keep = [True] * len(train)
    order = rng.permutation(len(punct_free))
    for j in order:
        if total == 0 or total_none / total <= ceiling:
            break
        i = punct_free[j]
        keep[i] = False
        total -= lengths[i]
        total_none -= none_counts[i]
    return [r for i, r in enumerate(train) if keep[i]]
