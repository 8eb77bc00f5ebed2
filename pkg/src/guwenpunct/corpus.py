"""Ingest chinese-poetry style JSON files into the eight-feature line dataset.

Each line of each work becomes one record carrying title, author, genre,
stanza/line position, the original text, the stripped input text, and the
removed punctuation as (index, mark) metadata.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .errors import EmptyCorpus, MalformedSource
from .preprocess import (
    CLASS_NAMES,
    PunctuationInventory,
    class_of_mark,
    default_inventory,
    reinsert_punctuation,
    strip_punctuation,
)

log = logging.getLogger(__name__)

GENRES = ("poetry", "teachings", "philosophy")

# Static per-source genre assignments; files not listed here default to
# poetry (the dominant genre) with a warning.
GENRE_TABLE = {
    "caocao": "poetry",
    "chuci": "poetry",
    "ci": "poetry",
    "daxue": "teachings",
    "dizigui": "teachings",
    "guwenguanzhi": "teachings",
    "huajianji": "poetry",
    "lunyu": "philosophy",
    "mengzi": "philosophy",
    "nantang": "poetry",
    "qianjiashi": "poetry",
    "quantangshi": "poetry",
    "sanzijing": "teachings",
    "sanzijing-traditional": "teachings",
    "shenglvqimeng": "poetry",
    "shijing": "poetry",
    "tangshisanbaishou": "poetry",
    "youxueqionglin": "philosophy",
    "yuanqu": "poetry",
    "zengguangxianwen": "teachings",
    "zhongyong": "philosophy",
    "zhuzijiaxun": "teachings",
}

# Sources whose lines separate phrases with spaces instead of marks.
SPACE_PUNCT_SOURCES = {"dizigui"}

BODY_KEYS = ("paragraphs", "content", "para")

# JSON Lines field order; fixed so identical corpora serialize identically.
RECORD_FIELDS = ("title", "author", "genre", "stanza_no", "line_no",
                 "punct_indices", "punct_marks", "original_text", "input_text")


@dataclass(frozen=True)
class RawSource:
    """One corpus file queued for ingestion."""

    path: Path
    source_name: str
    genre: str
    space_is_punct: bool = False

    def __post_init__(self):
        if self.genre not in GENRES:
            raise ValueError("genre must be one of %s, got %r" % (GENRES, self.genre))


@dataclass(frozen=True)
class CorpusRecord:
    """One line of text with its punctuation stripped into metadata."""

    title: str
    author: str
    genre: str
    stanza_no: int
    line_no: int
    punct_indices: tuple
    punct_marks: tuple
    original_text: str
    input_text: str

    def validate(self):
        if len(self.punct_indices) != len(self.punct_marks):
            raise ValueError("punct_indices and punct_marks must align")
        if any(b <= a for a, b in zip(self.punct_indices, self.punct_indices[1:])):
            raise ValueError("punct_indices must be strictly increasing")
        if len(self.input_text) + len(self.punct_marks) != len(self.original_text):
            raise ValueError("stripped length + mark count != original length")
        restored = reinsert_punctuation(self.input_text, self.metadata())
        if restored != self.original_text:
            raise ValueError("metadata does not round-trip to the original text")

    def metadata(self):
        return list(zip(self.punct_indices, self.punct_marks))


def genre_for_source(name: str, genre_table: dict = None) -> str:
    """Look up the genre table; unknown sources fall back to poetry."""
    table = GENRE_TABLE if genre_table is None else {**GENRE_TABLE, **genre_table}
    if name in table:
        return table[name]
    head = name.split(".")[0]
    if head in table:
        return table[head]
    log.warning("no genre entry for source %r; defaulting to poetry", name)
    return "poetry"


def discover_sources(src_dir, genre_table: dict = None) -> list:
    """All *.json files under a directory, in sorted-path order."""
    paths = sorted(Path(src_dir).rglob("*.json"), key=lambda p: p.as_posix())
    sources = []
    for path in paths:
        name = path.stem
        sources.append(RawSource(path=path, source_name=name,
                                 genre=genre_for_source(name, genre_table),
                                 space_is_punct=name in SPACE_PUNCT_SOURCES))
    return sources


def _body_of(work):
    for key in BODY_KEYS:
        if key in work:
            return work[key]
    return None


def load_source(src: RawSource, inv: PunctuationInventory = None) -> list:
    """Parse one source file into CorpusRecords, one per body string."""
    inv = inv or default_inventory()
    try:
        with open(src.path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedSource("%s: %s" % (src.path, exc)) from exc
    if isinstance(data, dict):
        data = [data]
    if not isinstance(data, list):
        raise MalformedSource("%s: expected a JSON array of works" % src.path)

    records = []
    for stanza_no, work in enumerate(data):
        if not isinstance(work, dict):
            raise MalformedSource("%s: work %d is not an object" % (src.path, stanza_no))
        body = _body_of(work)
        if body is None:
            raise MalformedSource("%s: work %d has no body key (tried %s)"
                                  % (src.path, stanza_no, "/".join(BODY_KEYS)))
        if not isinstance(body, list) or any(not isinstance(s, str) for s in body):
            raise MalformedSource("%s: work %d body is not an array of strings"
                                  % (src.path, stanza_no))
        title = work.get("title", "") or ""
        author = work.get("author", "") or ""
        for line_no, original in enumerate(body):
            input_text, metadata = strip_punctuation(original, inv, src.space_is_punct)
            rec = CorpusRecord(
                title=title, author=author, genre=src.genre,
                stanza_no=stanza_no, line_no=line_no,
                punct_indices=tuple(i for i, _ in metadata),
                punct_marks=tuple(m for _, m in metadata),
                original_text=original, input_text=input_text,
            )
            rec.validate()
            records.append(rec)
    if not records:
        log.warning("source %s produced zero records", src.path)
    return records


def ingest(sources, inv: PunctuationInventory = None, threads: int = 1) -> list:
    """Load many sources; output order is by source order then in-file order."""
    inv = inv or default_inventory()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_source = list(pool.map(lambda s: load_source(s, inv), sources))
    else:
        per_source = [load_source(s, inv) for s in sources]
    records = []
    for chunk in per_source:
        records.extend(chunk)
    return records


@dataclass
class CorpusStats:
    """Counts and class/mark ratios over a record set."""

    record_count: int
    per_genre_counts: dict
    char_count: int
    punct_count: int
    punct_ratio: float
    per_class_ratio: dict
    per_mark_counts: dict

    def to_dict(self):
        return {
            "record_count": self.record_count,
            "per_genre_counts": self.per_genre_counts,
            "char_count": self.char_count,
            "punct_count": self.punct_count,
            "punct_ratio": self.punct_ratio,
            "per_class_ratio": self.per_class_ratio,
            "per_mark_counts": self.per_mark_counts,
        }


def genre_counts(records) -> dict:
    counts = {g: 0 for g in GENRES}
    for rec in records:
        counts[rec.genre] += 1
    return counts


def corpus_stats(records, inv: PunctuationInventory = None) -> CorpusStats:
    """Aggregate counts; ratios are over all indices of the original texts."""
    if not records:
        raise EmptyCorpus("corpus_stats needs at least one record")
    inv = inv or default_inventory()
    char_count = 0
    mark_counts = {}
    class_counts = {name: 0 for name in CLASS_NAMES}
    for rec in records:
        char_count += len(rec.input_text)
        for mark in rec.punct_marks:
            mark_counts[mark] = mark_counts.get(mark, 0) + 1
            class_counts[CLASS_NAMES[class_of_mark(mark, inv)]] += 1
    punct_count = sum(mark_counts.values())
    total = char_count + punct_count
    if total == 0:
        raise EmptyCorpus("corpus contains no characters")
    class_counts["none"] = char_count
    per_class_ratio = {name: class_counts[name] / total for name in CLASS_NAMES}
    return CorpusStats(
        record_count=len(records),
        per_genre_counts=genre_counts(records),
        char_count=char_count,
        punct_count=punct_count,
        punct_ratio=punct_count / total,
        per_class_ratio=per_class_ratio,
        per_mark_counts=dict(sorted(mark_counts.items())),
    )


def write_jsonl(records, path):
    """One record per line, fields in RECORD_FIELDS order, UTF-8."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {
                "title": rec.title, "author": rec.author, "genre": rec.genre,
                "stanza_no": rec.stanza_no, "line_no": rec.line_no,
                "punct_indices": list(rec.punct_indices),
                "punct_marks": list(rec.punct_marks),
                "original_text": rec.original_text, "input_text": rec.input_text,
            }
            fh.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


def read_jsonl(path) -> list:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_num, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedSource("%s line %d: %s" % (path, line_num + 1, exc)) from exc
            try:
                rec = CorpusRecord(
                    title=obj["title"], author=obj["author"], genre=obj["genre"],
                    stanza_no=obj["stanza_no"], line_no=obj["line_no"],
                    punct_indices=tuple(obj["punct_indices"]),
                    punct_marks=tuple(obj["punct_marks"]),
                    original_text=obj["original_text"], input_text=obj["input_text"],
                )
                rec.validate()
            except (KeyError, ValueError) as exc:
                raise MalformedSource("%s line %d: %s" % (path, line_num + 1, exc)) from exc
            records.append(rec)
    return records
