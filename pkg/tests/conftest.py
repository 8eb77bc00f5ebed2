import numpy as np
import pytest
from pathlib import Path

from guwenpunct import corpus
from guwenpunct.corpus import CorpusRecord
from guwenpunct.preprocess import default_inventory, strip_punctuation

SAMPLE_DIR = Path(__file__).resolve().parent.parent / "data" / "sample_corpus"

TOY_CHARS = "天地玄黃宇宙洪荒日月盈昃辰宿列張寒來暑往"


def make_record(original, space_is_punct=False, title="t", author="a",
                genre="poetry", stanza_no=0, line_no=0):
    """Build a validated CorpusRecord from one punctuated line."""
    inv = default_inventory()
    stripped, meta = strip_punctuation(original, inv, space_is_punct)
    rec = CorpusRecord(title=title, author=author, genre=genre,
                       stanza_no=stanza_no, line_no=line_no,
                       punct_indices=tuple(i for i, _ in meta),
                       punct_marks=tuple(m for _, m in meta),
                       original_text=original, input_text=stripped)
    rec.validate()
    return rec


def make_toy_corpus(n_lines=32, seed=7, line_chars=6):
    """Distinct random short lines, each with one comma and a final period."""
    rng = np.random.default_rng(seed)
    records = []
    seen = set()
    while len(records) < n_lines:
        chars = "".join(TOY_CHARS[i] for i in rng.integers(0, len(TOY_CHARS), size=line_chars))
        if chars in seen:
            continue
        seen.add(chars)
        cut = int(rng.integers(2, line_chars - 1))
        original = chars[:cut] + "，" + chars[cut:] + "。"
        records.append(make_record(original, line_no=len(records)))
    return records


@pytest.fixture(scope="session")
def sample_dir():
    return SAMPLE_DIR


@pytest.fixture(scope="session")
def sample_records():
    return corpus.ingest(corpus.discover_sources(SAMPLE_DIR))


@pytest.fixture
def record_factory():
    return make_record


@pytest.fixture(scope="session")
def toy_corpus():
    return make_toy_corpus()
