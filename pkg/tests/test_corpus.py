import json

import pytest

from guwenpunct import corpus
from guwenpunct.errors import EmptyCorpus, MalformedSource
from guwenpunct.preprocess import default_inventory


def _write(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")
    return path


def _source(path, genre="poetry", space=False):
    return corpus.RawSource(path=path, source_name=path.stem, genre=genre,
                            space_is_punct=space)


def test_load_source_single_work(tmp_path):
    path = _write(tmp_path, "x.json", [{"title": "t", "author": "a",
                                        "paragraphs": ["甲乙丙，丁戊己。"]}])
    records = corpus.load_source(_source(path))
    assert len(records) == 1
    rec = records[0]
    assert rec.stanza_no == 0 and rec.line_no == 0
    assert rec.input_text == "甲乙丙丁戊己"
    assert rec.punct_indices == (3, 7)
    assert rec.punct_marks == ("，", "。")


def test_body_key_aliases_equivalent(tmp_path):
    body = ["甲乙，丙。", "丁戊己。"]
    base = corpus.load_source(_source(_write(tmp_path, "a.json",
                                             [{"title": "t", "paragraphs": body}])))
    for key in ("content", "para"):
        path = _write(tmp_path, key + ".json", [{"title": "t", key: body}])
        alt = corpus.load_source(_source(path))
        assert [(r.original_text, r.input_text, r.punct_indices) for r in alt] \
            == [(r.original_text, r.input_text, r.punct_indices) for r in base]


def test_load_source_positions(tmp_path):
    path = _write(tmp_path, "x.json", [
        {"title": "one", "paragraphs": ["甲。", "乙。"]},
        {"title": "two", "paragraphs": ["丙。"]},
    ])
    records = corpus.load_source(_source(path))
    assert [(r.stanza_no, r.line_no) for r in records] == [(0, 0), (0, 1), (1, 0)]
    assert [r.title for r in records] == ["one", "one", "two"]


def test_load_source_missing_title_author(tmp_path):
    path = _write(tmp_path, "x.json", [{"paragraphs": ["甲。"]}])
    rec = corpus.load_source(_source(path))[0]
    assert rec.title == "" and rec.author == ""


def test_load_source_not_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("not json at all", encoding="utf-8")
    with pytest.raises(MalformedSource):
        corpus.load_source(_source(path))


def test_load_source_no_body_key(tmp_path):
    path = _write(tmp_path, "bad.json", [{"title": "t", "lines": ["甲。"]}])
    with pytest.raises(MalformedSource):
        corpus.load_source(_source(path))


def test_load_source_empty_is_warning_not_error(tmp_path, caplog):
    path = _write(tmp_path, "empty.json", [])
    with caplog.at_level("WARNING"):
        records = corpus.load_source(_source(path))
    assert records == []
    assert any("zero records" in m for m in caplog.messages)


def test_genre_table():
    assert corpus.genre_for_source("lunyu") == "philosophy"
    assert corpus.genre_for_source("dizigui") == "teachings"
    assert corpus.genre_for_source("caocao") == "poetry"
    assert corpus.genre_for_source("poet.tang.0") == "poetry"


def test_genre_unknown_defaults_to_poetry(caplog):
    with caplog.at_level("WARNING"):
        assert corpus.genre_for_source("mystery") == "poetry"
    assert any("mystery" in m for m in caplog.messages)


def test_genre_table_override():
    assert corpus.genre_for_source("mystery", {"mystery": "teachings"}) == "teachings"


def test_raw_source_rejects_bad_genre(tmp_path):
    with pytest.raises(ValueError):
        corpus.RawSource(path=tmp_path, source_name="x", genre="fiction")


# ---------------------------------------------------------------------------
# stats


def test_corpus_stats_single_record(record_factory):
    stats = corpus.corpus_stats([record_factory("甲乙丙，丁戊己。")])
    assert stats.punct_count == 2
    assert stats.char_count == 6
    assert stats.punct_ratio == 0.25
    assert abs(sum(stats.per_class_ratio.values()) - 1.0) < 1e-9
    assert stats.per_class_ratio["comma"] == 0.125
    assert stats.per_class_ratio["period"] == 0.125
    assert stats.per_class_ratio["none"] == 0.75


def test_corpus_stats_empty():
    with pytest.raises(EmptyCorpus):
        corpus.corpus_stats([])


def test_corpus_stats_invariants_on_sample(sample_records):
    stats = corpus.corpus_stats(sample_records)
    assert stats.record_count == len(sample_records)
    assert abs(stats.punct_ratio - stats.punct_count
               / (stats.char_count + stats.punct_count)) < 1e-12
    assert abs(sum(stats.per_class_ratio.values()) - 1.0) < 1e-9
    assert sum(stats.per_genre_counts.values()) == stats.record_count
    assert sum(stats.per_mark_counts.values()) == stats.punct_count


def test_genre_counts():
    assert corpus.genre_counts([]) == {"poetry": 0, "teachings": 0, "philosophy": 0}


def test_genre_counts_single_genre(record_factory):
    records = [record_factory("甲。", genre="teachings") for _ in range(3)]
    assert corpus.genre_counts(records) == {"poetry": 0, "teachings": 3, "philosophy": 0}


# ---------------------------------------------------------------------------
# jsonl round trip and determinism


def test_jsonl_roundtrip(tmp_path, sample_records):
    path = tmp_path / "dataset.jsonl"
    corpus.write_jsonl(sample_records, path)
    loaded = corpus.read_jsonl(path)
    assert loaded == sample_records
    # field order is pinned
    first = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
    assert list(first) == list(corpus.RECORD_FIELDS)


def test_jsonl_rewrite_is_byte_identical(tmp_path, sample_records):
    a = tmp_path / "a.jsonl"
    b = tmp_path / "b.jsonl"
    corpus.write_jsonl(sample_records, a)
    corpus.write_jsonl(corpus.read_jsonl(a), b)
    assert a.read_bytes() == b.read_bytes()


def test_read_jsonl_rejects_corrupt_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"title": "x"}\n', encoding="utf-8")
    with pytest.raises(MalformedSource):
        corpus.read_jsonl(path)


def test_ingest_deterministic_and_parallel(sample_dir):
    sources = corpus.discover_sources(sample_dir)
    seq = corpus.ingest(sources, threads=1)
    par = corpus.ingest(sources, threads=4)
    assert seq == par


def test_ingest_sample_counts(sample_records):
    counts = corpus.genre_counts(sample_records)
    assert counts["poetry"] > 0 and counts["teachings"] > 0 and counts["philosophy"] > 0
    assert sum(counts.values()) == len(sample_records)


def test_space_punct_source_strips_spaces(sample_records):
    dizigui = [r for r in sample_records if "弟子規" in r.original_text]
    assert dizigui
    rec = dizigui[0]
    assert " " not in rec.input_text
    assert " " in rec.punct_marks
