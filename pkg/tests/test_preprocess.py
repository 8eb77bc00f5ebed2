import numpy as np
import pytest

from guwenpunct import preprocess as pp
from guwenpunct.errors import EmptyCorpus, IndexOutOfRange


# ---------------------------------------------------------------------------
# inventory


def test_default_inventory_has_12_unique_marks():
    inv = pp.default_inventory()
    assert len(inv.marks) == 12
    assert len(set(inv.marks)) == 12
    assert inv.class_map["，"] == pp.COMMA
    assert inv.class_map["。"] == pp.PERIOD
    others = [m for m in inv.marks if m not in ("，", "。")]
    assert all(inv.class_map[m] == pp.OTHER for m in others)


def test_inventory_rejects_wrong_comma_class():
    marks = tuple("。、；：？！「」『』·—，")[:12]
    with pytest.raises(ValueError):
        pp.PunctuationInventory(marks=marks, class_map={m: pp.OTHER for m in marks})


def test_load_inventory_override(tmp_path):
    path = tmp_path / "inv.json"
    entries = [{"mark": m, "class": "other"} for m in "、；：？！「」『』·—"]
    entries.insert(0, {"mark": "，", "class": "comma"})
    entries.insert(1, {"mark": "。", "class": "period"})
    path.write_text(__import__("json").dumps(entries, ensure_ascii=False), encoding="utf-8")
    inv = pp.load_inventory(path)
    assert len(inv.marks) == 12
    assert pp.class_of_mark("—", inv) == pp.OTHER


# ---------------------------------------------------------------------------
# strip / reinsert


def test_strip_the_paper_pattern():
    inv = pp.default_inventory()
    stripped, meta = pp.strip_punctuation("甲乙丙，丁戊己。", inv)
    assert stripped == "甲乙丙丁戊己"
    assert meta == [(3, "，"), (7, "。")]


def test_strip_no_marks():
    inv = pp.default_inventory()
    assert pp.strip_punctuation("甲乙丙", inv) == ("甲乙丙", [])


def test_strip_leading_mark():
    inv = pp.default_inventory()
    assert pp.strip_punctuation("，甲。", inv) == ("甲", [(0, "，"), (2, "。")])


def test_strip_spaces_only_when_flagged():
    inv = pp.default_inventory()
    text = "弟子規 聖人訓"
    assert pp.strip_punctuation(text, inv, space_is_punct=False) == (text, [])
    stripped, meta = pp.strip_punctuation(text, inv, space_is_punct=True)
    assert stripped == "弟子規聖人訓"
    assert meta == [(3, " ")]


def test_reinsert_examples():
    assert pp.reinsert_punctuation("甲乙丙丁戊己", [(3, "，"), (7, "。")]) == "甲乙丙，丁戊己。"
    assert pp.reinsert_punctuation("甲", []) == "甲"
    assert pp.reinsert_punctuation("", [(0, "。")]) == "。"


def test_reinsert_rejects_bad_indices():
    with pytest.raises(IndexOutOfRange):
        pp.reinsert_punctuation("甲", [(3, "。")])
    with pytest.raises(IndexOutOfRange):
        pp.reinsert_punctuation("甲乙", [(1, "，"), (1, "。")])


def test_roundtrip_random_lines():
    inv = pp.default_inventory()
    rng = np.random.default_rng(0)
    chars = "甲乙丙丁戊己庚辛壬癸"
    pool = chars + "".join(inv.marks)
    for _ in range(300):
        n = rng.integers(0, 20)
        text = "".join(pool[i] for i in rng.integers(0, len(pool), size=n))
        stripped, meta = pp.strip_punctuation(text, inv)
        assert pp.reinsert_punctuation(stripped, meta) == text


def test_roundtrip_sample_corpus(sample_records):
    for rec in sample_records:
        restored = pp.reinsert_punctuation(rec.input_text, rec.metadata())
        assert restored == rec.original_text


# ---------------------------------------------------------------------------
# labels


def _oracle_labels(input_len, metadata, inv):
    # independent route: rebuild the original from placeholder characters,
    # then scan for the first mark after each real character
    placeholder = "口" * input_len
    original = pp.reinsert_punctuation(placeholder, metadata)
    mark_set = {m for _, m in metadata}
    labels = []
    for pos, ch in enumerate(original):
        if ch != "口":
            continue
        nxt = original[pos + 1] if pos + 1 < len(original) else ""
        if nxt and nxt in mark_set:
            labels.append(pp.class_of_mark(nxt, inv))
        else:
            labels.append(pp.NONE)
    return labels


def test_labels_paper_pattern_against_oracle():
    inv = pp.default_inventory()
    meta = [(3, "，"), (7, "。")]
    seq = pp.labels_from_metadata(6, meta, inv)
    assert seq.labels == [pp.NONE, pp.NONE, pp.COMMA, pp.NONE, pp.NONE, pp.PERIOD]
    assert seq.labels == _oracle_labels(6, meta, inv)
    assert seq.dropped_marks == 0


def test_labels_empty_metadata():
    seq = pp.labels_from_metadata(3, [], pp.default_inventory())
    assert seq.labels == [pp.NONE] * 3


def test_labels_consecutive_marks_keep_first():
    inv = pp.default_inventory()
    seq = pp.labels_from_metadata(1, [(1, "」"), (2, "。")], inv)
    assert seq.labels == [pp.OTHER]
    assert seq.dropped_marks == 1
    assert seq.labels == _oracle_labels(1, [(1, "」"), (2, "。")], inv)


def test_labels_leading_mark_dropped():
    seq = pp.labels_from_metadata(1, [(0, "，")], pp.default_inventory())
    assert seq.labels == [pp.NONE]
    assert seq.dropped_marks == 1


def test_labels_random_against_oracle():
    inv = pp.default_inventory()
    rng = np.random.default_rng(1)
    pool = "甲乙丙丁" + "".join(inv.marks)
    for _ in range(200):
        n = rng.integers(1, 15)
        text = "".join(pool[i] for i in rng.integers(0, len(pool), size=n))
        stripped, meta = pp.strip_punctuation(text, inv)
        seq = pp.labels_from_metadata(len(stripped), meta, inv)
        assert seq.labels == _oracle_labels(len(stripped), meta, inv)
        # marks that label a character == metadata minus dropped ones
        labeled = sum(1 for l in seq.labels if l != pp.NONE)
        assert labeled == len(meta) - seq.dropped_marks


def test_binary_projection_preserves_none_positions():
    inv = pp.default_inventory()
    seq = pp.labels_from_metadata(6, [(3, "，"), (7, "。")], inv)
    binary = seq.binary()
    assert [l == 0 for l in binary.labels] == [l == pp.NONE for l in seq.labels]
    assert set(binary.labels) <= {0, 1}


# ---------------------------------------------------------------------------
# vocabulary


class _Rec:
    def __init__(self, text):
        self.input_text = text


def test_build_vocab_frequency_then_codepoint():
    vocab = pp.build_vocab([_Rec("甲乙"), _Rec("乙丙")], min_count=1)
    # 乙 occurs twice; 丙 (U+4E19) precedes 甲 (U+7532) in codepoint order
    assert vocab.token_to_id["乙"] == 2
    assert vocab.token_to_id["丙"] == 3
    assert vocab.token_to_id["甲"] == 4


def test_build_vocab_min_count_threshold():
    vocab = pp.build_vocab([_Rec("甲乙"), _Rec("乙丙")], min_count=2)
    assert set(vocab.token_to_id) == {pp.PAD_TOKEN, pp.UNK_TOKEN, "乙"}


def test_build_vocab_empty_corpus():
    with pytest.raises(EmptyCorpus):
        pp.build_vocab([_Rec(""), _Rec("")])


def test_encode_decode():
    vocab = pp.build_vocab([_Rec("甲乙"), _Rec("乙丙")])
    assert pp.encode("乙甲", vocab) == [2, 4]
    assert pp.encode("", vocab) == []
    assert pp.encode("龜", vocab) == [pp.UNK_ID]
    text = "甲乙丙"
    assert pp.decode(pp.encode(text, vocab), vocab) == text


def test_vocab_save_load_and_hash(tmp_path):
    vocab = pp.build_vocab([_Rec("甲乙丙")])
    path = tmp_path / "vocab.json"
    vocab.save(path)
    loaded = pp.Vocab.load(path)
    assert loaded.id_to_token == vocab.id_to_token
    assert loaded.sha256() == vocab.sha256()


# ---------------------------------------------------------------------------
# split


def test_split_spec_validation():
    with pytest.raises(ValueError):
        pp.SplitSpec(train_fraction=0.0)
    with pytest.raises(ValueError):
        pp.SplitSpec(train_fraction=1.0)


def test_split_sizes_paper_counts():
    records = list(range(341531))
    train, test = pp.split_dataset(records, pp.SplitSpec(train_fraction=0.8, seed=0))
    assert len(train) == 273225
    assert len(test) == 68306


def test_split_partition_disjoint_exhaustive():
    records = list(range(10))
    train, test = pp.split_dataset(records, pp.SplitSpec(train_fraction=0.8, seed=5))
    assert len(train) == 8 and len(test) == 2
    assert sorted(train + test) == records


def test_split_deterministic():
    records = list(range(100))
    spec = pp.SplitSpec(train_fraction=0.8, seed=42)
    first = pp.split_dataset(records, spec)
    second = pp.split_dataset(records, spec)
    assert first == second


def test_split_sizes_sum_over_random_n():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(2, 5000))
        frac = float(rng.uniform(0.05, 0.95))
        train, test = pp.split_dataset(list(range(n)), pp.SplitSpec(frac, seed=int(rng.integers(1000))))
        assert len(train) + len(test) == n


# ---------------------------------------------------------------------------
# rebalance


def test_rebalance_none_is_identity(record_factory):
    train = [record_factory("甲乙，丙。"), record_factory("丁戊己")]
    assert pp.rebalance(train, "none", seed=0) == train


def test_rebalance_oversample_duplicates_other_lines(record_factory):
    train = [record_factory("甲乙，丙。") for _ in range(9)]
    train.append(record_factory("丁戊、己。"))
    out = pp.rebalance(train, "oversample_minority", seed=0)
    other_line = train[-1]
    assert out.count(other_line) >= 2
    assert all(r in out for r in train)


def test_rebalance_undersample_without_punct_free_lines(record_factory):
    train = [record_factory("甲乙，丙。"), record_factory("丁戊、己。")]
    assert pp.rebalance(train, "undersample_majority", seed=0) == train


def test_rebalance_undersample_drops_punct_free(record_factory):
    train = [record_factory("甲乙，丙。")] + [record_factory("丁戊己庚") for _ in range(20)]
    out = pp.rebalance(train, "undersample_majority", seed=0, none_share_ceiling=0.6)
    assert len(out) < len(train)
    assert train[0] in out
