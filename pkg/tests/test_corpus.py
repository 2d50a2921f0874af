import json

import pytest

from conftest import FIXTURES, synthetic_pairs
from tm_prompting.corpus import (
    CorpusSplit,
    LangPair,
    NormalizationRules,
    RejectReason,
    Rejection,
    SentencePair,
    corpus_checksum,
    ingest,
    load_corpus,
    load_split,
    normalize_pair,
    save_split,
    split_corpus,
)
from tm_prompting.errors import CorpusError, SplitFormatError


# ---------------------------------------------------------------------------
# load_corpus
# ---------------------------------------------------------------------------

def test_tsv_line_maps_to_pair(tmp_path):
    path = tmp_path / "c.tsv"
    path.write_text("Hallo\tHello\nTschüss\tBye\n", encoding="utf-8")
    assert load_corpus(path, "tsv") == [SentencePair(0, "Hallo", "Hello"), SentencePair(1, "Tschüss", "Bye")]


def test_tsv_keeps_raw_text_except_line_terminator(tmp_path):
    path = tmp_path / "c.tsv"
    path.write_bytes(b" a  b \t x \r\n")
    assert load_corpus(path, "tsv") == [SentencePair(0, " a  b ", " x ")]


def test_tsv_with_extra_tabs_reports_line_number(tmp_path):
    path = tmp_path / "c.tsv"
    path.write_text("a\tb\nx\ty\tz\tw\n", encoding="utf-8")
    with pytest.raises(CorpusError) as excinfo:
        load_corpus(path, "tsv")
    assert excinfo.value.line_number == 2
    assert "line 2" in excinfo.value.message


def test_paired_files_in_order(tmp_path):
    src, tgt = tmp_path / "c.de", tmp_path / "c.en"
    src.write_text("eins\nzwei\n", encoding="utf-8")
    tgt.write_text("one\ntwo\n", encoding="utf-8")
    pairs = load_corpus(src, "paired", target_path=tgt)
    assert [(p.id, p.source, p.target) for p in pairs] == [(0, "eins", "one"), (1, "zwei", "two")]


def test_paired_files_line_count_mismatch(tmp_path):
    src, tgt = tmp_path / "c.de", tmp_path / "c.en"
    src.write_text("eins\nzwei\n", encoding="utf-8")
    tgt.write_text("one\n", encoding="utf-8")
    with pytest.raises(CorpusError, match="line count mismatch"):
        load_corpus(src, "paired", target_path=tgt)


def test_jsonl_requires_source_and_target(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"source": "a", "target": "b"}\n{"source": "c"}\n', encoding="utf-8")
    with pytest.raises(CorpusError) as excinfo:
        load_corpus(path, "jsonl")
    assert excinfo.value.line_number == 2


def test_empty_file_is_an_error(tmp_path):
    path = tmp_path / "empty.tsv"
    path.write_text("", encoding="utf-8")
    with pytest.raises(CorpusError, match="empty"):
        load_corpus(path, "tsv")


# ---------------------------------------------------------------------------
# normalize_pair / ingest
# ---------------------------------------------------------------------------

def test_normalize_unescapes_and_trims():
    assert normalize_pair(SentencePair(0, "a &amp; b ", "x")) == SentencePair(0, "a & b", "x")


def test_normalize_collapses_whitespace():
    assert normalize_pair(SentencePair(0, "x\t\ty", "z")).source == "x y"


def test_normalize_rejects_blank_side():
    assert normalize_pair(SentencePair(3, "   ", "x")) == Rejection(3, RejectReason.EMPTY)


def test_normalize_rejects_long_pairs():
    rules = NormalizationRules(max_tokens=3)
    assert normalize_pair(SentencePair(0, "one two three four", "x"), rules) == Rejection(0, RejectReason.TOO_LONG)


@pytest.mark.parametrize("text", ["&amp;lt;b&amp;gt;", "  &quot;q&quot;  ", "a \n\n b", "&amp;amp;amp;", "plain"])
def test_normalize_is_idempotent(text):
    once = normalize_pair(SentencePair(0, text, "t"))
    assert normalize_pair(once) == once


def test_over_escaped_entities_decode_fully():
    pair = normalize_pair(SentencePair(0, "x &amp;quot;y&amp;quot; &amp;amp;lt;", "t"))
    assert pair.source == "x \"y\" <"


def test_unknown_entities_pass_through():
    assert normalize_pair(SentencePair(0, "a&nbsp;b", "t")).source == "a&nbsp;b"


def test_ingest_counts_rejections_and_duplicates():
    pairs = [
        SentencePair(0, "a", "b"),
        SentencePair(1, " ", "b"),
        SentencePair(2, "a ", " b"),
        SentencePair(3, "c", "d"),
    ]
    kept, stats = ingest(pairs, NormalizationRules(reject_duplicates=True))
    assert [p.id for p in kept] == [0, 3]
    assert stats.kept == 2
    assert stats.to_dict()["rejected"] == {"duplicate": 1, "empty-after-normalization": 1}


def test_ingest_keeps_duplicates_by_default():
    kept, stats = ingest([SentencePair(0, "a", "b"), SentencePair(1, "a", "b")])
    assert len(kept) == 2 and not stats.rejected


# ---------------------------------------------------------------------------
# split_corpus
# ---------------------------------------------------------------------------

def test_split_is_deterministic(de_en):
    corpus = synthetic_pairs(10)
    assert split_corpus(corpus, 3, 7, de_en) == split_corpus(corpus, 3, 7, de_en)


def test_split_partitions_ids(de_en):
    corpus = synthetic_pairs(50)
    split = split_corpus(corpus, 20, 1, de_en)
    test_ids = {p.id for p in split.test_set}
    tm_ids = {p.id for p in split.tm_database}
    assert len(split.test_set) == 20
    assert not test_ids & tm_ids
    assert test_ids | tm_ids == {p.id for p in corpus}


def test_split_size_zero(de_en):
    corpus = synthetic_pairs(5)
    split = split_corpus(corpus, 0, 0, de_en)
    assert split.test_set == () and split.tm_database == tuple(corpus)


def test_split_whole_corpus_is_an_error(de_en):
    with pytest.raises(CorpusError):
        split_corpus(synthetic_pairs(5), 5, 0, de_en)


def test_different_seeds_give_different_splits(de_en):
    corpus = synthetic_pairs(100)
    assert split_corpus(corpus, 10, 1, de_en).test_set != split_corpus(corpus, 10, 2, de_en).test_set


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_split_round_trip(tmp_path, de_en):
    split = split_corpus(synthetic_pairs(30), 5, 42, de_en)
    save_split(split, tmp_path / "s")
    assert load_split(tmp_path / "s") == split


def test_split_round_trip_with_empty_test_set(tmp_path, de_en):
    split = CorpusSplit((), tuple(synthetic_pairs(3)), seed=1, lang=de_en)
    save_split(split, tmp_path / "s")
    assert load_split(tmp_path / "s") == split


def test_wrong_magic_is_rejected(tmp_path, de_en):
    save_split(split_corpus(synthetic_pairs(5), 1, 0, de_en), tmp_path / "s")
    manifest_path = tmp_path / "s" / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    manifest["magic"] = "something-else"
    manifest_path.write_text(json.dumps(manifest))
    with pytest.raises(SplitFormatError):
        load_split(tmp_path / "s")


def test_version_mismatch_is_rejected(tmp_path, de_en):
    save_split(split_corpus(synthetic_pairs(5), 1, 0, de_en), tmp_path / "s")
    manifest_path = tmp_path / "s" / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    manifest["format_version"] = 99
    manifest_path.write_text(json.dumps(manifest))
    with pytest.raises(SplitFormatError, match="version"):
        load_split(tmp_path / "s")


def test_flipped_byte_fails_checksum(tmp_path, de_en):
    save_split(split_corpus(synthetic_pairs(5), 1, 0, de_en), tmp_path / "s")
    tm_path = tmp_path / "s" / "tm.jsonl"
    data = bytearray(tm_path.read_bytes())
    position = data.index(b'"source": "') + len(b'"source": "')
    data[position] = ord("X") if data[position] != ord("X") else ord("Y")
    tm_path.write_bytes(bytes(data))
    with pytest.raises(SplitFormatError, match="checksum"):
        load_split(tmp_path / "s")


def test_committed_fixture_split_loads():
    split = load_split(FIXTURES / "de-en-mini")
    assert len(split.test_set) == 4 and len(split.tm_database) == 12
    assert split.lang == LangPair.from_codes("de", "en")


def test_checksum_depends_on_content():
    pairs = synthetic_pairs(4)
    assert corpus_checksum(pairs) == corpus_checksum(list(pairs))
    assert corpus_checksum(pairs) != corpus_checksum(pairs[:3])


def test_lang_pair_validation():
    with pytest.raises(CorpusError):
        LangPair("en", "en", "English", "English")
    with pytest.raises(CorpusError):
        LangPair.from_codes("en", "xx")
    assert LangPair.from_codes("en", "de").tgt_name == "German"
