"""Corpus reading, sentence filtering, document dedup, per-language stats."""

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from domlm.errors import DataError, ParseError
from domlm.ingest import (
    SentenceRecord,
    clean_records,
    corpus_stats,
    dedup_documents,
    filter_sentence,
    read_corpus,
    write_corpus,
)


def record(text="Profit rose", lang="en", source="s", doc_id="d0", sent_id=0):
    return SentenceRecord(text=text, lang=lang, source=source, doc_id=doc_id, sent_id=sent_id)


def test_filter_rejects_letterless_text():
    assert not filter_sentence("1234 %%").accepted


def test_filter_strips_markup_tags():
    result = filter_sentence("<b>Profit rose</b>")
    assert result.accepted
    assert result.text == "Profit rose"


def test_filter_rejects_empty():
    assert not filter_sentence("").accepted


def test_filter_counts_nonascii_letters():
    assert filter_sentence("мир 123").accepted


@given(st.text(max_size=80))
def test_filter_idempotent_on_accepted_text(text):
    once = filter_sentence(text)
    if once.accepted:
        twice = filter_sentence(once.text)
        assert twice.accepted
        assert twice.text == once.text


def test_read_corpus_preserves_order_and_numbers_sentences(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text("\n".join(json.dumps({"text": t}) for t in ["a one", "b two", "c three"]) + "\n")
    records = list(read_corpus(path, lang="en"))
    assert [r.sent_id for r in records] == [0, 1, 2]
    assert [r.text for r in records] == ["a one", "b two", "c three"]
    assert all(r.lang == "en" for r in records)


def test_read_corpus_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert list(read_corpus(path)) == []


def test_read_corpus_missing_file_is_fatal(tmp_path):
    with pytest.raises(DataError):
        list(read_corpus(tmp_path / "nope.jsonl"))


def test_read_corpus_reports_bad_line_and_continues(tmp_path):
    path = tmp_path / "c.jsonl"
    lines = [json.dumps({"text": f"line {i}"}) for i in range(5)]
    lines[2] = "{not json"
    path.write_text("\n".join(lines) + "\n")
    errors = []
    records = list(read_corpus(path, on_error=errors.append))
    assert len(records) == 4
    assert len(errors) == 1
    assert errors[0].line_no == 3


def test_read_corpus_raises_without_handler(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"text": 5}\n')
    with pytest.raises(ParseError):
        list(read_corpus(path))


def test_clean_records_drops_rejects_and_rewrites_text():
    stream = [record(text="<i>ok then</i>", sent_id=0), record(text="12 34", sent_id=1)]
    cleaned = list(clean_records(stream))
    assert len(cleaned) == 1
    assert cleaned[0].text == "ok then"
    assert cleaned[0].sent_id == 0


def test_dedup_keeps_first_seen_language():
    stream = [
        record(doc_id="B", lang="en", sent_id=0),
        record(doc_id="B", lang="de", sent_id=0),
        record(doc_id="B", lang="en", sent_id=1),
    ]
    kept = list(dedup_documents(stream))
    assert [r.lang for r in kept] == ["en", "en"]


def test_dedup_passes_distinct_doc_ids_through():
    stream = [record(doc_id=f"d{i}", lang=lang) for i, lang in enumerate(["en", "de", "fr"])]
    assert list(dedup_documents(stream)) == stream


def test_dedup_collapses_translated_copies():
    stream = [record(doc_id=doc, lang="en") for doc in ("A", "B", "C")]
    stream += [record(doc_id="B", lang=lang) for lang in ("de", "fr", "ro")]
    kept = list(dedup_documents(stream))
    assert {r.doc_id for r in kept} == {"A", "B", "C"}
    assert len(kept) == 3
    langs_per_doc = {}
    for r in kept:
        langs_per_doc.setdefault(r.doc_id, set()).add(r.lang)
    assert all(len(langs) == 1 for langs in langs_per_doc.values())


def test_stats_counts_sentences_and_tokens():
    records = [record(text="a b c"), record(text="a b c d", sent_id=1)]
    stats = corpus_stats(records, tokenize=str.split)
    assert stats.sentences == {"en": 2}
    assert stats.tokens == {"en": 7}


def test_stats_empty_input():
    stats = corpus_stats([], tokenize=str.split)
    assert stats.total_sentences == 0
    assert stats.total_tokens == 0


def test_stats_partition_sums_to_total():
    records = [
        record(text="one two", lang="en"),
        record(text="ein", lang="de"),
        record(text="zwei drei", lang="de", sent_id=1),
    ]
    stats = corpus_stats(records, tokenize=str.split)
    assert stats.total_sentences == 3
    assert stats.total_tokens == stats.tokens["en"] + stats.tokens["de"]


def test_stats_rejects_unregistered_language():
    with pytest.raises(DataError):
        corpus_stats([record(lang="xx")], tokenize=str.split, languages=["en"])


def test_stats_invariant_under_reordering():
    records = [record(text="a b", lang="en", sent_id=i) for i in range(3)]
    records.append(record(text="c", lang="de", sent_id=9))
    forward = corpus_stats(records, tokenize=str.split)
    backward = corpus_stats(list(reversed(records)), tokenize=str.split)
    assert forward.sentences == backward.sentences
    assert forward.tokens == backward.tokens


def test_write_then_read_roundtrip(tmp_path):
    records = [record(sent_id=i, text=f"line {i}") for i in range(4)]
    path = tmp_path / "out.jsonl"
    assert write_corpus(path, records) == 4
    assert list(read_corpus(path)) == records
