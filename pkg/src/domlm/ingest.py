"""Read raw corpora, filter sentences, deduplicate documents across languages.

Corpus files are JSON-lines, one object per sentence, UTF-8. Canonical files
carry ``text``, ``lang``, ``source``, ``doc_id``, ``sent_id``; only ``text``
is required on read (the rest fall back to call arguments / counters).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

from .errors import DataError, ParseError

_TAG_RE = re.compile(r"<[^>]*>")


@dataclass(frozen=True)
class SentenceRecord:
    """One unit of pretraining text with language and provenance metadata."""

    text: str
    lang: str
    source: str
    doc_id: str
    sent_id: int

    def key(self) -> tuple[str, str, int]:
        """Stable reference triple used by corpus manifests."""
        return (self.source, self.doc_id, self.sent_id)


@dataclass(frozen=True)
class FilterResult:
    accepted: bool
    text: str


def filter_sentence(text: str) -> FilterResult:
    """Strip markup tags and reject sentences without a Unicode letter.

    Tag stripping removes ``<...>`` substrings non-greedily; the letter test
    uses the Unicode Letter category, not ASCII. Total function, idempotent
    on accepted text.
    """
    cleaned = _TAG_RE.sub("", text).strip()
    accepted = any(ch.isalpha() for ch in cleaned)
    return FilterResult(accepted=accepted, text=cleaned if accepted else "")


def read_corpus(
    path,
    lang: str = "",
    source: str = "",
    on_error: Callable[[ParseError], None] | None = None,
) -> Iterator[SentenceRecord]:
    """Yield sentence records from a JSON-lines corpus file in file order.

    ``lang`` and ``source`` are defaults for records that omit those keys;
    ``doc_id`` defaults to the file stem and ``sent_id`` to a sequential
    per-document counter, so bare ``{"text": ...}`` shards read as one
    document with sentences numbered 0, 1, 2, ...

    Malformed lines raise ParseError, or are reported to ``on_error`` and
    skipped when a handler is given. A missing file is fatal.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"corpus file not found: {path}")
    default_source = source or path.stem
    next_sent_id: dict[str, int] = {}
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                record = _parse_line(line, path, line_no, lang, default_source, next_sent_id)
            except ParseError as err:
                if on_error is None:
                    raise
                on_error(err)
                continue
            yield record


def _parse_line(line, path, line_no, lang, source, next_sent_id) -> SentenceRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as err:
        raise ParseError(path, line_no, f"invalid JSON ({err.msg})") from err
    if not isinstance(obj, dict):
        raise ParseError(path, line_no, "expected a JSON object")
    text = obj.get("text")
    if not isinstance(text, str):
        raise ParseError(path, line_no, "missing or non-string 'text'")
    rec_lang = obj.get("lang", lang)
    rec_source = obj.get("source", source)
    doc_id = obj.get("doc_id", path.stem)
    if not isinstance(rec_lang, str) or not isinstance(rec_source, str) or not isinstance(doc_id, str):
        raise ParseError(path, line_no, "'lang', 'source' and 'doc_id' must be strings")
    sent_id = obj.get("sent_id")
    if sent_id is None:
        sent_id = next_sent_id.get(doc_id, 0)
    elif not isinstance(sent_id, int) or isinstance(sent_id, bool) or sent_id < 0:
        raise ParseError(path, line_no, "'sent_id' must be a non-negative integer")
    next_sent_id[doc_id] = sent_id + 1
    return SentenceRecord(text=text, lang=rec_lang, source=rec_source, doc_id=doc_id, sent_id=sent_id)


def clean_records(records: Iterable[SentenceRecord]) -> Iterator[SentenceRecord]:
    """Apply the sentence filter to a record stream, dropping rejects.

    Surviving records satisfy the SentenceRecord invariants: non-empty
    trimmed text containing at least one Unicode letter.
    """
    for record in records:
        result = filter_sentence(record.text)
        if result.accepted:
            if result.text == record.text:
                yield record
            else:
                yield SentenceRecord(result.text, record.lang, record.source, record.doc_id, record.sent_id)


def dedup_documents(records: Iterable[SentenceRecord]) -> Iterator[SentenceRecord]:
    """Keep only the first-seen language's sentences for each doc_id.

    Deterministic given input order; a document may continue in its own
    language later in the stream, but any other language's copy is dropped.
    """
    first_lang: dict[str, str] = {}
    for record in records:
        if first_lang.setdefault(record.doc_id, record.lang) == record.lang:
            yield record


@dataclass
class CorpusStats:
    """Per-language sentence and token counts for a record stream."""

    sentences: dict[str, int] = field(default_factory=dict)
    tokens: dict[str, int] = field(default_factory=dict)

    @property
    def total_sentences(self) -> int:
        return sum(self.sentences.values())

    @property
    def total_tokens(self) -> int:
        return sum(self.tokens.values())


def corpus_stats(
    records: Iterable[SentenceRecord],
    tokenize: Callable[[str], list],
    languages: Iterable[str] | None = None,
) -> CorpusStats:
    """Count sentences and subword tokens per language.

    ``tokenize`` maps text to its subword pieces (no special tokens). When
    ``languages`` is given, a record outside that set is fatal.
    """
    registered = set(languages) if languages is not None else None
    stats = CorpusStats()
    for record in records:
        if registered is not None and record.lang not in registered:
            raise DataError(f"unregistered language code: {record.lang!r}")
        stats.sentences[record.lang] = stats.sentences.get(record.lang, 0) + 1
        stats.tokens[record.lang] = stats.tokens.get(record.lang, 0) + len(tokenize(record.text))
    return stats


def write_corpus(path, records: Iterable[SentenceRecord]) -> int:
    """Write records as canonical five-key JSON lines; returns the count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(
                json.dumps(
                    {
                        "text": record.text,
                        "lang": record.lang,
                        "source": record.source,
                        "doc_id": record.doc_id,
                        "sent_id": record.sent_id,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
            count += 1
    return count
