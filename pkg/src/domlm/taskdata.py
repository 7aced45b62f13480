"""Labeled-dataset file formats: BIO tagging, sentence classification, retrieval.

BIO files are CoNLL-style text (``token<TAB>tag`` lines, blank line between
sentences). Classification sets are JSON lines of ``{text, label}``.
Retrieval pools are JSON lines of ``{id, text}`` with a gold alignment TSV
of ``src_id<TAB>tgt_id`` rows.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError
from .seeding import split_seed

_TAG_PATTERN = re.compile(r"^(O|[BI]-\S+)$")


@dataclass(frozen=True)
class TaggedSentence:
    tokens: tuple[str, ...]
    tags: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.tags):
            raise DataError(
                f"tokens ({len(self.tokens)}) and tags ({len(self.tags)}) differ in length"
            )


@dataclass(frozen=True)
class ClassifiedSentence:
    text: str
    label: str


def validate_tag(tag: str, path: Path | str = "<memory>", line_no: int = 0) -> str:
    if not _TAG_PATTERN.match(tag):
        raise ParseError(path, line_no, f"invalid BIO tag {tag!r}")
    return tag


def read_bio(path: Path | str) -> list[TaggedSentence]:
    """Parse a CoNLL-style BIO file into sentences."""
    sentences: list[TaggedSentence] = []
    tokens: list[str] = []
    tags: list[str] = []

    def flush():
        if tokens:
            sentences.append(TaggedSentence(tuple(tokens), tuple(tags)))
            tokens.clear()
            tags.clear()

    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                flush()
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(path, line_no, f"expected token<TAB>tag, got {line!r}")
            token, tag = parts
            if not token:
                raise ParseError(path, line_no, "empty token")
            tokens.append(token)
            tags.append(validate_tag(tag, path, line_no))
    flush()
    return sentences


def write_bio(path: Path | str, sentences: list[TaggedSentence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sentence in sentences:
            for token, tag in zip(sentence.tokens, sentence.tags):
                fh.write(f"{token}\t{tag}\n")
            fh.write("\n")


def read_classification(path: Path | str) -> list[ClassifiedSentence]:
    """Parse a JSON-lines classification dataset."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                payload = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(path, line_no, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(payload, dict):
                raise ParseError(path, line_no, "expected a JSON object")
            for key in ("text", "label"):
                if not isinstance(payload.get(key), str) or not payload.get(key):
                    raise ParseError(path, line_no, f"missing or empty {key!r} field")
            out.append(ClassifiedSentence(payload["text"], payload["label"]))
    return out


def write_classification(path: Path | str, items: list[ClassifiedSentence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps({"text": item.text, "label": item.label}, ensure_ascii=False) + "\n")


def read_retrieval_pool(path: Path | str) -> dict[str, str]:
    """Parse a JSON-lines ``{id, text}`` pool; duplicate ids are fatal."""
    pool: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                payload = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(path, line_no, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(payload, dict):
                raise ParseError(path, line_no, "expected a JSON object")
            for key in ("id", "text"):
                if not isinstance(payload.get(key), str) or not payload.get(key):
                    raise ParseError(path, line_no, f"missing or empty {key!r} field")
            if payload["id"] in pool:
                raise ParseError(path, line_no, f"duplicate sentence id {payload['id']!r}")
            pool[payload["id"]] = payload["text"]
    return pool


def write_retrieval_pool(path: Path | str, pool: dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sid, text in pool.items():
            fh.write(json.dumps({"id": sid, "text": text}, ensure_ascii=False) + "\n")


def read_gold_pairs(path: Path | str) -> list[tuple[str, str]]:
    """Parse a ``src_id<TAB>tgt_id`` alignment TSV."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise ParseError(path, line_no, f"expected src_id<TAB>tgt_id, got {line!r}")
            pairs.append((parts[0], parts[1]))
    return pairs


def write_gold_pairs(path: Path | str, pairs: list[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for src, tgt in pairs:
            fh.write(f"{src}\t{tgt}\n")


def check_pairs_resolve(pairs: list[tuple[str, str]], sources: dict, targets: dict) -> None:
    for src, tgt in pairs:
        if src not in sources:
            raise DataError(f"gold pair source id {src!r} not in the source pool")
        if tgt not in targets:
            raise DataError(f"gold pair target id {tgt!r} not in the target pool")


# --- splits -------------------------------------------------------------------


def split_indices(n: int, held_out_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Seeded (main, held-out) index split, each side in original order."""
    if not 0.0 < held_out_fraction < 1.0:
        raise DataError("held_out_fraction must be in (0, 1)")
    rng = np.random.default_rng(split_seed(seed, "split", n))
    order = rng.permutation(n)
    k = int(round(n * held_out_fraction))
    k = min(max(k, 1 if n >= 2 else 0), n - 1) if n >= 2 else 0
    held = set(order[:k].tolist())
    return [i for i in range(n) if i not in held], sorted(held)


def stratified_split_indices(
    labels: list[str], held_out_fraction: float, seed: int
) -> tuple[list[int], list[int]]:
    """Per-label seeded split; singleton classes stay on the main side."""
    by_label: dict[str, list[int]] = {}
    for i, label in enumerate(labels):
        by_label.setdefault(label, []).append(i)
    main: list[int] = []
    held: list[int] = []
    for label in sorted(by_label):
        members = by_label[label]
        if len(members) < 2:
            main.extend(members)
            continue
        rng = np.random.default_rng(split_seed(seed, "stratified-split", label, len(members)))
        order = rng.permutation(len(members))
        k = min(max(int(round(len(members) * held_out_fraction)), 1), len(members) - 1)
        chosen = {members[j] for j in order[:k].tolist()}
        held.extend(sorted(chosen))
        main.extend(m for m in members if m not in chosen)
    return sorted(main), sorted(held)
