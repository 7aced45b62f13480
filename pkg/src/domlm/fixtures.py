"""Synthetic two-domain fixture generation for desk-scale runs.

The synthetic world has per-language content words (``enwab``, ``frwab``,
…) that are translations of each other when they share an index, shared
anchor words (``zzab``) tied one-to-one to content indices, and per-domain
marker words (``medmab``, ``finmab``) disjoint between domains. Domain
sentences mix content/anchor pairs with markers; general sentences carry no
markers. This gives pretraining a learnable structure: markers cluster by
domain and content words align across languages through their anchors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .ingest import SentenceRecord, write_corpus
from .seeding import split_seed
from .taskdata import (
    ClassifiedSentence,
    TaggedSentence,
    write_bio,
    write_classification,
    write_gold_pairs,
    write_retrieval_pool,
)

DOMAINS = ("med", "fin")
LANG_CODES = ("en", "da", "es", "fr", "ro", "it", "pt", "sv", "nl", "fi")


@dataclass(frozen=True)
class SyntheticSpec:
    num_languages: int = 3
    vocab_per_language: int = 24  # content words per language
    marker_vocab: int = 12  # markers per domain
    sentences_per_pool: int = 300  # per (language, domain) and per language in general
    parallel_pairs: int = 48
    ner_sentences: int = 240  # per domain, split into train/test halves
    clf_sentences: int = 240
    seed: int = 13

    def __post_init__(self):
        if not 2 <= self.num_languages <= len(LANG_CODES):
            raise DataError(f"num_languages must be in [2, {len(LANG_CODES)}]")
        if self.vocab_per_language < 6:
            raise DataError("vocab_per_language must be at least 6")
        if self.marker_vocab < 4 or self.marker_vocab % 2 != 0:
            raise DataError("marker_vocab must be an even number of at least 4")
        for name in ("sentences_per_pool", "parallel_pairs", "ner_sentences", "clf_sentences"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be positive")

    @property
    def languages(self) -> tuple[str, ...]:
        return LANG_CODES[: self.num_languages]

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, payload: dict) -> "SyntheticSpec":
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise DataError(f"unknown fixture spec keys: {sorted(unknown)}")
        return cls(**payload)


def _alpha(i: int) -> str:
    """0 → a, 1 → b, …, 26 → aa: a compact all-letter suffix."""
    i += 1
    out = ""
    while i:
        i, r = divmod(i - 1, 26)
        out = chr(97 + r) + out
    return out


def content_word(lang: str, index: int) -> str:
    return f"{lang}w{_alpha(index)}"


def anchor_word(index: int) -> str:
    return f"zz{_alpha(index)}"


def marker_word(domain: str, index: int) -> str:
    return f"{domain}m{_alpha(index)}"


def _content_body(rng: np.random.Generator, spec: SyntheticSpec, lang: str) -> list[str]:
    """Content words interleaved with their index-matched anchors."""
    count = int(rng.integers(3, 6))
    indices = rng.choice(spec.vocab_per_language, size=count, replace=False)
    words = []
    for index in indices.tolist():
        words.append(content_word(lang, index))
        words.append(anchor_word(index))
    return words


def domain_sentence(
    rng: np.random.Generator,
    spec: SyntheticSpec,
    lang: str,
    domain: str,
    marker_indices: list[int] | None = None,
) -> str:
    words = _content_body(rng, spec, lang)
    pool = marker_indices if marker_indices is not None else list(range(spec.marker_vocab))
    for _ in range(int(rng.integers(1, 3))):
        marker = marker_word(domain, pool[int(rng.integers(len(pool)))])
        words.insert(int(rng.integers(0, len(words) + 1)), marker)
    return " ".join(words)


def general_sentence(rng: np.random.Generator, spec: SyntheticSpec, lang: str) -> str:
    return " ".join(_content_body(rng, spec, lang))


def _records(texts: list[str], lang: str, source: str) -> list[SentenceRecord]:
    return [
        SentenceRecord(text, lang, source, f"{source}-{lang}-{i // 10:04d}", i % 10)
        for i, text in enumerate(texts)
    ]


def make_pools(spec: SyntheticSpec) -> dict[str, list[SentenceRecord]]:
    """Domain pools per domain plus one shared general pool.

    Keys: ``md-<domain>`` (multilingual domain, non-English languages),
    ``ed-<domain>`` (English domain), ``general`` (all languages, no
    markers).
    """
    pools: dict[str, list[SentenceRecord]] = {}
    for domain in DOMAINS:
        en_rng = np.random.default_rng(split_seed(spec.seed, "pool-ed", domain))
        texts = [domain_sentence(en_rng, spec, "en", domain) for _ in range(spec.sentences_per_pool)]
        pools[f"ed-{domain}"] = _records(texts, "en", f"ed-{domain}")
        multi: list[SentenceRecord] = []
        for lang in spec.languages[1:]:
            lang_rng = np.random.default_rng(split_seed(spec.seed, "pool-md", domain, lang))
            texts = [domain_sentence(lang_rng, spec, lang, domain) for _ in range(spec.sentences_per_pool)]
            multi.extend(_records(texts, lang, f"md-{domain}"))
        pools[f"md-{domain}"] = multi
    general: list[SentenceRecord] = []
    for lang in spec.languages:
        lang_rng = np.random.default_rng(split_seed(spec.seed, "pool-general", lang))
        texts = [general_sentence(lang_rng, spec, lang) for _ in range(spec.sentences_per_pool)]
        general.extend(_records(texts, lang, "general"))
    pools["general"] = general
    return pools


def make_ner_dataset(spec: SyntheticSpec, domain: str) -> tuple[list[TaggedSentence], list[TaggedSentence]]:
    """English tagged sentences where this domain's markers are entities.

    Train and test halves draw their markers from disjoint halves of the
    marker vocabulary, so generalizing requires marker representations, not
    memorized surface forms.
    """
    if domain not in DOMAINS:
        raise DataError(f"unknown domain {domain!r}")
    half = spec.marker_vocab // 2
    splits = {"train": list(range(half)), "test": list(range(half, spec.marker_vocab))}
    label = domain.upper()
    out = []
    for split, marker_pool in splits.items():
        rng = np.random.default_rng(split_seed(spec.seed, "ner", domain, split))
        sentences = []
        for _ in range(spec.ner_sentences // 2):
            words = _content_body(rng, spec, "en")
            tags = ["O"] * len(words)
            run = int(rng.integers(1, 3))
            position = int(rng.integers(0, len(words) + 1))
            chosen = rng.choice(len(marker_pool), size=run, replace=False).tolist()
            for offset, pick in enumerate(chosen):
                words.insert(position + offset, marker_word(domain, marker_pool[pick]))
                tags.insert(position + offset, ("B-" if offset == 0 else "I-") + label)
            sentences.append(TaggedSentence(tuple(words), tuple(tags)))
        out.append(sentences)
    return out[0], out[1]


def make_clf_dataset(spec: SyntheticSpec) -> list[ClassifiedSentence]:
    """English sentences labeled by the domain whose markers they carry."""
    rng = np.random.default_rng(split_seed(spec.seed, "clf"))
    items = []
    for i in range(spec.clf_sentences):
        domain = DOMAINS[i % len(DOMAINS)]
        items.append(ClassifiedSentence(domain_sentence(rng, spec, "en", domain), domain))
    order = np.random.default_rng(split_seed(spec.seed, "clf-order")).permutation(len(items))
    return [items[i] for i in order.tolist()]


def make_retrieval(
    spec: SyntheticSpec, domain: str = "med"
) -> tuple[dict[str, str], dict[str, str], list[tuple[str, str]]]:
    """Parallel content-only sentences: source language vs English.

    Pairs share content indices but no surface tokens, so alignment is
    only visible to a model that learned cross-lingual structure.
    """
    source_lang = spec.languages[1]
    rng = np.random.default_rng(split_seed(spec.seed, "retrieval", domain))
    seen: set[tuple[int, ...]] = set()
    sources: dict[str, str] = {}
    targets: dict[str, str] = {}
    pairs: list[tuple[str, str]] = []
    for i in range(spec.parallel_pairs):
        for _ in range(1000):
            count = int(rng.integers(3, 6))
            indices = tuple(rng.choice(spec.vocab_per_language, size=count, replace=False).tolist())
            if tuple(sorted(indices)) not in seen:
                seen.add(tuple(sorted(indices)))
                break
        else:
            raise DataError("could not sample enough distinct parallel pairs; enlarge the vocabulary")
        src_id, tgt_id = f"{domain}-{i:04d}-src", f"{domain}-{i:04d}-tgt"
        sources[src_id] = " ".join(content_word(source_lang, j) for j in indices)
        targets[tgt_id] = " ".join(content_word("en", j) for j in indices)
        pairs.append((src_id, tgt_id))
    return sources, targets, pairs


def write_fixtures(spec: SyntheticSpec, out_dir: Path | str) -> dict:
    """Write every fixture artifact under out_dir and return the inventory.

    File entries are relative to out_dir, so a fixture directory can be
    relocated wholesale and rerunning with the same spec reproduces it
    byte for byte.
    """
    root = Path(out_dir)
    (root / "pools").mkdir(parents=True, exist_ok=True)
    (root / "ner").mkdir(exist_ok=True)
    (root / "clf").mkdir(exist_ok=True)
    (root / "retrieval").mkdir(exist_ok=True)

    files: dict[str, str] = {}
    for name, records in make_pools(spec).items():
        path = root / "pools" / f"{name}.jsonl"
        write_corpus(path, records)
        files[f"pool:{name}"] = str(path.relative_to(root))
    for domain in DOMAINS:
        train, test = make_ner_dataset(spec, domain)
        for split, sentences in (("train", train), ("test", test)):
            path = root / "ner" / f"{domain}-{split}.bio"
            write_bio(path, sentences)
            files[f"ner:{domain}-{split}"] = str(path.relative_to(root))
    clf_path = root / "clf" / "sentences.jsonl"
    write_classification(clf_path, make_clf_dataset(spec))
    files["clf:sentences"] = str(clf_path.relative_to(root))
    sources, targets, pairs = make_retrieval(spec)
    for stem, writer, payload in (
        ("source", write_retrieval_pool, sources),
        ("target", write_retrieval_pool, targets),
    ):
        path = root / "retrieval" / f"{stem}.jsonl"
        writer(path, payload)
        files[f"retrieval:{stem}"] = str(path.relative_to(root))
    gold_path = root / "retrieval" / "gold.tsv"
    write_gold_pairs(gold_path, pairs)
    files["retrieval:gold"] = str(gold_path.relative_to(root))

    inventory = {"spec": spec.to_dict(), "languages": list(spec.languages), "files": files}
    (root / "fixture.json").write_text(json.dumps(inventory, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return inventory
