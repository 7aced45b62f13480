"""WordPiece-style subword tokenizer with word/subtoken alignment.

Also computes the continued-words tokenizer-quality metric: the fraction
of words a tokenizer splits into two or more pieces, and the gap between
two tokenizers on general vs domain-specific text.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError

CLS, SEP, MASK, UNK, PAD = "[CLS]", "[SEP]", "[MASK]", "[UNK]", "[PAD]"
SPECIAL_TOKENS = (CLS, SEP, MASK, UNK, PAD)
CLS_ID, SEP_ID, MASK_ID, UNK_ID, PAD_ID = range(5)
NUM_SPECIALS = len(SPECIAL_TOKENS)


class Vocabulary:
    """Immutable subword inventory; ids are dense, specials reserved at 0-4."""

    def __init__(self, tokens: Sequence[str], continuation_prefix: str = "##"):
        tokens = list(tokens)
        if tuple(tokens[:NUM_SPECIALS]) != SPECIAL_TOKENS:
            raise DataError(f"first {NUM_SPECIALS} vocabulary entries must be {SPECIAL_TOKENS}")
        if len(set(tokens)) != len(tokens):
            raise DataError("vocabulary tokens must be unique")
        if any(not tok for tok in tokens):
            raise DataError("vocabulary tokens must be non-empty")
        self.tokens = tuple(tokens)
        self.continuation_prefix = continuation_prefix
        self._ids = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]

    def save(self, path) -> None:
        """One token per line, UTF-8; line number is the id."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        path = Path(path)
        if not path.exists():
            raise DataError(f"vocabulary file not found: {path}")
        tokens = path.read_text(encoding="utf-8").splitlines()
        while tokens and tokens[-1] == "":
            tokens.pop()
        return cls(tokens)


def pre_tokenize(text: str) -> list[str]:
    """Split on whitespace, then split off digit runs and symbol runs.

    Within each whitespace-delimited chunk, maximal runs of letters, of
    digits, and of everything else become separate words.
    """

    def category(ch: str) -> int:
        if ch.isalpha():
            return 0
        if ch.isdigit():
            return 1
        return 2

    words = []
    for chunk in text.split():
        start = 0
        for i in range(1, len(chunk) + 1):
            if i == len(chunk) or category(chunk[i]) != category(chunk[start]):
                words.append(chunk[start:i])
                start = i
    return words


def wordpiece(word: str, vocab: Vocabulary) -> list[str]:
    """Greedy longest-match-first subword split; unmatched words become [UNK]."""
    prefix = vocab.continuation_prefix
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        match = None
        while start < end:
            candidate = word[start:end]
            if start > 0:
                candidate = prefix + candidate
            if candidate in vocab:
                match = candidate
                break
            end -= 1
        if match is None:
            return [UNK]
        pieces.append(match)
        start = end
    return pieces


def tokenize_words(text: str, vocab: Vocabulary) -> list[str]:
    """Pre-tokenize then wordpiece; flat piece list without special tokens."""
    pieces = []
    for word in pre_tokenize(text):
        pieces.extend(wordpiece(word, vocab))
    return pieces


@dataclass(frozen=True)
class TokenizedSentence:
    """Subtoken ids with word alignment; ids start [CLS] and end [SEP]."""

    words: tuple[str, ...]
    subtoken_ids: tuple[int, ...]
    word_to_first_subtoken: dict[int, int]
    continued_flags: tuple[bool, ...]


def encode(text: str, vocab: Vocabulary, max_len: int) -> TokenizedSentence:
    """Encode text as [CLS] + pieces + [SEP], truncated to max_len.

    Truncation preserves [SEP]; a word whose first piece falls past the cut
    is dropped from the alignment (and from ``words``). ``continued_flags``
    reflect the full piece count each surviving word produced.
    """
    if max_len < 2:
        raise DataError(f"max_len must be >= 2, got {max_len}")
    all_words = pre_tokenize(text)
    piece_budget = max_len - 2
    words: list[str] = []
    flags: list[bool] = []
    alignment: dict[int, int] = {}
    flat: list[int] = []
    for word in all_words:
        if len(flat) >= piece_budget:
            break
        pieces = wordpiece(word, vocab)
        alignment[len(words)] = 1 + len(flat)  # offset 1 for [CLS]
        words.append(word)
        flags.append(len(pieces) >= 2)
        flat.extend(vocab.id(p) for p in pieces)
    flat = flat[:piece_budget]
    return TokenizedSentence(
        words=tuple(words),
        subtoken_ids=tuple([CLS_ID] + flat + [SEP_ID]),
        word_to_first_subtoken=alignment,
        continued_flags=tuple(flags),
    )


def continued_word_fraction(
    sentences: Iterable[str], vocab: Vocabulary, skip_nonletter_words: bool = False
) -> float:
    """Fraction of words the tokenizer splits into two or more pieces.

    [UNK] words count as a single piece (not continued). With
    ``skip_nonletter_words`` set, words without any letter are excluded
    from the count.
    """
    total = 0
    continued = 0
    for sentence in sentences:
        for word in pre_tokenize(sentence):
            if skip_nonletter_words and not any(ch.isalpha() for ch in word):
                continue
            total += 1
            if len(wordpiece(word, vocab)) >= 2:
                continued += 1
    if total == 0:
        raise DataError("no words found after pre-tokenization")
    return continued / total


@dataclass(frozen=True)
class GapReport:
    """Continued-word fractions of two tokenizers on two corpora."""

    fraction_a_general: float
    fraction_b_general: float
    fraction_a_specific: float
    fraction_b_specific: float

    @property
    def delta_general(self) -> float:
        return self.fraction_b_general - self.fraction_a_general

    @property
    def delta_specific(self) -> float:
        return self.fraction_b_specific - self.fraction_a_specific

    def to_dict(self) -> dict:
        return {
            "fraction_a_general": self.fraction_a_general,
            "fraction_b_general": self.fraction_b_general,
            "fraction_a_specific": self.fraction_a_specific,
            "fraction_b_specific": self.fraction_b_specific,
            "delta_general": self.delta_general,
            "delta_specific": self.delta_specific,
        }

    def to_text(self) -> str:
        rows = [
            ("general", self.fraction_a_general, self.fraction_b_general, self.delta_general),
            ("specific", self.fraction_a_specific, self.fraction_b_specific, self.delta_specific),
        ]
        lines = [f"{'corpus':<10} {'tokenizer_a':>12} {'tokenizer_b':>12} {'delta':>10}"]
        for name, fa, fb, delta in rows:
            lines.append(f"{name:<10} {fa:>12.4f} {fb:>12.4f} {delta:>10.4f}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def tokenizer_gap_report(
    vocab_a: Vocabulary,
    vocab_b: Vocabulary,
    general_corpus: Sequence[str],
    specific_corpus: Sequence[str],
    skip_nonletter_words: bool = False,
) -> GapReport:
    """Compare two tokenizers' continued-word fractions on two corpora.

    Deltas are fraction(b) - fraction(a), so a positive delta means
    tokenizer ``a`` splits less than ``b`` on that corpus.
    """
    return GapReport(
        fraction_a_general=continued_word_fraction(general_corpus, vocab_a, skip_nonletter_words),
        fraction_b_general=continued_word_fraction(general_corpus, vocab_b, skip_nonletter_words),
        fraction_a_specific=continued_word_fraction(specific_corpus, vocab_a, skip_nonletter_words),
        fraction_b_specific=continued_word_fraction(specific_corpus, vocab_b, skip_nonletter_words),
    )


def build_vocab(sentences: Iterable[str], size: int) -> Vocabulary:
    """Build a deterministic vocabulary: specials, characters, frequent pieces.

    Every character of the corpus enters in both word-initial and
    continuation form, guaranteeing [UNK]-free tokenization of the corpus.
    Remaining slots go to whole words and word substrings ranked by
    frequency (ties: longer first, then lexicographic).
    """
    word_counts: Counter[str] = Counter()
    for sentence in sentences:
        word_counts.update(pre_tokenize(sentence))
    if not word_counts:
        raise DataError("cannot build a vocabulary from an empty corpus")

    chars = sorted({ch for word in word_counts for ch in word})
    base = list(SPECIAL_TOKENS) + chars + ["##" + ch for ch in chars]
    if size < len(base):
        raise DataError(
            f"vocabulary size {size} too small: need at least {len(base)} for "
            f"specials plus the corpus alphabet"
        )

    candidate_counts: Counter[str] = Counter()
    for word, count in word_counts.items():
        for start in range(len(word)):
            for end in range(start + 2, len(word) + 1):
                piece = word[start:end] if start == 0 else "##" + word[start:end]
                candidate_counts[piece] += count

    taken = set(base)
    tokens = list(base)
    ranked = sorted(
        candidate_counts.items(), key=lambda item: (-item[1], -len(item[0]), item[0])
    )
    for piece, _ in ranked:
        if len(tokens) >= size:
            break
        if piece not in taken:
            taken.add(piece)
            tokens.append(piece)
    return Vocabulary(tokens)
