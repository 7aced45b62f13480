"""Evaluation metrics: span-level F1, sentence-level micro-F1, retrieval P@k.

All functions here are pure over immutable inputs. Span scoring is exact
match on (sentence, start, end, label); retrieval ranks mean-pooled vectors
by cosine similarity with a deterministic target-id tie-break.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import torch
from torch import Tensor

from .encoder import Encoder
from .errors import DataError
from .subword import NUM_SPECIALS, PAD_ID, Vocabulary, encode


@dataclass(frozen=True, order=True)
class SpanMention:
    """A labeled (start, end) entity span; end is exclusive."""

    sentence: int
    start: int
    end: int
    label: str

    def __post_init__(self):
        if self.start < 0 or self.end <= self.start:
            raise DataError(f"degenerate span [{self.start}, {self.end})")


def bio_decode(tags: Sequence[str], sentence: int = 0, strict: bool = False) -> list[SpanMention]:
    """Extract spans from a BIO tag sequence.

    Lenient mode treats an I-X without a compatible open span as opening a
    new one (the usual shared-task scorer behavior); strict mode rejects it.
    """
    spans: list[SpanMention] = []
    open_start: int | None = None
    open_label: str | None = None

    def close(end: int):
        nonlocal open_start, open_label
        if open_start is not None:
            spans.append(SpanMention(sentence, open_start, end, open_label))
            open_start = open_label = None

    for i, tag in enumerate(tags):
        if tag == "O":
            close(i)
        elif tag.startswith("B-") and len(tag) > 2:
            close(i)
            open_start, open_label = i, tag[2:]
        elif tag.startswith("I-") and len(tag) > 2:
            label = tag[2:]
            if open_label != label:
                if strict:
                    raise DataError(f"tag {tag!r} at position {i} continues no open span")
                close(i)
                open_start, open_label = i, label
        else:
            raise DataError(f"unknown tag {tag!r} at position {i}")
    close(len(tags))
    return spans


def bio_encode(spans: Iterable[SpanMention], length: int) -> list[str]:
    """Render non-overlapping spans of one sentence as a BIO tag sequence."""
    tags = ["O"] * length
    for span in sorted(spans):
        if span.end > length:
            raise DataError(f"span [{span.start}, {span.end}) exceeds sentence length {length}")
        if any(tag != "O" for tag in tags[span.start : span.end]):
            raise DataError(f"span [{span.start}, {span.end}) overlaps another span")
        tags[span.start] = f"B-{span.label}"
        for i in range(span.start + 1, span.end):
            tags[i] = f"I-{span.label}"
    return tags


class PrecisionRecallF1(NamedTuple):
    precision: float
    recall: float
    f1: float


def span_micro_f1(gold: Iterable[SpanMention], predicted: Iterable[SpanMention]) -> PrecisionRecallF1:
    """Exact-match micro-averaged P/R/F1 over entity spans.

    Both sides empty scores 1.0 across the board; exactly one side empty
    scores 0.0.
    """
    gold_set, pred_set = set(gold), set(predicted)
    if not gold_set and not pred_set:
        return PrecisionRecallF1(1.0, 1.0, 1.0)
    tp = len(gold_set & pred_set)
    precision = tp / len(pred_set) if pred_set else 0.0
    recall = tp / len(gold_set) if gold_set else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return PrecisionRecallF1(precision, recall, f1)


def sentence_micro_f1(gold: Sequence[str], predicted: Sequence[str]) -> float:
    """Micro-F1 over sentence labels; equals accuracy for single-label data."""
    if len(gold) != len(predicted):
        raise DataError(f"gold ({len(gold)}) and predicted ({len(predicted)}) lengths differ")
    if not gold:
        raise DataError("cannot score an empty label list")
    return sum(g == p for g, p in zip(gold, predicted)) / len(gold)


# --- retrieval ----------------------------------------------------------------


def mean_pool(hidden: Tensor, pad_mask: Tensor) -> Tensor:
    """Arithmetic mean of the non-pad position vectors of one sentence."""
    if hidden.dim() != 2:
        raise DataError(f"expected a (seq, dim) tensor, got shape {tuple(hidden.shape)}")
    kept = hidden[pad_mask.bool()]
    if kept.size(0) == 0:
        raise DataError("cannot pool a fully padded sentence")
    return kept.mean(dim=0)


@torch.no_grad()
def sentence_embeddings(
    model: Encoder,
    texts: Sequence[str],
    vocab: Vocabulary,
    max_len: int,
    include_special: bool = True,
    layer: int = -1,
) -> np.ndarray:
    """Mean-pooled sentence vectors from one encoder layer (final by default)."""
    model.eval()
    vectors = []
    for text in texts:
        ids = torch.tensor([encode(text, vocab, max_len).subtoken_ids])
        pad_mask = ids != PAD_ID
        hidden = model(ids, pad_mask).hidden_states[layer][0]
        mask = pad_mask[0].clone()
        if not include_special:
            mask &= ids[0] >= NUM_SPECIALS
            if not mask.any():
                mask = pad_mask[0]
        vectors.append(mean_pool(hidden, mask).numpy())
    return np.stack(vectors)


def _unit_rows(vectors: np.ndarray, ids: Sequence[str], side: str) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1)
    for i, norm in enumerate(norms):
        if norm == 0 or not np.isfinite(norm):
            raise DataError(f"zero-norm {side} vector for sentence {ids[i]!r}")
    return vectors / norms[:, None]


def rank_targets(
    source_vectors: np.ndarray,
    target_vectors: np.ndarray,
    source_ids: Sequence[str],
    target_ids: Sequence[str],
) -> list[list[str]]:
    """Targets per source, best first; cosine ties break by target id."""
    src = _unit_rows(np.asarray(source_vectors, dtype=np.float64), source_ids, "source")
    tgt = _unit_rows(np.asarray(target_vectors, dtype=np.float64), target_ids, "target")
    sims = src @ tgt.T
    rankings = []
    for row in sims:
        order = sorted(range(len(target_ids)), key=lambda j: (-row[j], target_ids[j]))
        rankings.append([target_ids[j] for j in order])
    return rankings


def retrieve_precision_at_k(
    source_vectors: np.ndarray,
    target_vectors: np.ndarray,
    source_ids: Sequence[str],
    target_ids: Sequence[str],
    gold_pairs: Sequence[tuple[str, str]],
    k: int,
) -> float:
    """Fraction of gold pairs whose target ranks in the source's top k."""
    if k < 1 or k > len(target_ids):
        raise DataError(f"k must be in [1, {len(target_ids)}], got {k}")
    if not gold_pairs:
        raise DataError("no gold pairs to score")
    by_source = dict(zip(source_ids, range(len(source_ids))))
    target_set = set(target_ids)
    for src, tgt in gold_pairs:
        if src not in by_source:
            raise DataError(f"gold pair source id {src!r} not in the source pool")
        if tgt not in target_set:
            raise DataError(f"gold pair target id {tgt!r} not in the target pool")
    rankings = rank_targets(source_vectors, target_vectors, source_ids, target_ids)
    hits = sum(tgt in rankings[by_source[src]][:k] for src, tgt in gold_pairs)
    return hits / len(gold_pairs)


# --- reports ------------------------------------------------------------------


@dataclass
class CrossDomainReport:
    """Per-checkpoint metric rows for in-domain vs other-domain comparison."""

    task: str
    metric_name: str
    rows: dict[str, float | None]
    errors: dict[str, str]

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "metric": self.metric_name,
            "rows": self.rows,
            "errors": self.errors,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        width = max([len(name) for name in self.rows], default=10)
        lines = [f"task: {self.task} ({self.metric_name})"]
        for name in self.rows:
            value = self.rows[name]
            shown = f"{value:.4f}" if value is not None else f"ERROR: {self.errors.get(name, '?')}"
            lines.append(f"  {name.ljust(width)}  {shown}")
        return "\n".join(lines)


def cross_domain_report(
    task: str, metric_name: str, evaluations: dict[str, float | Exception]
) -> CrossDomainReport:
    """Assemble the comparison table; exceptions become explicit error rows."""
    rows: dict[str, float | None] = {}
    errors: dict[str, str] = {}
    for name, result in evaluations.items():
        if isinstance(result, Exception):
            rows[name] = None
            errors[name] = str(result)
        else:
            rows[name] = float(result)
    return CrossDomainReport(task, metric_name, rows, errors)
