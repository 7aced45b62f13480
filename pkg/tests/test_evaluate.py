"""Metrics: BIO spans, micro-F1, pooling, cosine retrieval, domain reports."""

import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from domlm.encoder import EncoderConfig, build_encoder
from domlm.errors import DataError
from domlm.evaluate import (
    SpanMention,
    bio_decode,
    bio_encode,
    cross_domain_report,
    mean_pool,
    rank_targets,
    retrieve_precision_at_k,
    sentence_embeddings,
    sentence_micro_f1,
    span_micro_f1,
)
from domlm.subword import SPECIAL_TOKENS, Vocabulary


def span(sentence, start, end, label="DIS"):
    return SpanMention(sentence=sentence, start=start, end=end, label=label)


spans_strategy = st.sets(
    st.builds(
        span,
        sentence=st.integers(min_value=0, max_value=3),
        start=st.integers(min_value=0, max_value=8),
        end=st.integers(min_value=9, max_value=12),
        label=st.sampled_from(["A", "B"]),
    ),
    max_size=8,
)


def test_span_requires_start_before_end():
    with pytest.raises(DataError):
        span(0, 3, 3)


def test_bio_decode_basic_span():
    assert bio_decode(["B-DIS", "I-DIS", "O"]) == [span(0, 0, 2)]


def test_bio_decode_leniently_repairs_dangling_inside():
    assert bio_decode(["O", "I-DIS"]) == [span(0, 1, 2)]


def test_bio_decode_strict_rejects_dangling_inside():
    with pytest.raises(DataError):
        bio_decode(["O", "I-DIS"], strict=True)


def test_bio_decode_adjacent_begins_make_two_spans():
    assert bio_decode(["B-A", "B-A"], sentence=2) == [span(2, 0, 1, "A"), span(2, 1, 2, "A")]


def test_bio_decode_label_change_closes_span():
    assert bio_decode(["B-A", "I-B"]) == [span(0, 0, 1, "A"), span(0, 1, 2, "B")]


def test_bio_decode_rejects_unknown_tags():
    with pytest.raises(DataError):
        bio_decode(["B-A", "WHAT"])


def test_bio_encode_known_case():
    tags = bio_encode([span(0, 1, 3, "DIS")], length=4)
    assert tags == ["O", "B-DIS", "I-DIS", "O"]


def test_bio_encode_rejects_overlaps():
    with pytest.raises(DataError):
        bio_encode([span(0, 0, 2), span(0, 1, 3)], length=4)


def test_bio_encode_rejects_out_of_range():
    with pytest.raises(DataError):
        bio_encode([span(0, 2, 5)], length=4)


@given(st.data())
@settings(max_examples=80)
def test_bio_roundtrip_on_legal_span_sets(data):
    length = data.draw(st.integers(min_value=1, max_value=12))
    spans = []
    cursor = 0
    while cursor < length:
        start = data.draw(st.integers(min_value=cursor, max_value=length - 1))
        end = data.draw(st.integers(min_value=start + 1, max_value=length))
        spans.append(span(0, start, end, data.draw(st.sampled_from(["A", "B"]))))
        cursor = end
        if data.draw(st.booleans()):
            break
    tags = bio_encode(spans, length)
    assert bio_decode(tags) == sorted(spans)


def brute_force_prf(gold, pred):
    gold, pred = list(gold), list(pred)
    if not gold and not pred:
        return 1.0, 1.0, 1.0
    matched = [False] * len(gold)
    tp = 0
    for candidate in pred:
        for i, reference in enumerate(gold):
            if not matched[i] and reference == candidate:
                matched[i] = True
                tp += 1
                break
    fp = len(pred) - tp
    fn = len(gold) - tp
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def test_span_f1_identical_sets():
    spans = [span(0, 0, 2), span(1, 3, 4, "ORG")]
    assert span_micro_f1(spans, spans) == (1.0, 1.0, 1.0)


def test_span_f1_half_right():
    gold = [span(0, 0, 2), span(0, 3, 5)]
    pred = [span(0, 0, 2), span(0, 6, 7)]
    assert span_micro_f1(gold, pred) == (0.5, 0.5, 0.5)


def test_span_f1_disjoint_sets():
    assert span_micro_f1([span(0, 0, 1)], [span(0, 5, 6)]) == (0.0, 0.0, 0.0)


def test_span_f1_both_empty_is_perfect():
    assert span_micro_f1([], []) == (1.0, 1.0, 1.0)


def test_span_f1_one_side_empty_is_zero_f1():
    result = span_micro_f1([span(0, 0, 1)], [])
    assert result.f1 == 0.0


@given(spans_strategy, spans_strategy)
@settings(max_examples=100)
def test_span_f1_matches_brute_force(gold, pred):
    got = span_micro_f1(gold, pred)
    want = brute_force_prf(gold, pred)
    assert got.precision == want[0]
    assert got.recall == want[1]
    assert got.f1 == want[2]


@given(spans_strategy, spans_strategy)
def test_span_f1_precision_recall_symmetry(gold, pred):
    assert span_micro_f1(gold, pred).precision == span_micro_f1(pred, gold).recall


@given(spans_strategy, spans_strategy)
def test_span_f1_is_harmonic_mean(gold, pred):
    result = span_micro_f1(gold, pred)
    if result.precision + result.recall > 0:
        harmonic = 2 * result.precision * result.recall / (result.precision + result.recall)
        assert abs(result.f1 - harmonic) < 1e-12


def test_sentence_f1_counts_matches():
    assert sentence_micro_f1(["a", "b", "c", "d"], ["a", "b", "c", "x"]) == 0.75
    assert sentence_micro_f1(["a"], ["a"]) == 1.0
    assert sentence_micro_f1(["a", "a"], ["b", "b"]) == 0.0


def test_sentence_f1_rejects_length_mismatch():
    with pytest.raises(DataError):
        sentence_micro_f1(["a"], ["a", "b"])


def test_sentence_f1_rejects_empty():
    with pytest.raises(DataError):
        sentence_micro_f1([], [])


def test_mean_pool_single_position():
    hidden = torch.tensor([[3.0, -1.0]])
    assert torch.equal(mean_pool(hidden, torch.tensor([True])), torch.tensor([3.0, -1.0]))


def test_mean_pool_opposite_vectors_cancel():
    hidden = torch.tensor([[2.0, -5.0], [-2.0, 5.0]])
    pooled = mean_pool(hidden, torch.tensor([True, True]))
    assert torch.equal(pooled, torch.zeros(2))


def test_mean_pool_hand_arithmetic():
    hidden = torch.tensor([[1.0, 2.0], [3.0, 4.0], [10.0, 20.0]])
    pooled = mean_pool(hidden, torch.tensor([True, True, False]))
    assert torch.equal(pooled, torch.tensor([2.0, 3.0]))


def test_mean_pool_rejects_all_pad():
    with pytest.raises(DataError):
        mean_pool(torch.ones(3, 2), torch.tensor([False, False, False]))


def test_retrieval_identity_vectors_score_one():
    rng = np.random.default_rng(5)
    vectors = rng.normal(size=(6, 4))
    ids = [f"s{i}" for i in range(6)]
    pairs = [(f"s{i}", f"s{i}") for i in range(6)]
    assert retrieve_precision_at_k(vectors, vectors, ids, ids, pairs, k=1) == 1.0


def test_retrieval_parallel_distractor_wins():
    source = np.array([[1.0, 0.0]])
    targets = np.array([[0.0, 1.0], [2.0, 0.0]])  # gold orthogonal, distractor parallel
    p = retrieve_precision_at_k(source, targets, ["s0"], ["gold", "other"], [("s0", "gold")], k=1)
    assert p == 0.0


def test_retrieval_matches_exhaustive_argmax():
    rng = np.random.default_rng(11)
    source = rng.normal(size=(5, 3))
    targets = rng.normal(size=(5, 3))
    source_ids = [f"s{i}" for i in range(5)]
    target_ids = [f"t{i}" for i in range(5)]
    pairs = [(f"s{i}", f"t{i}") for i in range(5)]

    def unit(m):
        return m / np.linalg.norm(m, axis=1, keepdims=True)

    sims = unit(source) @ unit(targets).T
    hits = sum(1 for i in range(5) if int(np.argmax(sims[i])) == i)
    expected = hits / 5
    assert retrieve_precision_at_k(source, targets, source_ids, target_ids, pairs, k=1) == expected


def test_retrieval_ties_break_by_target_id():
    source = np.array([[1.0, 0.0]])
    targets = np.array([[1.0, 0.0], [1.0, 0.0]])
    ranked = rank_targets(source, targets, ["s0"], ["t-b", "t-a"])
    assert ranked == [["t-a", "t-b"]]


def test_retrieval_monotone_in_k():
    rng = np.random.default_rng(23)
    source = rng.normal(size=(8, 4))
    targets = rng.normal(size=(10, 4))
    source_ids = [f"s{i}" for i in range(8)]
    target_ids = [f"t{i}" for i in range(10)]
    pairs = [(f"s{i}", f"t{i}") for i in range(8)]
    values = [
        retrieve_precision_at_k(source, targets, source_ids, target_ids, pairs, k=k)
        for k in range(1, 11)
    ]
    assert values == sorted(values)
    assert values[-1] == 1.0


def test_retrieval_ranking_scale_invariant():
    rng = np.random.default_rng(29)
    source = rng.normal(size=(4, 3))
    targets = rng.normal(size=(6, 3))
    ids_s = [f"s{i}" for i in range(4)]
    ids_t = [f"t{i}" for i in range(6)]
    base = rank_targets(source, targets, ids_s, ids_t)
    scaled = targets.copy()
    scaled[2] *= 37.5
    assert rank_targets(source, scaled, ids_s, ids_t) == base


def test_retrieval_rejects_zero_norm_vector():
    targets = np.array([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(DataError, match="t0"):
        retrieve_precision_at_k(np.array([[1.0, 0.0]]), targets, ["s0"], ["t0", "t1"], [("s0", "t1")], 1)


def test_retrieval_rejects_bad_k():
    vectors = np.eye(3)
    ids = ["a", "b", "c"]
    pairs = [("a", "a")]
    with pytest.raises(DataError):
        retrieve_precision_at_k(vectors, vectors, ids, ids, pairs, k=0)
    with pytest.raises(DataError):
        retrieve_precision_at_k(vectors, vectors, ids, ids, pairs, k=4)


def test_retrieval_rejects_unresolvable_pairs():
    vectors = np.eye(2)
    with pytest.raises(DataError):
        retrieve_precision_at_k(vectors, vectors, ["a", "b"], ["a", "b"], [("a", "zz")], 1)


def embedding_fixture():
    tokens = list(SPECIAL_TOKENS) + list("abcd") + ["##" + c for c in "abcd"]
    vocab = Vocabulary(tokens)
    config = EncoderConfig(
        num_layers=1, hidden_dim=8, num_heads=2, ff_dim=16,
        max_seq_len=10, vocab_size=len(vocab),
    )
    return build_encoder(config, seed=17).eval(), vocab


def test_sentence_embeddings_shape_and_determinism():
    model, vocab = embedding_fixture()
    texts = ["a b", "c d a"]
    first = sentence_embeddings(model, texts, vocab, max_len=10)
    second = sentence_embeddings(model, texts, vocab, max_len=10)
    assert first.shape == (2, 8)
    assert np.array_equal(first, second)


def test_sentence_embeddings_special_token_switch():
    model, vocab = embedding_fixture()
    with_specials = sentence_embeddings(model, ["a"], vocab, max_len=10, include_special=True)
    content_only = sentence_embeddings(model, ["a"], vocab, max_len=10, include_special=False)
    ids = torch.tensor([[0, vocab.id("a"), 1]])
    final = model(ids).final[0]
    assert np.allclose(with_specials[0], final.mean(dim=0).detach().numpy(), atol=1e-6)
    assert np.allclose(content_only[0], final[1].detach().numpy(), atol=1e-6)


def test_sentence_embeddings_layer_switch():
    model, vocab = embedding_fixture()
    final = sentence_embeddings(model, ["a b"], vocab, max_len=10, layer=-1)
    embeddings_layer = sentence_embeddings(model, ["a b"], vocab, max_len=10, layer=0)
    assert not np.allclose(final, embeddings_layer)


def test_cross_domain_report_rows():
    report = cross_domain_report("ner", "span_f1", {"base": 0.2, "med": 0.5, "fin": 0.3})
    assert report.ok
    assert report.rows == {"base": 0.2, "med": 0.5, "fin": 0.3}
    payload = json.loads(report.to_json())
    assert payload["task"] == "ner"
    assert "base" in report.to_text()


def test_cross_domain_report_captures_errors():
    report = cross_domain_report("ner", "span_f1", {"base": 0.2, "fin": DataError("missing checkpoint")})
    assert not report.ok
    assert report.rows["fin"] is None
    assert "missing checkpoint" in report.errors["fin"]
    assert "ERROR" in report.to_text()
