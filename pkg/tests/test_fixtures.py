import hashlib
from pathlib import Path

import pytest

from domlm.errors import DataError
from domlm.fixtures import (
    SyntheticSpec,
    anchor_word,
    content_word,
    make_clf_dataset,
    make_ner_dataset,
    make_pools,
    make_retrieval,
    marker_word,
    write_fixtures,
)
from domlm.taskdata import check_pairs_resolve, read_bio, read_gold_pairs, read_retrieval_pool

SPEC = SyntheticSpec(num_languages=3, sentences_per_pool=40, parallel_pairs=12, ner_sentences=40, clf_sentences=40)


def tree_digest(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def test_write_fixtures_is_byte_deterministic(tmp_path):
    write_fixtures(SPEC, tmp_path / "a")
    write_fixtures(SPEC, tmp_path / "b")
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")


def test_seed_changes_fixture_content(tmp_path):
    write_fixtures(SPEC, tmp_path / "a")
    reseeded = SyntheticSpec(**{**SPEC.to_dict(), "seed": 14})
    write_fixtures(reseeded, tmp_path / "b")
    digests_a, digests_b = tree_digest(tmp_path / "a"), tree_digest(tmp_path / "b")
    assert set(digests_a) == set(digests_b)
    assert digests_a != digests_b


def test_pool_language_slices():
    pools = make_pools(SPEC)
    assert {r.lang for r in pools["ed-med"]} == {"en"}
    assert {r.lang for r in pools["ed-fin"]} == {"en"}
    assert {r.lang for r in pools["md-med"]} == set(SPEC.languages[1:])
    assert {r.lang for r in pools["general"]} == set(SPEC.languages)


def test_pool_sizes_match_spec():
    pools = make_pools(SPEC)
    assert len(pools["ed-med"]) == SPEC.sentences_per_pool
    assert len(pools["md-med"]) == SPEC.sentences_per_pool * (SPEC.num_languages - 1)
    assert len(pools["general"]) == SPEC.sentences_per_pool * SPEC.num_languages


def test_domain_markers_stay_in_their_domain():
    pools = make_pools(SPEC)
    markers = {
        domain: {marker_word(domain, i) for i in range(SPEC.marker_vocab)} for domain in ("med", "fin")
    }
    for name, records in pools.items():
        words = {w for r in records for w in r.text.split()}
        for domain, marker_set in markers.items():
            if domain in name:
                assert words & marker_set
            else:
                assert not words & marker_set


def test_content_words_pair_with_matching_anchors():
    pools = make_pools(SPEC)
    for record in pools["general"][:50]:
        words = record.text.split()
        assert len(words) % 2 == 0
        for content, anchor in zip(words[::2], words[1::2]):
            assert content.startswith(f"{record.lang}w")
            assert anchor == "zz" + content.removeprefix(f"{record.lang}w")


def test_ner_marker_halves_are_disjoint():
    train, test = make_ner_dataset(SPEC, "med")
    def entity_words(sentences):
        return {w for s in sentences for w, t in zip(s.tokens, s.tags) if t != "O"}
    assert entity_words(train)
    assert entity_words(test)
    assert not entity_words(train) & entity_words(test)


def test_ner_entities_are_marker_runs():
    train, _ = make_ner_dataset(SPEC, "fin")
    for sentence in train:
        for word, tag in zip(sentence.tokens, sentence.tags):
            if tag != "O":
                assert tag.endswith("FIN")
                assert word.startswith("finm")
        # every I- continues a B- or I- of the same label
        for prev, cur in zip(("O",) + sentence.tags, sentence.tags):
            if cur.startswith("I-"):
                assert prev in (f"B-{cur[2:]}", cur)


def test_ner_rejects_unknown_domain():
    with pytest.raises(DataError):
        make_ner_dataset(SPEC, "legal")


def test_clf_dataset_is_balanced_and_consistent():
    items = make_clf_dataset(SPEC)
    assert len(items) == SPEC.clf_sentences
    assert sum(1 for s in items if s.label == "med") == SPEC.clf_sentences // 2
    for sentence in items:
        words = set(sentence.text.split())
        assert any(w.startswith(f"{sentence.label}m") for w in words)
        other = "fin" if sentence.label == "med" else "med"
        assert not any(w.startswith(f"{other}m") for w in words)


def test_retrieval_pairs_share_indices_not_tokens():
    sources, targets, pairs = make_retrieval(SPEC)
    assert len(pairs) == SPEC.parallel_pairs
    lang = SPEC.languages[1]
    for src_id, tgt_id in pairs:
        src_words = sources[src_id].split()
        tgt_words = targets[tgt_id].split()
        assert not set(src_words) & set(tgt_words)
        src_indices = [w.removeprefix(f"{lang}w") for w in src_words]
        tgt_indices = [w.removeprefix("enw") for w in tgt_words]
        assert src_indices == tgt_indices


def test_retrieval_texts_are_unique():
    sources, targets, _ = make_retrieval(SPEC)
    assert len(set(sources.values())) == len(sources)
    assert len(set(targets.values())) == len(targets)


def test_written_fixture_files_resolve(tmp_path):
    inventory = write_fixtures(SPEC, tmp_path)
    assert (tmp_path / "fixture.json").exists()
    for rel in inventory["files"].values():
        assert not Path(rel).is_absolute()
        assert (tmp_path / rel).exists()
    gold = read_gold_pairs(tmp_path / inventory["files"]["retrieval:gold"])
    assert len(gold) == SPEC.parallel_pairs
    sources = read_retrieval_pool(tmp_path / inventory["files"]["retrieval:source"])
    targets = read_retrieval_pool(tmp_path / inventory["files"]["retrieval:target"])
    check_pairs_resolve(gold, sources, targets)
    train = read_bio(tmp_path / inventory["files"]["ner:med-train"])
    assert len(train) == SPEC.ner_sentences // 2


def test_spec_validation():
    with pytest.raises(DataError):
        SyntheticSpec(num_languages=1)
    with pytest.raises(DataError):
        SyntheticSpec(num_languages=99)
    with pytest.raises(DataError):
        SyntheticSpec(marker_vocab=7)
    with pytest.raises(DataError):
        SyntheticSpec(vocab_per_language=2)
    with pytest.raises(DataError):
        SyntheticSpec(parallel_pairs=0)


def test_spec_dict_roundtrip():
    again = SyntheticSpec.from_dict(SPEC.to_dict())
    assert again == SPEC
    with pytest.raises(DataError):
        SyntheticSpec.from_dict({"num_languages": 3, "bogus": 1})
