import hashlib
import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from domlm.cli import main
from domlm.ingest import SentenceRecord, write_corpus
from domlm.taskdata import TaggedSentence, write_bio, write_classification, write_gold_pairs, write_retrieval_pool
from domlm.train import TrainConfig, save_train_config

runner = CliRunner()

SMALL_SPEC = {
    "num_languages": 3,
    "vocab_per_language": 12,
    "marker_vocab": 6,
    "sentences_per_pool": 30,
    "parallel_pairs": 8,
    "ner_sentences": 24,
    "clf_sentences": 24,
}


def run(args, exit_code=0):
    result = runner.invoke(main, [str(a) for a in args])
    assert result.exit_code == exit_code, result.output
    return result


def write_pool(path: Path, texts, lang="en", source="pool"):
    records = [SentenceRecord(t, lang, source, f"{source}-{i:03d}", 0) for i, t in enumerate(texts)]
    write_corpus(path, records)
    return path


def small_fixtures(tmp_path: Path) -> Path:
    tmp_path.mkdir(parents=True, exist_ok=True)
    spec_file = tmp_path / "spec.json"
    spec_file.write_text(json.dumps(SMALL_SPEC), encoding="utf-8")
    run(["--out", tmp_path / "runs", "fixtures", "--spec-file", spec_file])
    return tmp_path / "runs" / "fixtures"


def tree_digest(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def test_help_lists_every_command():
    result = run(["--help"])
    for command in ("compose", "vocab", "tokstats", "pretrain", "finetune-ner", "finetune-clf",
                    "eval", "retrieve", "cross-domain", "fixtures", "pipeline"):
        assert command in result.output


def test_unknown_strategy_is_a_usage_error(tmp_path):
    result = run(["--out", tmp_path, "compose", "--strategy", "bogus"], exit_code=2)
    assert "bogus" in result.output


def test_unknown_pool_name_is_a_usage_error(tmp_path):
    pool = write_pool(tmp_path / "pool.jsonl", ["alpha beta gamma"])
    run(["--out", tmp_path, "compose", "--strategy", "ed", "--pool", f"nope={pool}"], exit_code=2)


def test_missing_pool_file_is_a_data_error(tmp_path):
    run(
        ["--out", tmp_path, "compose", "--strategy", "ed", "--pool", f"domain-english={tmp_path / 'absent.jsonl'}"],
        exit_code=1,
    )


def test_malformed_corpus_line_is_a_data_error(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"text": "fine", "lang": "en", "source": "s", "doc_id": "d", "sent_id": 0}\nnot json\n')
    result = run(["--out", tmp_path / "out", "vocab", "--corpus", bad], exit_code=1)
    assert "2" in result.output  # the offending line number


def test_nonfinite_pretraining_loss_exits_with_numeric_code(tmp_path):
    corpus = write_pool(tmp_path / "corpus.jsonl", ["alpha beta gamma delta"] * 16)
    run(["--out", tmp_path / "v", "vocab", "--corpus", corpus, "--size", "64"])
    config = TrainConfig(mode="full", learning_rate=1e18, effective_batch=8, micro_batch=8,
                         max_steps=3, max_seq_len=16)
    save_train_config(tmp_path / "explode.json", config)
    result = run(
        ["--config", tmp_path / "explode.json", "--out", tmp_path / "run", "pretrain",
         "--corpus", corpus, "--vocab", tmp_path / "v" / "vocab.txt"],
        exit_code=3,
    )
    assert "non-finite" in result.output
    # the last finite state was still checkpointed
    assert (tmp_path / "run" / "encoder.ckpt").exists()


def test_compose_output_is_reproducible(tmp_path):
    fixtures = small_fixtures(tmp_path)
    pools = [
        "--pool", f"domain-multilingual={fixtures / 'pools' / 'md-med.jsonl'}",
        "--pool", f"domain-english={fixtures / 'pools' / 'ed-med.jsonl'}",
        "--pool", f"general-multilingual={fixtures / 'pools' / 'general.jsonl'}",
    ]
    for out in ("a", "b"):
        run(["--out", tmp_path / out, "compose", "--strategy", "md-mwiki", "--budget", "60", *pools])
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
    assert (tmp_path / "a" / "corpus.jsonl").read_bytes() == (tmp_path / "b" / "corpus.jsonl").read_bytes()


def test_compose_reports_language_rows(tmp_path):
    fixtures = small_fixtures(tmp_path)
    result = run([
        "--out", tmp_path / "out", "compose", "--strategy", "md-ed", "--budget", "50",
        "--pool", f"domain-multilingual={fixtures / 'pools' / 'md-med.jsonl'}",
        "--pool", f"domain-english={fixtures / 'pools' / 'ed-med.jsonl'}",
    ])
    assert "md-ed" in result.output
    assert "en" in result.output
    corpus = (tmp_path / "out" / "corpus.jsonl").read_text().strip().splitlines()
    assert len(corpus) == 50


def test_eval_perfect_ner_predictions(tmp_path):
    sentences = [
        TaggedSentence(("finma", "rose"), ("B-FIN", "O")),
        TaggedSentence(("flat", "day"), ("O", "O")),
    ]
    gold = tmp_path / "gold.bio"
    write_bio(gold, sentences)
    run(["--out", tmp_path / "out", "eval", "--task", "ner", "--gold", gold, "--pred", gold])
    payload = json.loads((tmp_path / "out" / "eval.json").read_text())
    assert payload == {"task": "ner", "precision": 1.0, "recall": 1.0, "f1": 1.0}


def test_eval_clf_counts_matches(tmp_path):
    from domlm.taskdata import ClassifiedSentence

    gold = tmp_path / "gold.jsonl"
    pred = tmp_path / "pred.jsonl"
    write_classification(gold, [ClassifiedSentence("a", "x"), ClassifiedSentence("b", "y")])
    write_classification(pred, [ClassifiedSentence("a", "x"), ClassifiedSentence("b", "x")])
    run(["--out", tmp_path / "out", "eval", "--task", "clf", "--gold", gold, "--pred", pred])
    payload = json.loads((tmp_path / "out" / "eval.json").read_text())
    assert payload == {"task": "clf", "micro_f1": 0.5}


def test_eval_rejects_token_mismatch(tmp_path):
    gold = tmp_path / "gold.bio"
    pred = tmp_path / "pred.bio"
    write_bio(gold, [TaggedSentence(("one", "two"), ("O", "O"))])
    write_bio(pred, [TaggedSentence(("one", "other"), ("O", "O"))])
    run(["--out", tmp_path / "out", "eval", "--task", "ner", "--gold", gold, "--pred", pred], exit_code=1)


def test_tokstats_identical_vocabularies_report_zero_deltas(tmp_path):
    general = write_pool(tmp_path / "general.jsonl", ["plain words appear here"] * 4)
    specific = write_pool(tmp_path / "specific.jsonl", ["denosumab infusion given"] * 4)
    run(["--out", tmp_path / "v", "vocab", "--corpus", general, "--corpus", specific, "--size", "80"])
    vocab = tmp_path / "v" / "vocab.txt"
    run(["--out", tmp_path / "out", "tokstats", "--vocab-a", vocab, "--vocab-b", vocab,
         "--general", general, "--specific", specific])
    report = json.loads((tmp_path / "out" / "tokstats.json").read_text())
    assert report["delta_general"] == 0.0
    assert report["delta_specific"] == 0.0


def test_retrieve_is_perfect_when_pools_share_texts(tmp_path):
    texts = {f"s{i}": f"zzaa zzbb word{i}" for i in range(6)}
    source = tmp_path / "source.jsonl"
    target = tmp_path / "target.jsonl"
    write_retrieval_pool(source, texts)
    write_retrieval_pool(target, {f"t{i}": texts[f"s{i}"] for i in range(6)})
    gold = tmp_path / "gold.tsv"
    write_gold_pairs(gold, [(f"s{i}", f"t{i}") for i in range(6)])
    corpus = write_pool(tmp_path / "corpus.jsonl", list(texts.values()))
    run(["--out", tmp_path / "v", "vocab", "--corpus", corpus, "--size", "96"])
    run(["--out", tmp_path / "out", "retrieve", "--source", source, "--target", target,
         "--gold", gold, "--vocab", tmp_path / "v" / "vocab.txt", "--k", "1"])
    payload = json.loads((tmp_path / "out" / "retrieval.json").read_text())
    assert payload["precision_at_k"] == 1.0
    assert payload["encoder"] == "random-init"


def test_fixture_generation_is_reproducible(tmp_path):
    first = small_fixtures(tmp_path / "one")
    second = small_fixtures(tmp_path / "two")
    assert tree_digest(first) == tree_digest(second)


def test_fixtures_rejects_invalid_spec_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    run(["--out", tmp_path / "out", "fixtures", "--spec-file", bad], exit_code=1)
    bad.write_text('{"mystery_knob": 5}')
    run(["--out", tmp_path / "out", "fixtures", "--spec-file", bad], exit_code=1)


@pytest.mark.slow
def test_pipeline_single_strategy_end_to_end(tmp_path):
    config = TrainConfig(mode="full", learning_rate=2e-3, effective_batch=32, micro_batch=16,
                         max_steps=150, max_seq_len=48)
    save_train_config(tmp_path / "fast.json", config)
    args = ["--config", tmp_path / "fast.json", "--seed", "13", "pipeline", "--strategy", "ed"]
    run(["--out", tmp_path / "one", *args])
    out = tmp_path / "one"
    metrics = json.loads((out / "metrics.json").read_text())
    assert set(metrics) == {"ner-med", "clf", "retrieval-p1"}
    for row in metrics.values():
        assert set(row) == {"base", "ed"}
        for value in row.values():
            assert 0.0 <= value <= 1.0
    info = json.loads((out / "run-info.json").read_text())
    assert info["profile"] == "desk"
    assert info["strategies"] == ["ed"]
    assert (out / "summary.txt").exists()
    assert (out / "ed" / "encoder.ckpt").exists()

    run(["--out", tmp_path / "two", *args])
    assert (tmp_path / "two" / "metrics.json").read_bytes() == (out / "metrics.json").read_bytes()
    assert (tmp_path / "two" / "ed" / "manifest.json").read_bytes() == (out / "ed" / "manifest.json").read_bytes()
