"""Command-line entry point.

One multiplexed executable: corpus composition, vocabulary building,
tokenizer statistics, MLM pretraining, NER/classification fine-tuning,
metric evaluation, retrieval scoring, cross-domain comparison, synthetic
fixture generation, and the end-to-end pipeline.

Exit codes: 0 success, 1 data error, 2 usage error, 3 numeric failure.
"""

from __future__ import annotations

import functools
import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import click

from .checkpoint import load_encoder, model_tensors, save_adapters, save_encoder, write_checkpoint
from .compose import (
    POOL_DOMAIN_EN,
    POOL_DOMAIN_MULTI,
    POOL_GENERAL_MULTI,
    CompositionSpec,
    Strategy,
    compose,
    manifest_report,
    resolve_manifest,
    save_manifest,
)
from .encoder import Encoder, build_encoder
from .errors import DataError, NumericError
from .evaluate import (
    bio_decode,
    cross_domain_report,
    retrieve_precision_at_k,
    sentence_micro_f1,
    sentence_embeddings,
    span_micro_f1,
)
from .fixtures import SyntheticSpec, make_clf_dataset, make_ner_dataset, make_pools, make_retrieval, write_fixtures
from .ingest import SentenceRecord, clean_records, dedup_documents, read_corpus, write_corpus
from .profiles import RunProfile, get_profile
from .seeding import split_seed
from .subword import Vocabulary, build_vocab, tokenizer_gap_report
from .taskdata import (
    check_pairs_resolve,
    read_bio,
    read_classification,
    read_gold_pairs,
    read_retrieval_pool,
    split_indices,
)
from .train import (
    TrainConfig,
    encode_tagged,
    evaluate_mlm_loss,
    finetune_classify,
    finetune_ner,
    load_train_config,
    predict_tags,
    pretrain_mlm,
    tagging_span_f1,
)

POOL_NAMES = (POOL_DOMAIN_MULTI, POOL_DOMAIN_EN, POOL_GENERAL_MULTI)


class NumericFailure(click.ClickException):
    exit_code = 3


def friendly(fn):
    """Map domain errors onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NumericError as exc:
            raise NumericFailure(str(exc)) from exc
        except DataError as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


@dataclass
class AppContext:
    seed: int
    profile: RunProfile
    out: Path
    config_path: Path | None

    def stage_config(self, default: TrainConfig) -> TrainConfig:
        base = load_train_config(self.config_path) if self.config_path else default
        return replace(base, seed=self.seed)

    def ensure_out(self) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path), default=None,
              help="Training config JSON overriding the profile's stage defaults.")
@click.option("--seed", type=int, default=13, show_default=True, help="Master seed for every stage.")
@click.option("--profile", "profile_name", type=click.Choice(["paper", "desk"]), default="desk",
              show_default=True, help="Hyperparameter profile.")
@click.option("--out", type=click.Path(path_type=Path), default=Path("runs"), show_default=True,
              help="Output directory.")
@click.pass_context
def main(ctx, config_path: Path | None, seed: int, profile_name: str, out: Path):
    """Budgeted multilingual domain pretraining, fine-tuning, and analysis."""
    ctx.obj = AppContext(
        seed=seed,
        profile=get_profile(profile_name).with_seed(seed),
        out=out,
        config_path=config_path,
    )


def _load_pool_file(path: Path) -> list[SentenceRecord]:
    return list(dedup_documents(clean_records(read_corpus(path))))


def _corpus_texts(path: Path) -> list[str]:
    return [record.text for record in clean_records(read_corpus(path))]


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@main.command("compose")
@click.option("--strategy", type=click.Choice([s.value for s in Strategy]), required=True)
@click.option("--budget", type=int, default=None, help="Sentence budget (default: profile).")
@click.option("--alpha", type=float, default=None, help="Smoothing exponent (default: profile).")
@click.option("--pool", "pool_args", multiple=True, metavar="NAME=PATH",
              help=f"Pool corpus, NAME one of {', '.join(POOL_NAMES)}. Repeatable.")
@click.option("--smoothing-basis", type=click.Choice(["domain", "general"]), default="domain",
              show_default=True, help="Which pool's counts drive smoothing.")
@click.pass_obj
@friendly
def compose_cmd(app: AppContext, strategy, budget, alpha, pool_args, smoothing_basis):
    """Compose a budgeted pretraining corpus from named pools."""
    pools: dict[str, list[SentenceRecord]] = {}
    pool_paths: dict[str, list[str]] = {}
    for arg in pool_args:
        name, sep, path = arg.partition("=")
        if not sep or not name or not path:
            raise click.UsageError(f"--pool expects NAME=PATH, got {arg!r}")
        if name not in POOL_NAMES:
            raise click.UsageError(f"unknown pool name {name!r}; choose from {', '.join(POOL_NAMES)}")
        pools.setdefault(name, []).extend(_load_pool_file(Path(path)))
        pool_paths.setdefault(name, []).append(path)
    spec = CompositionSpec(
        strategy=Strategy.parse(strategy),
        budget=budget if budget is not None else app.profile.compose_budget,
        alpha=alpha if alpha is not None else app.profile.alpha,
        seed=app.seed,
        pools=pools,
        smoothing_basis=smoothing_basis,
    )
    manifest = compose(spec)
    manifest.pool_paths = pool_paths
    out = app.ensure_out()
    save_manifest(manifest, out / "manifest.json")
    write_corpus(out / "corpus.jsonl", resolve_manifest(manifest, pools))
    click.echo(manifest_report(manifest), nl=False)
    click.echo(f"manifest: {out / 'manifest.json'}")
    click.echo(f"corpus:   {out / 'corpus.jsonl'}")


@main.command("vocab")
@click.option("--corpus", "corpus_paths", multiple=True, required=True,
              type=click.Path(exists=True, path_type=Path), help="Corpus JSONL. Repeatable.")
@click.option("--size", type=int, default=None, help="Vocabulary size (default: profile).")
@click.pass_obj
@friendly
def vocab_cmd(app: AppContext, corpus_paths, size):
    """Build a subword vocabulary from corpora."""
    texts: list[str] = []
    for path in corpus_paths:
        texts.extend(_corpus_texts(path))
    vocab = build_vocab(texts, size if size is not None else app.profile.vocab_size)
    out = app.ensure_out()
    vocab.save(out / "vocab.txt")
    click.echo(f"vocabulary of {len(vocab)} tokens from {len(texts)} sentences -> {out / 'vocab.txt'}")


@main.command("tokstats")
@click.option("--vocab-a", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--vocab-b", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--general", type=click.Path(exists=True, path_type=Path), required=True,
              help="General-domain corpus JSONL.")
@click.option("--specific", type=click.Path(exists=True, path_type=Path), required=True,
              help="Domain-specific corpus JSONL.")
@click.option("--skip-nonletter", is_flag=True, help="Ignore words with no letters.")
@click.pass_obj
@friendly
def tokstats_cmd(app: AppContext, vocab_a, vocab_b, general, specific, skip_nonletter):
    """Continued-word fractions of two vocabularies on two corpora."""
    report = tokenizer_gap_report(
        Vocabulary.load(vocab_a),
        Vocabulary.load(vocab_b),
        _corpus_texts(general),
        _corpus_texts(specific),
        skip_nonletter_words=skip_nonletter,
    )
    out = app.ensure_out()
    (out / "tokstats.json").write_text(report.to_json(), encoding="utf-8")
    click.echo(report.to_text(), nl=False)


@main.command("pretrain")
@click.option("--corpus", type=click.Path(exists=True, path_type=Path), required=True,
              help="Composed corpus JSONL.")
@click.option("--vocab", "vocab_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--mode", type=click.Choice(["full", "adapter"]), default="full", show_default=True)
@click.option("--steps", type=int, default=None, help="Override the profile's step count.")
@click.option("--start", "start_path", type=click.Path(exists=True, path_type=Path), default=None,
              help="Continue from this encoder checkpoint.")
@click.option("--eval-corpus", type=click.Path(exists=True, path_type=Path), default=None,
              help="Held-out corpus to score after training.")
@click.pass_obj
@friendly
def pretrain_cmd(app: AppContext, corpus, vocab_path, mode, steps, start_path, eval_corpus):
    """Masked-language-model pretraining (full model or adapters only)."""
    vocab = Vocabulary.load(vocab_path)
    default = app.profile.pretrain_full if mode == "full" else app.profile.pretrain_adapter
    config = replace(app.stage_config(default), mode=mode)
    if steps is not None:
        config = replace(config, max_steps=steps)
    encoder_config = replace(app.profile.encoder, vocab_size=len(vocab))
    start = load_encoder(start_path)[0] if start_path else None
    texts = _corpus_texts(corpus)

    model, record = pretrain_mlm(texts, vocab, encoder_config, config, start=start)
    out = app.ensure_out()
    save_encoder(out / "encoder.ckpt", model, extra={"mode": mode})
    record.checkpoint_path = str(out / "encoder.ckpt")
    if mode == "adapter":
        save_adapters(out / "adapters.ckpt", model)
    record.save(out / "pretrain-run.json")
    if record.aborted_at_step is not None:
        raise NumericError(
            f"training aborted at step {record.aborted_at_step} on a non-finite loss; "
            f"last good checkpoint saved to {out / 'encoder.ckpt'}"
        )
    first = record.losses[0] if record.losses else float("nan")
    last = record.losses[-1] if record.losses else float("nan")
    click.echo(f"{len(record.losses)} steps, loss {first:.4f} -> {last:.4f}")
    if eval_corpus:
        loss = evaluate_mlm_loss(model, _corpus_texts(eval_corpus), vocab, config)
        click.echo(f"held-out MLM loss: {loss:.4f}")
    click.echo(f"checkpoint: {out / 'encoder.ckpt'}")


def _split_train_dev(sentences: list, fraction: float, seed: int) -> tuple[list, list]:
    if len(sentences) < 2:
        return sentences, []
    train_idx, dev_idx = split_indices(len(sentences), fraction, seed)
    return [sentences[i] for i in train_idx], [sentences[i] for i in dev_idx]


@main.command("finetune-ner")
@click.option("--train", "train_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--dev", "dev_path", type=click.Path(exists=True, path_type=Path), default=None,
              help="Dev BIO file; default splits 20% off the training set.")
@click.option("--test", "test_path", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--encoder", "encoder_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--vocab", "vocab_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--mode", type=click.Choice(["full", "adapter"]), default="full", show_default=True)
@click.pass_obj
@friendly
def finetune_ner_cmd(app: AppContext, train_path, dev_path, test_path, encoder_path, vocab_path, mode):
    """Fine-tune a token classifier on a BIO dataset."""
    encoder, _ = load_encoder(encoder_path)
    vocab = Vocabulary.load(vocab_path)
    config = replace(app.stage_config(app.profile.ner), mode=mode)
    train_set = read_bio(train_path)
    if dev_path:
        dev_set = read_bio(dev_path)
    else:
        train_set, dev_set = _split_train_dev(train_set, config.dev_fraction, split_seed(app.seed, "ner-dev"))
    model, record = finetune_ner(encoder, train_set, dev_set, vocab, config)
    out = app.ensure_out()
    write_checkpoint(
        out / "tagger.ckpt",
        model_tensors(model),
        config={"kind": "tagger", "encoder": encoder.config.to_dict(), "labels": list(model.labels)},
    )
    record.checkpoint_path = str(out / "tagger.ckpt")
    record.save(out / "ner-run.json")
    metrics = {"dev_span_f1": record.best_dev_metric}
    if test_path:
        test_encoded = [encode_tagged(s, vocab, config.max_seq_len) for s in read_bio(test_path)]
        metrics["test_span_f1"] = tagging_span_f1(
            test_encoded, predict_tags(model, test_encoded, config.micro_batch)
        )
    _write_json(out / "ner-metrics.json", metrics)
    for name, value in metrics.items():
        if value is not None:
            click.echo(f"{name}: {value:.4f}")
    click.echo(f"checkpoint: {out / 'tagger.ckpt'}")


@main.command("finetune-clf")
@click.option("--data", "data_path", type=click.Path(exists=True, path_type=Path), required=True,
              help="JSONL of {text, label}.")
@click.option("--encoder", "encoder_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--vocab", "vocab_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--mode", type=click.Choice(["full", "adapter"]), default="full", show_default=True)
@click.pass_obj
@friendly
def finetune_clf_cmd(app: AppContext, data_path, encoder_path, vocab_path, mode):
    """Grid-searched [CLS] classifier fine-tuning."""
    encoder, _ = load_encoder(encoder_path)
    vocab = Vocabulary.load(vocab_path)
    config = replace(app.stage_config(app.profile.classify), mode=mode)
    outcome = finetune_classify(
        encoder,
        read_classification(data_path),
        vocab,
        config,
        grid_batches=app.profile.clf_grid_batches,
        grid_epochs=app.profile.clf_grid_epochs,
    )
    out = app.ensure_out()
    write_checkpoint(
        out / "classifier.ckpt",
        model_tensors(outcome.model),
        config={"kind": "classifier", "encoder": encoder.config.to_dict(), "classes": list(outcome.classes)},
    )
    outcome.record.checkpoint_path = str(out / "classifier.ckpt")
    outcome.record.save(out / "clf-run.json")
    metrics = {
        "selected_batch": outcome.selected_batch,
        "selected_epochs": outcome.selected_epochs,
        "dev_micro_f1": outcome.grid_metrics[(outcome.selected_batch, outcome.selected_epochs)],
        "test_micro_f1": outcome.test_metric,
    }
    _write_json(out / "clf-metrics.json", metrics)
    click.echo(
        f"selected batch={outcome.selected_batch} epochs={outcome.selected_epochs}; "
        f"dev micro-F1 {metrics['dev_micro_f1']:.4f}, test micro-F1 {outcome.test_metric:.4f}"
    )
    click.echo(f"checkpoint: {out / 'classifier.ckpt'}")


@main.command("eval")
@click.option("--task", type=click.Choice(["ner", "clf"]), required=True)
@click.option("--gold", "gold_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--pred", "pred_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.pass_obj
@friendly
def eval_cmd(app: AppContext, task, gold_path, pred_path):
    """Score predictions against gold labels."""
    if task == "ner":
        gold, pred = read_bio(gold_path), read_bio(pred_path)
        if len(gold) != len(pred):
            raise DataError(f"gold has {len(gold)} sentences, predictions {len(pred)}")
        gold_spans, pred_spans = [], []
        for i, (g, p) in enumerate(zip(gold, pred)):
            if g.tokens != p.tokens:
                raise DataError(f"sentence {i}: token sequences differ between gold and predictions")
            gold_spans.extend(bio_decode(g.tags, sentence=i))
            pred_spans.extend(bio_decode(p.tags, sentence=i))
        result = span_micro_f1(gold_spans, pred_spans)
        payload = {"task": "ner", "precision": result.precision, "recall": result.recall, "f1": result.f1}
    else:
        gold, pred = read_classification(gold_path), read_classification(pred_path)
        micro = sentence_micro_f1([g.label for g in gold], [p.label for p in pred])
        payload = {"task": "clf", "micro_f1": micro}
    out = app.ensure_out()
    _write_json(out / "eval.json", payload)
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


@main.command("retrieve")
@click.option("--source", "source_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--target", "target_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--gold", "gold_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--vocab", "vocab_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--encoder", "encoder_path", type=click.Path(exists=True, path_type=Path), default=None,
              help="Encoder checkpoint; default is a seeded random initialization.")
@click.option("--k", type=int, default=None, help="Neighborhood size (default: profile).")
@click.option("--content-only", is_flag=True, help="Exclude [CLS]/[SEP] from pooling.")
@click.option("--layer", type=int, default=-1, show_default=True, help="Hidden layer to pool.")
@click.pass_obj
@friendly
def retrieve_cmd(app: AppContext, source_path, target_path, gold_path, vocab_path,
                 encoder_path, k, content_only, layer):
    """Cross-lingual sentence retrieval precision@k."""
    vocab = Vocabulary.load(vocab_path)
    sources = read_retrieval_pool(source_path)
    targets = read_retrieval_pool(target_path)
    pairs = read_gold_pairs(gold_path)
    check_pairs_resolve(pairs, sources, targets)
    if encoder_path:
        model, _ = load_encoder(encoder_path)
    else:
        model = build_encoder(replace(app.profile.encoder, vocab_size=len(vocab)), app.seed)
    source_ids, target_ids = list(sources), list(targets)
    kwargs = dict(vocab=vocab, max_len=model.config.max_seq_len,
                  include_special=not content_only, layer=layer)
    source_vectors = sentence_embeddings(model, [sources[i] for i in source_ids], **kwargs)
    target_vectors = sentence_embeddings(model, [targets[i] for i in target_ids], **kwargs)
    k_value = k if k is not None else app.profile.retrieval_k
    precision = retrieve_precision_at_k(source_vectors, target_vectors, source_ids, target_ids, pairs, k_value)
    payload = {"precision_at_k": precision, "k": k_value, "pairs": len(pairs),
               "encoder": str(encoder_path) if encoder_path else "random-init"}
    out = app.ensure_out()
    _write_json(out / "retrieval.json", payload)
    click.echo(f"P@{k_value} = {precision:.4f} over {len(pairs)} pairs")


@main.command("cross-domain")
@click.option("--task", type=click.Choice(["ner", "clf"]), default="ner", show_default=True)
@click.option("--checkpoint", "checkpoint_args", multiple=True, required=True, metavar="NAME=PATH",
              help="Encoder checkpoint per condition, e.g. base=..., in-domain=..., other-domain=...")
@click.option("--train", "train_path", type=click.Path(path_type=Path), default=None,
              help="BIO training set (ner task).")
@click.option("--test", "test_path", type=click.Path(path_type=Path), default=None,
              help="BIO test set (ner task).")
@click.option("--data", "data_path", type=click.Path(path_type=Path), default=None,
              help="Classification JSONL (clf task).")
@click.option("--vocab", "vocab_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.pass_obj
@friendly
def cross_domain_cmd(app: AppContext, task, checkpoint_args, train_path, test_path, data_path, vocab_path):
    """Fine-tune each pretrained variant on one task and compare metrics."""
    checkpoints: dict[str, Path] = {}
    for arg in checkpoint_args:
        name, sep, path = arg.partition("=")
        if not sep or not name or not path:
            raise click.UsageError(f"--checkpoint expects NAME=PATH, got {arg!r}")
        checkpoints[name] = Path(path)
    vocab = Vocabulary.load(vocab_path)

    if task == "ner":
        if not train_path or not test_path:
            raise click.UsageError("ner task requires --train and --test")
        config = app.stage_config(app.profile.ner)
        train_set = read_bio(train_path)
        train_set, dev_set = _split_train_dev(train_set, config.dev_fraction, split_seed(app.seed, "ner-dev"))
        test_set = read_bio(test_path)
        metric_name = "test_span_f1"

        def evaluate(path: Path) -> float:
            encoder, _ = load_encoder(path)
            model, _ = finetune_ner(encoder, train_set, dev_set, vocab, config)
            encoded = [encode_tagged(s, vocab, config.max_seq_len) for s in test_set]
            return tagging_span_f1(encoded, predict_tags(model, encoded, config.micro_batch))
    else:
        if not data_path:
            raise click.UsageError("clf task requires --data")
        config = app.stage_config(app.profile.classify)
        dataset = read_classification(data_path)
        metric_name = "test_micro_f1"

        def evaluate(path: Path) -> float:
            encoder, _ = load_encoder(path)
            outcome = finetune_classify(encoder, dataset, vocab, config,
                                        app.profile.clf_grid_batches, app.profile.clf_grid_epochs)
            return outcome.test_metric

    evaluations: dict[str, float | Exception] = {}
    for name, path in checkpoints.items():
        try:
            evaluations[name] = evaluate(path)
        except (OSError, DataError, NumericError) as exc:
            evaluations[name] = exc
    report = cross_domain_report(task, metric_name, evaluations)
    out = app.ensure_out()
    (out / "cross-domain.json").write_text(report.to_json() + "\n", encoding="utf-8")
    click.echo(report.to_text())
    if not report.ok:
        raise click.ClickException("one or more checkpoints failed to evaluate")


@main.command("fixtures")
@click.option("--spec-file", type=click.Path(exists=True, path_type=Path), default=None,
              help="JSON overriding the synthetic fixture spec.")
@click.pass_obj
@friendly
def fixtures_cmd(app: AppContext, spec_file):
    """Generate the synthetic two-domain fixture suite."""
    if spec_file:
        try:
            payload = json.loads(spec_file.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{spec_file}: invalid JSON: {exc.msg}") from exc
        spec = SyntheticSpec.from_dict({**payload, "seed": payload.get("seed", app.seed)})
    else:
        spec = app.profile.fixture
    inventory = write_fixtures(spec, app.ensure_out() / "fixtures")
    click.echo(f"{len(inventory['files'])} fixture files under {app.out / 'fixtures'}")


STRATEGY_POOLS = {
    "md": POOL_DOMAIN_MULTI,
    "ed": POOL_DOMAIN_EN,
    "general": POOL_GENERAL_MULTI,
}


@main.command("pipeline")
@click.option("--strategy", "strategy_arg", type=click.Choice(["ed", "md-ed", "md-mwiki", "all"]),
              default="all", show_default=True, help="Which pretraining corpora to run.")
@click.option("--domain", type=click.Choice(["med", "fin"]), default="med", show_default=True,
              help="The in-domain side of the fixture world.")
@click.pass_obj
@friendly
def pipeline_cmd(app: AppContext, strategy_arg, domain):
    """Fixtures -> vocab -> compose -> pretrain -> fine-tune -> metrics."""
    began = time.perf_counter()
    profile = app.profile
    out = app.ensure_out()
    strategies = [s.value for s in Strategy] if strategy_arg == "all" else [strategy_arg]

    click.echo("[1/6] fixtures")
    spec = profile.fixture
    write_fixtures(spec, out / "fixtures")
    pools = make_pools(spec)

    click.echo("[2/6] vocabulary")
    all_texts = [r.text for name in sorted(pools) for r in pools[name]]
    vocab = build_vocab(all_texts, profile.vocab_size)
    vocab.save(out / "vocab.txt")

    encoder_config = replace(profile.encoder, vocab_size=len(vocab))
    compose_pools = {
        POOL_DOMAIN_MULTI: pools[f"md-{domain}"],
        POOL_DOMAIN_EN: pools[f"ed-{domain}"],
        POOL_GENERAL_MULTI: pools["general"],
    }

    click.echo("[3/6] base encoder")
    base = build_encoder(encoder_config, app.seed)
    save_encoder(out / "base.ckpt", base)
    variants: dict[str, Encoder] = {"base": base}

    pretrain_config = app.stage_config(profile.pretrain_full)
    for strategy in strategies:
        click.echo(f"[4/6] strategy {strategy}: compose + pretrain")
        strat_dir = out / strategy
        strat_dir.mkdir(exist_ok=True)
        comp = CompositionSpec(
            strategy=Strategy.parse(strategy),
            budget=profile.compose_budget,
            alpha=profile.alpha,
            seed=app.seed,
            pools=compose_pools,
        )
        manifest = compose(comp)
        save_manifest(manifest, strat_dir / "manifest.json")
        records = resolve_manifest(manifest, compose_pools)
        write_corpus(strat_dir / "corpus.jsonl", records)
        model, record = pretrain_mlm(
            [r.text for r in records], vocab, encoder_config, pretrain_config, start=base
        )
        save_encoder(strat_dir / "encoder.ckpt", model, extra={"strategy": strategy})
        record.checkpoint_path = str(strat_dir / "encoder.ckpt")
        record.save(strat_dir / "pretrain-run.json")
        if record.aborted_at_step is not None:
            raise NumericError(f"stage pretrain[{strategy}] aborted on a non-finite loss")
        variants[strategy] = model

    click.echo("[5/6] fine-tuning and retrieval")
    metrics: dict[str, dict[str, float]] = {}

    ner_train_all, ner_test = make_ner_dataset(spec, domain)
    ner_config = replace(profile.ner, seed=app.seed)
    ner_train, ner_dev = _split_train_dev(ner_train_all, ner_config.dev_fraction, split_seed(app.seed, "ner-dev"))
    ner_row = {}
    for name, encoder in variants.items():
        tagger, _ = finetune_ner(encoder, ner_train, ner_dev, vocab, ner_config)
        encoded = [encode_tagged(s, vocab, ner_config.max_seq_len) for s in ner_test]
        ner_row[name] = tagging_span_f1(encoded, predict_tags(tagger, encoded, ner_config.micro_batch))
    metrics[f"ner-{domain}"] = ner_row

    clf_config = replace(profile.classify, seed=app.seed)
    clf_data = make_clf_dataset(spec)
    clf_row = {}
    for name, encoder in variants.items():
        outcome = finetune_classify(encoder, clf_data, vocab, clf_config,
                                    profile.clf_grid_batches, profile.clf_grid_epochs)
        clf_row[name] = outcome.test_metric
    metrics["clf"] = clf_row

    sources, targets, pairs = make_retrieval(spec, domain)
    source_ids, target_ids = list(sources), list(targets)
    retrieval_row = {}
    for name, encoder in variants.items():
        kwargs = dict(vocab=vocab, max_len=encoder.config.max_seq_len)
        source_vectors = sentence_embeddings(encoder, [sources[i] for i in source_ids], **kwargs)
        target_vectors = sentence_embeddings(encoder, [targets[i] for i in target_ids], **kwargs)
        retrieval_row[name] = retrieve_precision_at_k(
            source_vectors, target_vectors, source_ids, target_ids, pairs, profile.retrieval_k
        )
    metrics[f"retrieval-p{profile.retrieval_k}"] = retrieval_row

    click.echo("[6/6] reports")
    _write_json(out / "metrics.json", metrics)
    columns = ["base"] + strategies
    width = max(len(task) for task in metrics)
    lines = [" ".join([f"{'task':<{width}}"] + [f"{c:>10}" for c in columns])]
    for task, row in metrics.items():
        lines.append(" ".join([f"{task:<{width}}"] + [f"{row[c]:>10.4f}" for c in columns]))
    summary = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(summary, encoding="utf-8")
    _write_json(out / "run-info.json", {
        "profile": profile.name,
        "seed": app.seed,
        "domain": domain,
        "strategies": strategies,
        "wall_clock_seconds": time.perf_counter() - began,
    })
    click.echo(summary, nl=False)
    click.echo(f"run directory: {out}")


if __name__ == "__main__":
    main()
