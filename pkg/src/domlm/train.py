"""Training loops: MLM pretraining, NER tagging, and sentence classification.

Pretraining masks each example in dataset order before splitting the
effective batch into micro-batches, and normalizes every micro-loss by the
effective batch's non-empty example count — so accumulated gradients equal
single-batch gradients exactly, whatever the micro-batch size.
"""

from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .encoder import Encoder, apply_trainable_mode, build_encoder, make_masking_plan
from .errors import DataError, NumericError
from .evaluate import bio_decode, sentence_micro_f1, span_micro_f1
from .seeding import split_seed
from .subword import CLS_ID, PAD_ID, SEP_ID, Vocabulary, encode, wordpiece
from .taskdata import ClassifiedSentence, TaggedSentence, stratified_split_indices

TRAIN_CONFIG_VERSION = 1


@dataclass
class TrainConfig:
    mode: str = "full"  # "full" trains everything, "adapter" only adapters+heads
    learning_rate: float = 5e-5
    effective_batch: int = 2048
    micro_batch: int = 8
    max_steps: int = 0
    max_epochs: int = 0
    early_stop_patience: int = 25
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    max_seq_len: int = 128
    mask_rate: float = 0.15
    mask_frac: float = 0.8
    random_frac: float = 0.1
    dev_metric: str = "span_f1"  # early-stop selection: "span_f1" or "loss"
    dev_fraction: float = 0.2

    def __post_init__(self):
        if self.mode not in ("full", "adapter"):
            raise DataError(f"mode must be 'full' or 'adapter', got {self.mode!r}")
        if self.learning_rate < 0:
            raise DataError("learning_rate must be non-negative")
        if self.micro_batch <= 0 or self.effective_batch <= 0:
            raise DataError("batch sizes must be positive")
        if self.effective_batch % self.micro_batch != 0:
            raise DataError(
                f"effective_batch ({self.effective_batch}) must be divisible by "
                f"micro_batch ({self.micro_batch})"
            )
        if self.dev_metric not in ("span_f1", "loss"):
            raise DataError(f"dev_metric must be 'span_f1' or 'loss', got {self.dev_metric!r}")

    @property
    def grad_accum_steps(self) -> int:
        return self.effective_batch // self.micro_batch

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise DataError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**payload)


def save_train_config(path: Path | str, config: TrainConfig) -> None:
    payload = {"format_version": TRAIN_CONFIG_VERSION, **config.to_dict()}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_train_config(path: Path | str) -> TrainConfig:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid config JSON: {exc.msg}") from exc
    if not isinstance(payload, dict):
        raise DataError(f"{path}: config must be a JSON object")
    version = payload.pop("format_version", None)
    if version != TRAIN_CONFIG_VERSION:
        raise DataError(f"{path}: unsupported config format_version {version!r}")
    return TrainConfig.from_dict(payload)


@dataclass
class RunRecord:
    seed: int
    losses: list[float] = field(default_factory=list)
    best_dev_metric: float | None = None
    checkpoint_path: str | None = None
    wall_clock_seconds: float = 0.0
    aborted_at_step: int | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "losses": self.losses,
            "best_dev_metric": self.best_dev_metric,
            "checkpoint_path": self.checkpoint_path,
            "wall_clock_seconds": self.wall_clock_seconds,
            "aborted_at_step": self.aborted_at_step,
            "details": self.details,
        }

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


class EarlyStopper:
    """Stops after `patience` consecutive evaluations without a new best."""

    def __init__(self, patience: int, mode: str = "max"):
        if patience < 1:
            raise DataError("patience must be at least 1")
        if mode not in ("max", "min"):
            raise DataError(f"mode must be 'max' or 'min', got {mode!r}")
        self.patience = patience
        self.mode = mode
        self.best: float | None = None
        self.bad_count = 0

    def update(self, value: float) -> bool:
        improved = (
            self.best is None
            or (self.mode == "max" and value > self.best)
            or (self.mode == "min" and value < self.best)
        )
        if improved:
            self.best = value
            self.bad_count = 0
        else:
            self.bad_count += 1
        return improved

    @property
    def should_stop(self) -> bool:
        return self.bad_count >= self.patience


def select_grid(cells: dict[tuple[int, int], float]) -> tuple[int, int]:
    """Argmax cell of a hyperparameter grid; ties go to the smallest cell."""
    if not cells:
        raise DataError("empty hyperparameter grid")
    return min(cells, key=lambda cell: (-cells[cell], cell))


def repeat_runs(run: Callable[[int], float], seeds: Sequence[int]) -> "RepeatResult":
    """Run the same task under several seeds and average the final metrics."""
    if not seeds:
        raise DataError("at least one seed is required")
    per_seed = {seed: float(run(seed)) for seed in seeds}
    return RepeatResult(per_seed, sum(per_seed.values()) / len(per_seed))


@dataclass(frozen=True)
class RepeatResult:
    per_seed: dict[int, float]
    mean: float


# --- batching ------------------------------------------------------------------


def encode_texts(texts: Sequence[str], vocab: Vocabulary, max_len: int) -> list[list[int]]:
    return [encode(text, vocab, max_len).subtoken_ids for text in texts]


def pad_batch(sequences: Sequence[Sequence[int]]) -> tuple[Tensor, Tensor]:
    """Right-pad id sequences into (ids, pad_mask) tensors."""
    width = max(len(seq) for seq in sequences)
    ids = torch.full((len(sequences), width), PAD_ID, dtype=torch.long)
    for i, seq in enumerate(sequences):
        ids[i, : len(seq)] = torch.tensor(seq, dtype=torch.long)
    return ids, ids != PAD_ID


@dataclass
class MaskedExample:
    ids: list[int]
    positions: tuple[int, ...]
    originals: tuple[int, ...]


def mask_examples(
    sequences: Sequence[Sequence[int]],
    vocab_size: int,
    rng: np.random.Generator,
    config: TrainConfig,
) -> list[MaskedExample]:
    out = []
    for seq in sequences:
        plan, corrupted = make_masking_plan(
            seq, vocab_size, rng, config.mask_rate, config.mask_frac, config.random_frac
        )
        out.append(MaskedExample(corrupted, plan.positions, plan.original_ids))
    return out


def _micro_loss_sum(model: Encoder, examples: list[MaskedExample]) -> tuple[Tensor, int]:
    """Sum of per-example mean MLM losses over one micro-batch."""
    ids, pad_mask = pad_batch([ex.ids for ex in examples])
    logits = model.mlm_logits(model(ids, pad_mask).final)
    total = torch.zeros((), dtype=logits.dtype)
    contributing = 0
    for row, ex in enumerate(examples):
        if not ex.positions:
            continue
        selected = logits[row, list(ex.positions)]
        total = total + F.cross_entropy(selected, torch.tensor(ex.originals, dtype=torch.long))
        contributing += 1
    return total, contributing


def _chunks(items: list, size: int):
    for start in range(0, len(items), size):
        yield items[start : start + size]


def _clone_state(model: nn.Module) -> dict[str, Tensor]:
    return {name: tensor.detach().clone() for name, tensor in model.state_dict().items()}


def _check_gradients(model: nn.Module) -> None:
    for name, param in model.named_parameters():
        if param.grad is not None and not torch.isfinite(param.grad).all():
            raise NumericError(f"non-finite gradient in tensor {name!r}")


def make_optimizer(model: nn.Module, config: TrainConfig) -> torch.optim.Optimizer:
    params = [p for p in model.parameters() if p.requires_grad]
    if not params:
        raise DataError("no trainable parameters for the configured mode")
    return torch.optim.AdamW(
        params,
        lr=config.learning_rate,
        betas=(config.beta1, config.beta2),
        eps=config.epsilon,
        weight_decay=config.weight_decay,
    )


# --- masked-language-model pretraining ------------------------------------------


class _ExampleFeed:
    """Cycles over seeded per-epoch permutations of the dataset."""

    def __init__(self, n: int, seed: int):
        self.n = n
        self.seed = seed
        self.epoch = 0
        self.buffer: list[int] = []

    def take(self, count: int) -> list[int]:
        while len(self.buffer) < count:
            rng = np.random.default_rng(split_seed(self.seed, "order", self.epoch))
            self.buffer.extend(rng.permutation(self.n).tolist())
            self.epoch += 1
        taken, self.buffer = self.buffer[:count], self.buffer[count:]
        return taken


def pretrain_mlm(
    texts: Sequence[str],
    vocab: Vocabulary,
    encoder_config,
    config: TrainConfig,
    start: Encoder | None = None,
) -> tuple[Encoder, RunRecord]:
    """Continue (or begin) MLM pretraining and return the trained encoder.

    A non-finite loss aborts the run: the model is rolled back to the last
    good step and the record carries `aborted_at_step`.
    """
    if not texts:
        raise DataError("empty pretraining corpus")
    began = time.perf_counter()
    model = copy.deepcopy(start) if start is not None else build_encoder(encoder_config, config.seed)
    model.set_trainable_mode("all" if config.mode == "full" else "adapter")
    optimizer = make_optimizer(model, config)
    sequences = encode_texts(texts, vocab, config.max_seq_len)
    feed = _ExampleFeed(len(sequences), split_seed(config.seed, "mlm-feed"))
    mask_rng = np.random.default_rng(split_seed(config.seed, "mlm-mask"))
    record = RunRecord(seed=config.seed)
    last_good = _clone_state(model)

    model.train()
    for step in range(config.max_steps):
        batch = [sequences[i] for i in feed.take(config.effective_batch)]
        masked = mask_examples(batch, len(vocab), mask_rng, config)
        n_effective = sum(1 for ex in masked if ex.positions)
        if n_effective == 0:
            record.losses.append(0.0)
            continue
        optimizer.zero_grad()
        step_loss = 0.0
        for micro in _chunks(masked, config.micro_batch):
            loss_sum, contributing = _micro_loss_sum(model, micro)
            if contributing == 0:
                continue
            loss = loss_sum / n_effective
            loss.backward()
            step_loss += float(loss.detach())
        if not math.isfinite(step_loss):
            model.load_state_dict(last_good)
            record.aborted_at_step = step
            break
        _check_gradients(model)
        optimizer.step()
        record.losses.append(step_loss)
        last_good = _clone_state(model)

    model.eval()
    record.wall_clock_seconds = time.perf_counter() - began
    return model, record


@torch.no_grad()
def evaluate_mlm_loss(
    model: Encoder,
    texts: Sequence[str],
    vocab: Vocabulary,
    config: TrainConfig,
    mask_seed: int | None = None,
) -> float:
    """Held-out MLM loss under a deterministic, model-independent masking."""
    if not texts:
        raise DataError("empty evaluation corpus")
    model.eval()
    sequences = encode_texts(texts, vocab, config.max_seq_len)
    rng = np.random.default_rng(split_seed(mask_seed if mask_seed is not None else config.seed, "mlm-eval-mask"))
    masked = mask_examples(sequences, len(vocab), rng, config)
    total, count = 0.0, 0
    for micro in _chunks(masked, config.micro_batch):
        loss_sum, contributing = _micro_loss_sum(model, micro)
        total += float(loss_sum)
        count += contributing
    if count == 0:
        raise DataError("no maskable positions in the evaluation corpus")
    return total / count


# --- NER fine-tuning -------------------------------------------------------------


@dataclass
class EncodedTagging:
    ids: list[int]
    first_subtoken: list[int]  # one entry per covered word
    tags: tuple[str, ...]  # full gold tags, including uncovered words

    @property
    def covered(self) -> int:
        return len(self.first_subtoken)


def encode_tagged(sentence: TaggedSentence, vocab: Vocabulary, max_len: int) -> EncodedTagging:
    """Wordpiece-encode a tagged sentence, tracking first-subtoken positions.

    Words that don't fit under max_len are dropped from the input and keep
    no positions — downstream scoring counts their gold spans as missed.
    """
    ids = [CLS_ID]
    first = []
    budget = max_len - 1  # room for [SEP]
    for word in sentence.tokens:
        pieces = wordpiece(word, vocab)
        if len(ids) + len(pieces) > budget:
            break
        first.append(len(ids))
        ids.extend(vocab.id(piece) for piece in pieces)
    ids.append(SEP_ID)
    return EncodedTagging(ids, first, sentence.tags)


class TaggerModel(nn.Module):
    """Encoder plus a linear tag classifier over first-subtoken vectors."""

    def __init__(self, encoder: Encoder, labels: tuple[str, ...]):
        super().__init__()
        if len(labels) < 1:
            raise DataError("tagger needs at least one label")
        self.encoder = encoder
        self.labels = labels
        self.head = nn.Linear(encoder.config.hidden_dim, len(labels))
        nn.init.trunc_normal_(self.head.weight, std=0.02, a=-0.04, b=0.04)
        nn.init.zeros_(self.head.bias)

    def forward(self, ids: Tensor, pad_mask: Tensor) -> Tensor:
        return self.head(self.encoder(ids, pad_mask).final)

    def set_trainable_mode(self, mode: str) -> None:
        apply_trainable_mode(self, mode)


def _tagging_loss(model: TaggerModel, batch: list[EncodedTagging], label_ids: dict[str, int]) -> tuple[Tensor, int]:
    """Summed cross-entropy over covered words of one micro-batch."""
    ids, pad_mask = pad_batch([ex.ids for ex in batch])
    logits = model(ids, pad_mask)
    total = torch.zeros((), dtype=logits.dtype)
    n_words = 0
    for row, ex in enumerate(batch):
        if not ex.first_subtoken:
            continue
        selected = logits[row, ex.first_subtoken]
        targets = torch.tensor([label_ids[t] for t in ex.tags[: ex.covered]], dtype=torch.long)
        total = total + F.cross_entropy(selected, targets, reduction="sum")
        n_words += ex.covered
    return total, n_words


@torch.no_grad()
def predict_tags(
    model: TaggerModel, encoded: Sequence[EncodedTagging], micro_batch: int = 32
) -> list[list[str]]:
    """Predicted tags per sentence, one per covered word."""
    model.eval()
    out: list[list[str]] = []
    for batch in _chunks(list(encoded), micro_batch):
        ids, pad_mask = pad_batch([ex.ids for ex in batch])
        logits = model(ids, pad_mask)
        for row, ex in enumerate(batch):
            if not ex.first_subtoken:
                out.append([])
                continue
            picks = logits[row, ex.first_subtoken].argmax(dim=-1).tolist()
            out.append([model.labels[p] for p in picks])
    return out


def tagging_span_f1(encoded: Sequence[EncodedTagging], predictions: Sequence[list[str]]) -> float:
    """Span-F1 of predictions against full gold tags (uncovered words count)."""
    gold, pred = [], []
    for i, (ex, tags) in enumerate(zip(encoded, predictions)):
        gold.extend(bio_decode(ex.tags, sentence=i))
        pred.extend(bio_decode(tags, sentence=i))
    return span_micro_f1(gold, pred).f1


def finetune_ner(
    encoder: Encoder,
    train_set: Sequence[TaggedSentence],
    dev_set: Sequence[TaggedSentence],
    vocab: Vocabulary,
    config: TrainConfig,
) -> tuple[TaggerModel, RunRecord]:
    """Fine-tune a token classifier with early stopping on the dev metric."""
    if not train_set:
        raise DataError("empty NER training set")
    began = time.perf_counter()
    labels = tuple(sorted({tag for s in [*train_set, *dev_set] for tag in s.tags} | {"O"}))
    label_ids = {label: i for i, label in enumerate(labels)}

    torch.manual_seed(split_seed(config.seed, "ner-head-init"))
    model = TaggerModel(copy.deepcopy(encoder), labels)
    model.set_trainable_mode("all" if config.mode == "full" else "adapter")
    optimizer = make_optimizer(model, config)

    train_encoded = [encode_tagged(s, vocab, config.max_seq_len) for s in train_set]
    dev_encoded = [encode_tagged(s, vocab, config.max_seq_len) for s in dev_set]
    record = RunRecord(seed=config.seed)
    stopper = EarlyStopper(config.early_stop_patience, "max" if config.dev_metric == "span_f1" else "min")
    best_state = _clone_state(model)
    order_rng = np.random.default_rng(split_seed(config.seed, "ner-order"))
    epochs = config.max_epochs if config.max_epochs > 0 else 1

    for _ in range(epochs):
        model.train()
        order = order_rng.permutation(len(train_encoded)).tolist()
        for group in _chunks(order, config.effective_batch):
            examples = [train_encoded[i] for i in group]
            total_words = sum(ex.covered for ex in examples)
            if total_words == 0:
                continue
            optimizer.zero_grad()
            step_loss = 0.0
            for micro in _chunks(examples, config.micro_batch):
                loss_sum, n_words = _tagging_loss(model, micro, label_ids)
                if n_words == 0:
                    continue
                loss = loss_sum / total_words
                loss.backward()
                step_loss += float(loss.detach())
            _check_gradients(model)
            optimizer.step()
            record.losses.append(step_loss)
        if not dev_encoded:
            best_state = _clone_state(model)
            continue
        if config.dev_metric == "span_f1":
            metric = tagging_span_f1(dev_encoded, predict_tags(model, dev_encoded, config.micro_batch))
        else:
            model.eval()
            with torch.no_grad():
                sums = [_tagging_loss(model, list(micro), label_ids) for micro in _chunks(dev_encoded, config.micro_batch)]
            words = sum(n for _, n in sums)
            metric = sum(float(s) for s, _ in sums) / max(words, 1)
        if stopper.update(metric):
            best_state = _clone_state(model)
        if stopper.should_stop:
            break

    model.load_state_dict(best_state)
    model.eval()
    record.best_dev_metric = stopper.best
    record.wall_clock_seconds = time.perf_counter() - began
    record.details["labels"] = list(labels)
    return model, record


# --- sentence classification -----------------------------------------------------


class ClassifierModel(nn.Module):
    """Encoder plus a linear classifier over the leading [CLS] vector."""

    def __init__(self, encoder: Encoder, classes: tuple[str, ...]):
        super().__init__()
        if len(classes) < 2:
            raise DataError("classifier needs at least two classes")
        self.encoder = encoder
        self.classes = classes
        self.head = nn.Linear(encoder.config.hidden_dim, len(classes))
        nn.init.trunc_normal_(self.head.weight, std=0.02, a=-0.04, b=0.04)
        nn.init.zeros_(self.head.bias)

    def forward(self, ids: Tensor, pad_mask: Tensor) -> Tensor:
        return self.head(self.encoder(ids, pad_mask).final[:, 0])

    def set_trainable_mode(self, mode: str) -> None:
        apply_trainable_mode(self, mode)


def _train_classifier(
    encoder: Encoder,
    classes: tuple[str, ...],
    sequences: list[list[int]],
    labels: list[str],
    config: TrainConfig,
    batch_size: int,
    epochs: int,
) -> ClassifierModel:
    torch.manual_seed(split_seed(config.seed, "clf-head-init", batch_size, epochs))
    model = ClassifierModel(copy.deepcopy(encoder), classes)
    model.set_trainable_mode("all" if config.mode == "full" else "adapter")
    optimizer = make_optimizer(model, config)
    class_ids = {c: i for i, c in enumerate(classes)}
    order_rng = np.random.default_rng(split_seed(config.seed, "clf-order", batch_size, epochs))
    model.train()
    for _ in range(epochs):
        order = order_rng.permutation(len(sequences)).tolist()
        for group in _chunks(order, batch_size):
            ids, pad_mask = pad_batch([sequences[i] for i in group])
            targets = torch.tensor([class_ids[labels[i]] for i in group], dtype=torch.long)
            optimizer.zero_grad()
            loss = F.cross_entropy(model(ids, pad_mask), targets)
            loss.backward()
            _check_gradients(model)
            optimizer.step()
    model.eval()
    return model


@torch.no_grad()
def predict_classes(model: ClassifierModel, sequences: list[list[int]], micro_batch: int = 32) -> list[str]:
    model.eval()
    out = []
    for batch in _chunks(sequences, micro_batch):
        ids, pad_mask = pad_batch(batch)
        out.extend(model.classes[i] for i in model(ids, pad_mask).argmax(dim=-1).tolist())
    return out


@dataclass
class ClassifyOutcome:
    model: ClassifierModel
    classes: tuple[str, ...]
    selected_batch: int
    selected_epochs: int
    grid_metrics: dict[tuple[int, int], float]
    test_metric: float
    record: RunRecord


def finetune_classify(
    encoder: Encoder,
    dataset: Sequence[ClassifiedSentence],
    vocab: Vocabulary,
    config: TrainConfig,
    grid_batches: Sequence[int] = (16, 32),
    grid_epochs: Sequence[int] = (2, 4, 6),
) -> ClassifyOutcome:
    """Grid-search a [CLS] classifier by dev micro-F1 and score it on test.

    The dataset is split 80/20 into train/test, and the train side again
    80/20 into fit/dev, both stratified by label.
    """
    began = time.perf_counter()
    if len(dataset) < 5:
        raise DataError("classification dataset too small to split")
    labels_all = [item.label for item in dataset]
    train_idx, test_idx = stratified_split_indices(labels_all, 0.2, split_seed(config.seed, "clf-test-split"))
    train_labels = [labels_all[i] for i in train_idx]
    if len(set(train_labels)) < 2:
        raise DataError("training split contains fewer than two classes")
    classes = tuple(sorted(set(labels_all)))
    sequences = encode_texts([item.text for item in dataset], vocab, config.max_seq_len)

    fit_rel, dev_rel = stratified_split_indices(train_labels, config.dev_fraction, split_seed(config.seed, "clf-dev-split"))
    fit_idx = [train_idx[i] for i in fit_rel]
    dev_idx = [train_idx[i] for i in dev_rel]

    fit_seqs = [sequences[i] for i in fit_idx]
    fit_labels = [labels_all[i] for i in fit_idx]
    dev_seqs = [sequences[i] for i in dev_idx]
    dev_labels = [labels_all[i] for i in dev_idx]

    grid_metrics: dict[tuple[int, int], float] = {}
    trained: dict[tuple[int, int], ClassifierModel] = {}
    for batch_size in grid_batches:
        for epochs in grid_epochs:
            model = _train_classifier(encoder, classes, fit_seqs, fit_labels, config, batch_size, epochs)
            predictions = predict_classes(model, dev_seqs, config.micro_batch)
            grid_metrics[(batch_size, epochs)] = sentence_micro_f1(dev_labels, predictions)
            trained[(batch_size, epochs)] = model

    best = select_grid(grid_metrics)
    winner = trained[best]
    test_seqs = [sequences[i] for i in test_idx]
    test_labels = [labels_all[i] for i in test_idx]
    test_metric = sentence_micro_f1(test_labels, predict_classes(winner, test_seqs, config.micro_batch))

    record = RunRecord(seed=config.seed, best_dev_metric=grid_metrics[best])
    record.wall_clock_seconds = time.perf_counter() - began
    record.details = {
        "grid": {f"{b}x{e}": m for (b, e), m in grid_metrics.items()},
        "classes": list(classes),
        "test_size": len(test_idx),
    }
    return ClassifyOutcome(winner, classes, best[0], best[1], grid_metrics, test_metric, record)
