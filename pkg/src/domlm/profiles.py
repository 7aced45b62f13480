"""Named run profiles binding configuration for every pipeline stage.

The "paper" profile carries the published-scale hyperparameters (batch
2048 with gradient accumulation, sequence length 128, 25k steps, lr 5e-5
full / 1e-4 adapter; NER batch 32, lr 2e-5, patience 25; classification
grid {16,32}x{2,4,6}). The "desk" profile is a documented scale-down that
completes the whole pipeline on a laptop CPU in minutes:

    stage                paper            desk        rationale
    encoder              12x768, ff 3072  2x32, ff 64 minutes-not-days budget
    sequence length      128              48          fixture sentences are short
    vocabulary           30000            2400        fixture vocabulary is tiny
    pretraining          25000 steps      600 steps   fixture loss plateaus there
    batch (effective)    2048             32          dataset is ~1e3 sentences
    learning rate        5e-5 / 1e-4      2e-3 / 3e-3 fewer steps need bigger steps
    NER epochs/patience  100 / 25         8 / 3       convergence within seconds
    classification grid  {16,32}x{2,4,6}  {8,16}x{2,4} same shape, smaller cells
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .encoder import EncoderConfig
from .errors import DataError
from .fixtures import SyntheticSpec
from .train import TrainConfig


@dataclass(frozen=True)
class RunProfile:
    name: str
    encoder: EncoderConfig
    pretrain_full: TrainConfig
    pretrain_adapter: TrainConfig
    ner: TrainConfig
    classify: TrainConfig
    clf_grid_batches: tuple[int, ...]
    clf_grid_epochs: tuple[int, ...]
    vocab_size: int
    compose_budget: int
    alpha: float
    fixture: SyntheticSpec
    retrieval_k: int = 1

    def with_seed(self, seed: int) -> "RunProfile":
        """Rebind every stage config (and the fixture spec) to one seed."""
        return replace(
            self,
            pretrain_full=replace(self.pretrain_full, seed=seed),
            pretrain_adapter=replace(self.pretrain_adapter, seed=seed),
            ner=replace(self.ner, seed=seed),
            classify=replace(self.classify, seed=seed),
            fixture=replace(self.fixture, seed=seed),
        )


def _paper() -> RunProfile:
    encoder = EncoderConfig(
        num_layers=12,
        hidden_dim=768,
        num_heads=12,
        ff_dim=3072,
        max_seq_len=128,
        vocab_size=30000,
        adapter_dim=48,
        dropout_rate=0.1,
    )
    pretrain = TrainConfig(
        mode="full",
        learning_rate=5e-5,
        effective_batch=2048,
        micro_batch=8,
        max_steps=25000,
        max_seq_len=128,
    )
    ner = TrainConfig(
        mode="full",
        learning_rate=2e-5,
        effective_batch=32,
        micro_batch=32,
        max_epochs=100,
        early_stop_patience=25,
        max_seq_len=128,
        dev_metric="span_f1",
    )
    classify = TrainConfig(
        mode="full",
        learning_rate=2e-5,
        effective_batch=32,
        micro_batch=32,
        max_seq_len=128,
    )
    return RunProfile(
        name="paper",
        encoder=encoder,
        pretrain_full=pretrain,
        pretrain_adapter=replace(pretrain, mode="adapter", learning_rate=1e-4),
        ner=ner,
        classify=classify,
        clf_grid_batches=(16, 32),
        clf_grid_epochs=(2, 4, 6),
        vocab_size=30000,
        compose_budget=10_000_000,
        alpha=0.3,
        fixture=SyntheticSpec(),
    )


def _desk() -> RunProfile:
    encoder = EncoderConfig(
        num_layers=2,
        hidden_dim=32,
        num_heads=4,
        ff_dim=64,
        max_seq_len=48,
        vocab_size=2400,
        adapter_dim=8,
        dropout_rate=0.0,
    )
    pretrain = TrainConfig(
        mode="full",
        learning_rate=2e-3,
        effective_batch=32,
        micro_batch=16,
        max_steps=600,
        max_seq_len=48,
    )
    ner = TrainConfig(
        mode="full",
        learning_rate=2e-3,
        effective_batch=16,
        micro_batch=16,
        max_epochs=8,
        early_stop_patience=3,
        max_seq_len=48,
        dev_metric="span_f1",
    )
    classify = TrainConfig(
        mode="full",
        learning_rate=2e-3,
        effective_batch=16,
        micro_batch=16,
        max_seq_len=48,
    )
    return RunProfile(
        name="desk",
        encoder=encoder,
        pretrain_full=pretrain,
        pretrain_adapter=replace(pretrain, mode="adapter", learning_rate=3e-3),
        ner=ner,
        classify=classify,
        clf_grid_batches=(8, 16),
        clf_grid_epochs=(2, 4),
        vocab_size=2400,
        compose_budget=1200,
        alpha=0.3,
        fixture=SyntheticSpec(),
    )


PROFILES = {"paper": _paper, "desk": _desk}


def get_profile(name: str) -> RunProfile:
    if name not in PROFILES:
        raise DataError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    return PROFILES[name]()
