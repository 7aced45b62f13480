"""Small transformer encoder with an MLM head and optional bottleneck adapters.

Post-norm layers: attention, add & norm, feed-forward, add & norm. With
adapters enabled, each layer computes h = norm_ff(a + ff), passes it through
down-project / ReLU / up-project with the feed-forward output as residual,
and re-applies the final residual+norm to the adapter output. Up-projections
initialize to zero, so a freshly adapter-augmented encoder computes exactly
the base encoder's function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import DataError, NumericError
from .seeding import split_seed
from .subword import CLS_ID, MASK_ID, NUM_SPECIALS, PAD_ID, SEP_ID

ACTION_MASK = "mask"
ACTION_RANDOM = "random"
ACTION_KEEP = "keep"

LAYER_NORM_EPS = 1e-12
INIT_STD = 0.02


@dataclass
class EncoderConfig:
    num_layers: int
    hidden_dim: int
    num_heads: int
    ff_dim: int
    max_seq_len: int
    vocab_size: int
    adapter_dim: int | None = None
    dropout_rate: float = 0.0

    def __post_init__(self):
        for name in ("num_layers", "hidden_dim", "num_heads", "ff_dim", "max_seq_len", "vocab_size"):
            if getattr(self, name) <= 0:
                raise DataError(f"{name} must be positive")
        if self.hidden_dim % self.num_heads != 0:
            raise DataError(
                f"hidden_dim ({self.hidden_dim}) must be divisible by num_heads ({self.num_heads})"
            )
        if self.adapter_dim is not None and self.adapter_dim <= 0:
            raise DataError("adapter_dim must be positive when set")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise DataError("dropout_rate must be in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "hidden_dim": self.hidden_dim,
            "num_heads": self.num_heads,
            "ff_dim": self.ff_dim,
            "max_seq_len": self.max_seq_len,
            "vocab_size": self.vocab_size,
            "adapter_dim": self.adapter_dim,
            "dropout_rate": self.dropout_rate,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "EncoderConfig":
        return cls(**payload)


def adapter_apply(h: Tensor, r: Tensor, down_weight: Tensor, up_weight: Tensor) -> Tensor:
    """Bottleneck adapter: up(ReLU(down(h))) + r.

    ``down_weight`` has shape (bottleneck, hidden), ``up_weight``
    (hidden, bottleneck); ``r`` is the residual the adapter preserves.
    """
    return F.linear(F.relu(F.linear(h, down_weight)), up_weight) + r


class Adapter(nn.Module):
    """Per-layer bottleneck adapter; zero-initialized up-projection."""

    def __init__(self, hidden_dim: int, adapter_dim: int):
        super().__init__()
        self.down = nn.Linear(hidden_dim, adapter_dim, bias=False)
        self.up = nn.Linear(adapter_dim, hidden_dim, bias=False)

    def forward(self, h: Tensor, r: Tensor) -> Tensor:
        return adapter_apply(h, r, self.down.weight, self.up.weight)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.num_heads = config.num_heads
        self.head_dim = config.hidden_dim // config.num_heads
        self.query = nn.Linear(config.hidden_dim, config.hidden_dim)
        # A key bias shifts every attention score for a query by the same
        # amount, which softmax cancels; the parameter would only collect
        # round-off gradients, so it is omitted.
        self.key = nn.Linear(config.hidden_dim, config.hidden_dim, bias=False)
        self.value = nn.Linear(config.hidden_dim, config.hidden_dim)
        self.output = nn.Linear(config.hidden_dim, config.hidden_dim)
        self.dropout = nn.Dropout(config.dropout_rate)

    def forward(self, x: Tensor, key_mask: Tensor) -> tuple[Tensor, Tensor]:
        batch, seq, dim = x.shape

        def heads(t: Tensor) -> Tensor:
            return t.view(batch, seq, self.num_heads, self.head_dim).transpose(1, 2)

        q, k, v = heads(self.query(x)), heads(self.key(x)), heads(self.value(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        probs = torch.softmax(scores, dim=-1)
        probs = self.dropout(probs)
        context = (probs @ v).transpose(1, 2).reshape(batch, seq, dim)
        return self.output(context), probs


class FeedForward(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.inner = nn.Linear(config.hidden_dim, config.ff_dim)
        self.outer = nn.Linear(config.ff_dim, config.hidden_dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.outer(F.gelu(self.inner(x)))


class EncoderLayer(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.attention = MultiHeadSelfAttention(config)
        self.norm_attention = nn.LayerNorm(config.hidden_dim, eps=LAYER_NORM_EPS)
        self.ff = FeedForward(config)
        self.norm_ff = nn.LayerNorm(config.hidden_dim, eps=LAYER_NORM_EPS)
        self.dropout = nn.Dropout(config.dropout_rate)
        self.adapter = Adapter(config.hidden_dim, config.adapter_dim) if config.adapter_dim else None

    def forward(self, x: Tensor, key_mask: Tensor) -> tuple[Tensor, Tensor]:
        attn_out, probs = self.attention(x, key_mask)
        a = self.norm_attention(x + self.dropout(attn_out))
        ff_out = self.dropout(self.ff(a))
        if self.adapter is None:
            return self.norm_ff(a + ff_out), probs
        h = self.norm_ff(a + ff_out)
        z = self.adapter(h, ff_out)
        return self.norm_ff(a + z), probs


class EncoderOutput(NamedTuple):
    hidden_states: tuple[Tensor, ...]  # embeddings output plus one per layer
    attentions: tuple[Tensor, ...] | None

    @property
    def final(self) -> Tensor:
        return self.hidden_states[-1]


class Encoder(nn.Module):
    """Token + position embeddings, a stack of layers, and an MLM projection."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.token_embedding = nn.Embedding(config.vocab_size, config.hidden_dim)
        self.position_embedding = nn.Embedding(config.max_seq_len, config.hidden_dim)
        self.embed_dropout = nn.Dropout(config.dropout_rate)
        self.layers = nn.ModuleList(EncoderLayer(config) for _ in range(config.num_layers))
        self.mlm_head = nn.Linear(config.hidden_dim, config.vocab_size)
        self.reset_parameters()

    def reset_parameters(self):
        for module in self.modules():
            if isinstance(module, (nn.Linear, nn.Embedding)):
                nn.init.trunc_normal_(module.weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
                if isinstance(module, nn.Linear) and module.bias is not None:
                    nn.init.zeros_(module.bias)
            elif isinstance(module, nn.LayerNorm):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
        for layer in self.layers:
            if layer.adapter is not None:
                nn.init.zeros_(layer.adapter.up.weight)

    def forward(
        self,
        ids: Tensor,
        pad_mask: Tensor | None = None,
        collect_attention: bool = False,
    ) -> EncoderOutput:
        """Hidden states per layer for a (batch, seq) id tensor.

        Padding positions are masked out of attention. Deterministic in
        eval mode.
        """
        if ids.dim() == 1:
            ids = ids.unsqueeze(0)
        if ids.size(1) > self.config.max_seq_len:
            raise DataError(
                f"sequence length {ids.size(1)} exceeds max_seq_len {self.config.max_seq_len}"
            )
        if int(ids.max()) >= self.config.vocab_size:
            raise DataError(f"token id {int(ids.max())} out of range (vocab {self.config.vocab_size})")
        if pad_mask is None:
            pad_mask = ids != PAD_ID
        positions = torch.arange(ids.size(1), device=ids.device)
        x = self.token_embedding(ids) + self.position_embedding(positions)[None, :, :]
        x = self.embed_dropout(x)
        states = [x]
        attentions = []
        for layer in self.layers:
            x, probs = layer(x, pad_mask)
            states.append(x)
            if collect_attention:
                attentions.append(probs)
        return EncoderOutput(tuple(states), tuple(attentions) if collect_attention else None)

    def mlm_logits(self, hidden: Tensor) -> Tensor:
        return self.mlm_head(hidden)

    # --- parameter grouping -------------------------------------------------

    def named_groups(self) -> dict[str, list[str]]:
        """Partition parameter names into base / adapter / head groups."""
        groups: dict[str, list[str]] = {"base": [], "adapter": [], "head": []}
        for name, _ in self.named_parameters():
            groups[parameter_group(name)].append(name)
        return groups

    def set_trainable_mode(self, mode: str) -> None:
        """'all' trains everything; 'adapter' trains adapters and heads only."""
        if mode == "adapter" and self.config.adapter_dim is None:
            raise DataError("adapter trainable mode requires adapter_dim in the config")
        apply_trainable_mode(self, mode)

    def base_state_bytes(self) -> bytes:
        """Concatenated raw bytes of all base-group tensors, in name order."""
        chunks = []
        for name, param in sorted(self.named_parameters()):
            if parameter_group(name) == "base":
                chunks.append(param.detach().cpu().numpy().tobytes())
        return b"".join(chunks)


def parameter_group(name: str) -> str:
    if ".adapter." in name:
        return "adapter"
    if name.startswith("mlm_head.") or name.startswith("head."):
        return "head"
    return "base"


def apply_trainable_mode(model: nn.Module, mode: str) -> None:
    """Mark parameters trainable: everything, or only adapters and heads."""
    if mode not in ("all", "adapter"):
        raise DataError(f"trainable mode must be 'all' or 'adapter', got {mode!r}")
    for name, param in model.named_parameters():
        param.requires_grad = mode == "all" or parameter_group(name) != "base"


def build_encoder(config: EncoderConfig, seed: int) -> Encoder:
    """Construct a seeded, deterministically initialized encoder."""
    torch.manual_seed(split_seed(seed, "encoder-init"))
    return Encoder(config)


# --- masking -----------------------------------------------------------------


@dataclass(frozen=True)
class MaskingPlan:
    """Selected positions with their corruption action and original ids."""

    positions: tuple[int, ...]
    actions: tuple[str, ...]
    original_ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.positions)


def make_masking_plan(
    ids: Sequence[int],
    vocab_size: int,
    rng: np.random.Generator,
    rate: float = 0.15,
    mask_frac: float = 0.8,
    random_frac: float = 0.1,
) -> tuple[MaskingPlan, list[int]]:
    """Select ceil(rate * maskable) non-special positions and corrupt them.

    Selected positions independently become [MASK] (mask_frac), a uniform
    random non-special id (random_frac), or stay unchanged. Sequences with
    no maskable positions yield an empty plan.
    """
    if not 0.0 <= rate <= 1.0:
        raise DataError("rate must be in [0, 1]")
    if mask_frac < 0 or random_frac < 0 or mask_frac + random_frac > 1:
        raise DataError("mask_frac and random_frac must be non-negative and sum to at most 1")
    maskable = [i for i, tok in enumerate(ids) if tok >= NUM_SPECIALS]
    n_select = math.ceil(rate * len(maskable))
    if n_select == 0:
        return MaskingPlan((), (), ()), list(ids)
    chosen = sorted(rng.choice(len(maskable), size=n_select, replace=False).tolist())
    positions = [maskable[i] for i in chosen]
    corrupted = list(ids)
    actions = []
    originals = []
    for pos in positions:
        originals.append(ids[pos])
        draw = rng.random()
        if draw < mask_frac:
            actions.append(ACTION_MASK)
            corrupted[pos] = MASK_ID
        elif draw < mask_frac + random_frac:
            actions.append(ACTION_RANDOM)
            corrupted[pos] = int(rng.integers(NUM_SPECIALS, vocab_size))
        else:
            actions.append(ACTION_KEEP)
    return MaskingPlan(tuple(positions), tuple(actions), tuple(originals)), corrupted


class MlmLoss(NamedTuple):
    value: Tensor
    empty: bool


def mlm_loss(logits: Tensor, original_ids: Tensor) -> MlmLoss:
    """Mean negative log-softmax probability of the original ids.

    An empty selection yields a zero loss flagged as empty rather than an
    error, so all-special sequences don't kill a training step.
    """
    if logits.numel() == 0 or original_ids.numel() == 0:
        return MlmLoss(torch.zeros((), dtype=logits.dtype if logits.numel() else torch.float32), True)
    return MlmLoss(F.cross_entropy(logits, original_ids), False)


# --- gradients ---------------------------------------------------------------


def backward(loss: Tensor, model: nn.Module) -> dict[str, Tensor]:
    """Backpropagate and return gradients keyed by parameter name.

    Frozen parameters receive no gradient; any non-finite gradient is fatal
    and names the offending tensor.
    """
    loss.backward()
    grads = {}
    for name, param in model.named_parameters():
        if param.grad is None:
            continue
        if not torch.isfinite(param.grad).all():
            raise NumericError(f"non-finite gradient in tensor {name!r}")
        grads[name] = param.grad
    return grads
