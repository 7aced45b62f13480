"""Compose budgeted pretraining corpora from named sentence pools.

Three strategies are supported: English domain data only (``ed``), the
multilingual domain pool topped up with English domain data (``md-ed``),
and the multilingual domain pool topped up per language with general
multilingual data under exponentially smoothed sampling weights
(``md-mwiki``). English is always topped up from the English domain pool
rather than the general pool.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .ingest import SentenceRecord
from .seeding import split_seed

POOL_DOMAIN_MULTI = "domain-multilingual"
POOL_DOMAIN_EN = "domain-english"
POOL_GENERAL_MULTI = "general-multilingual"

MANIFEST_FORMAT_VERSION = 1


class Strategy(enum.Enum):
    """Pretraining corpus composition strategy."""

    ED = "ed"  # English domain data only
    MD_ED = "md-ed"  # multilingual domain + English domain fill
    MD_MWIKI = "md-mwiki"  # multilingual domain + general multilingual fill

    @classmethod
    def parse(cls, name: str) -> "Strategy":
        for member in cls:
            if member.value == name:
                return member
        raise DataError(f"unknown strategy: {name!r} (expected ed, md-ed or md-mwiki)")


@dataclass(frozen=True)
class SamplingWeights:
    """Raw and exponentially smoothed per-language sampling probabilities."""

    languages: tuple[str, ...]
    raw: tuple[float, ...]
    smoothed: tuple[float, ...]
    alpha: float

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.languages, self.smoothed))


def smooth_weights(counts: Mapping[str, int], alpha: float) -> SamplingWeights:
    """Exponentially smooth a language count distribution.

    raw_i = count_i / sum(counts); smoothed_i = raw_i^alpha normalized.
    alpha must lie in (0, 1]; alpha == 1 returns the raw weights.
    """
    if not 0.0 < alpha <= 1.0:
        raise DataError(f"alpha must be in (0, 1], got {alpha}")
    if any(c < 0 for c in counts.values()):
        raise DataError("language counts must be non-negative")
    total = sum(counts.values())
    if total == 0:
        raise DataError("all language counts are zero")
    languages = tuple(sorted(counts))
    raw = tuple(counts[lang] / total for lang in languages)
    if alpha == 1.0:
        smoothed = raw
    else:
        powered = [p**alpha if p > 0 else 0.0 for p in raw]
        norm = sum(powered)
        smoothed = tuple(p / norm for p in powered)
    return SamplingWeights(languages=languages, raw=raw, smoothed=smoothed, alpha=alpha)


def allocate_targets(weights: SamplingWeights, budget: int) -> dict[str, int]:
    """Turn smoothed weights into integer per-language targets summing to budget.

    floor(budget * q_i) per language, remainder distributed by largest
    fractional part; remainder ties break by language-code order.
    """
    if budget <= 0:
        raise DataError(f"budget must be positive, got {budget}")
    floors = {}
    fractions = []
    for lang, q in zip(weights.languages, weights.smoothed):
        exact = budget * q
        floors[lang] = int(exact)
        fractions.append((-(exact - int(exact)), lang))
    residue = budget - sum(floors.values())
    for _, lang in sorted(fractions)[:residue]:
        floors[lang] += 1
    return floors


@dataclass
class CompositionSpec:
    """Everything needed to deterministically compose one corpus."""

    strategy: Strategy
    budget: int
    alpha: float
    seed: int
    pools: dict[str, list[SentenceRecord]]
    smoothing_basis: str = "domain"  # or "general"

    def __post_init__(self):
        if self.budget <= 0:
            raise DataError(f"budget must be positive, got {self.budget}")
        if self.smoothing_basis not in ("domain", "general"):
            raise DataError(f"smoothing_basis must be 'domain' or 'general', got {self.smoothing_basis!r}")
        required = {
            Strategy.ED: [POOL_DOMAIN_EN],
            Strategy.MD_ED: [POOL_DOMAIN_MULTI, POOL_DOMAIN_EN],
            Strategy.MD_MWIKI: [POOL_DOMAIN_MULTI],
        }[self.strategy]
        for name in required:
            if not self.pools.get(name):
                raise DataError(f"strategy {self.strategy.value} requires a non-empty {name!r} pool")


@dataclass
class CorpusManifest:
    """Deterministic, seeded description of a composed pretraining corpus."""

    strategy: str
    budget: int
    alpha: float
    seed: int
    smoothing_basis: str
    per_language: dict[str, int]
    references: list[tuple[str, str, int]]
    shortfall: int
    content_hash: str = ""
    pool_paths: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.content_hash:
            self.content_hash = self._compute_hash()

    def _compute_hash(self) -> str:
        payload = json.dumps(
            {
                "strategy": self.strategy,
                "budget": self.budget,
                "alpha": self.alpha,
                "seed": self.seed,
                "smoothing_basis": self.smoothing_basis,
                "per_language": dict(sorted(self.per_language.items())),
                "references": [list(ref) for ref in self.references],
                "shortfall": self.shortfall,
            },
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _shuffled(records: Sequence[SentenceRecord], seed: int) -> list[SentenceRecord]:
    """Canonically sort then seeded-shuffle, so scan order never matters."""
    ordered = sorted(records, key=SentenceRecord.key)
    rng = np.random.default_rng(seed)
    permutation = rng.permutation(len(ordered))
    return [ordered[i] for i in permutation]


def compose(spec: CompositionSpec) -> CorpusManifest:
    """Compose a corpus manifest under the budget; never fatal on shortfall."""
    if spec.strategy is Strategy.ED:
        selected = _compose_ed(spec)
    elif spec.strategy is Strategy.MD_ED:
        selected = _compose_md_ed(spec)
    else:
        selected = _compose_md_mwiki(spec)

    per_language: dict[str, int] = {}
    references = []
    seen = set()
    for record in selected:
        key = record.key()
        if key in seen:
            raise DataError(f"duplicate sentence reference in composition: {key}")
        seen.add(key)
        references.append(key)
        per_language[record.lang] = per_language.get(record.lang, 0) + 1

    return CorpusManifest(
        strategy=spec.strategy.value,
        budget=spec.budget,
        alpha=spec.alpha,
        seed=spec.seed,
        smoothing_basis=spec.smoothing_basis,
        per_language=per_language,
        references=references,
        shortfall=spec.budget - len(references),
    )


def _compose_ed(spec: CompositionSpec) -> list[SentenceRecord]:
    pool = _shuffled(spec.pools[POOL_DOMAIN_EN], split_seed(spec.seed, "pool", POOL_DOMAIN_EN))
    return pool[: spec.budget]


def _compose_md_ed(spec: CompositionSpec) -> list[SentenceRecord]:
    md = _shuffled(spec.pools[POOL_DOMAIN_MULTI], split_seed(spec.seed, "pool", POOL_DOMAIN_MULTI))
    selected = md[: spec.budget]
    remainder = spec.budget - len(selected)
    if remainder > 0:
        ed = _shuffled(spec.pools.get(POOL_DOMAIN_EN, []), split_seed(spec.seed, "pool", POOL_DOMAIN_EN))
        selected = selected + ed[:remainder]
    return selected


def _compose_md_mwiki(spec: CompositionSpec) -> list[SentenceRecord]:
    md = _shuffled(spec.pools[POOL_DOMAIN_MULTI], split_seed(spec.seed, "pool", POOL_DOMAIN_MULTI))
    selected = md[: spec.budget]
    if len(selected) == spec.budget:
        return selected

    md_counts: dict[str, int] = {}
    for record in selected:
        md_counts[record.lang] = md_counts.get(record.lang, 0) + 1

    general = spec.pools.get(POOL_GENERAL_MULTI, [])
    general_by_lang: dict[str, list[SentenceRecord]] = {}
    for record in general:
        general_by_lang.setdefault(record.lang, []).append(record)
    en_pool = spec.pools.get(POOL_DOMAIN_EN, [])

    counts = _smoothing_counts(spec, md_counts, general_by_lang, en_pool)
    weights = smooth_weights(counts, spec.alpha)
    targets = allocate_targets(weights, spec.budget)

    # Per-language fill sources, each a seeded permutation consumed in order.
    fills: dict[str, list[SentenceRecord]] = {}
    for lang in weights.languages:
        if lang == "en":
            fills[lang] = _shuffled(en_pool, split_seed(spec.seed, "pool", POOL_DOMAIN_EN))
        else:
            fills[lang] = _shuffled(
                general_by_lang.get(lang, []), split_seed(spec.seed, "general", lang)
            )

    # A language whose domain pool already meets its target gets need 0; the
    # running budget cap handles overshoot from such languages' full pools.
    taken: dict[str, int] = {lang: 0 for lang in weights.languages}
    for lang in weights.languages:
        need = max(0, targets[lang] - md_counts.get(lang, 0))
        room = spec.budget - len(selected) - sum(taken.values())
        taken[lang] = max(0, min(need, len(fills[lang]), room))

    # Distribute any remaining budget proportionally to smoothed weights
    # among languages whose fill source still has sentences left.
    while True:
        used = len(selected) + sum(taken.values())
        slack = spec.budget - used
        if slack <= 0:
            break
        remaining = {
            lang: len(fills[lang]) - taken[lang]
            for lang in weights.languages
            if len(fills[lang]) - taken[lang] > 0
        }
        if not remaining:
            break
        sub_counts = {lang: counts[lang] for lang in remaining}
        sub_weights = smooth_weights(sub_counts, spec.alpha)
        allocation = allocate_targets(sub_weights, slack)
        for lang, extra in allocation.items():
            taken[lang] += min(extra, remaining[lang])

    for lang in weights.languages:
        selected = selected + fills[lang][: taken[lang]]
    return selected


def _smoothing_counts(spec, md_counts, general_by_lang, en_pool) -> dict[str, int]:
    if spec.smoothing_basis == "general":
        counts = {lang: len(records) for lang, records in general_by_lang.items()}
        if en_pool and counts.get("en", 0) == 0:
            counts["en"] = len(en_pool)
    else:
        counts = dict(md_counts)
        if "en" not in counts and en_pool:
            counts["en"] = len(en_pool)
    if not counts or sum(counts.values()) == 0:
        raise DataError("no languages with sentences available for smoothing")
    return counts


def manifest_report(manifest: CorpusManifest) -> str:
    """Aligned per-language table of a manifest's contents."""
    rows = sorted(manifest.per_language.items())
    header = f"{'language':<10} {'sentences':>12}"
    lines = [header, "-" * len(header)]
    for lang, count in rows:
        lines.append(f"{lang:<10} {count:>12}")
    if rows:
        lines.append("-" * len(header))
        lines.append(f"{'total':<10} {sum(c for _, c in rows):>12}")
    lines.append(f"strategy={manifest.strategy} budget={manifest.budget} shortfall={manifest.shortfall}")
    lines.append(f"hash={manifest.content_hash}")
    return "\n".join(lines) + "\n"


def save_manifest(manifest: CorpusManifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "strategy": manifest.strategy,
        "budget": manifest.budget,
        "alpha": manifest.alpha,
        "seed": manifest.seed,
        "smoothing_basis": manifest.smoothing_basis,
        "per_language": dict(sorted(manifest.per_language.items())),
        "shortfall": manifest.shortfall,
        "references": [list(ref) for ref in manifest.references],
        "content_hash": manifest.content_hash,
        "pool_paths": manifest.pool_paths,
    }
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def load_manifest(path) -> CorpusManifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest file not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise DataError(f"{path}: invalid manifest JSON ({err.msg})") from err
    if payload.get("format_version") != MANIFEST_FORMAT_VERSION:
        raise DataError(f"{path}: unsupported manifest format_version")
    try:
        manifest = CorpusManifest(
            strategy=payload["strategy"],
            budget=payload["budget"],
            alpha=payload["alpha"],
            seed=payload["seed"],
            smoothing_basis=payload["smoothing_basis"],
            per_language=dict(payload["per_language"]),
            references=[tuple(ref) for ref in payload["references"]],
            shortfall=payload["shortfall"],
            pool_paths={k: list(v) for k, v in payload.get("pool_paths", {}).items()},
        )
    except KeyError as err:
        raise DataError(f"{path}: manifest missing key {err}") from err
    if manifest.content_hash != payload.get("content_hash"):
        raise DataError(f"{path}: manifest content hash mismatch")
    return manifest


def resolve_manifest(
    manifest: CorpusManifest, pools: Mapping[str, Iterable[SentenceRecord]]
) -> list[SentenceRecord]:
    """Materialize manifest references against the pools they were drawn from."""
    index: dict[tuple[str, str, int], SentenceRecord] = {}
    for records in pools.values():
        for record in records:
            index[record.key()] = record
    resolved = []
    for ref in manifest.references:
        record = index.get(tuple(ref))
        if record is None:
            raise DataError(f"manifest reference not found in pools: {ref}")
        resolved.append(record)
    return resolved
