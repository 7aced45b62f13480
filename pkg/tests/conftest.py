"""Shared fixtures: the synthetic two-domain world at desk scale.

Pretraining is the expensive part (~10 s per domain on CPU), so the trained
encoders are session-scoped and shared between the training tests and the
acceptance suite.
"""

import pytest

from domlm.encoder import build_encoder
from domlm.fixtures import make_pools
from domlm.profiles import get_profile
from domlm.subword import build_vocab
from domlm.train import pretrain_mlm

ROOT_SEED = 13


@pytest.fixture(scope="session")
def desk():
    return get_profile("desk").with_seed(ROOT_SEED)


@pytest.fixture(scope="session")
def world(desk):
    """Deterministic pools plus a vocabulary covering them."""
    pools = make_pools(desk.fixture)
    texts = [record.text for records in pools.values() for record in records]
    vocab = build_vocab(texts, desk.vocab_size)
    return {"spec": desk.fixture, "pools": pools, "vocab": vocab}


def domain_texts(pools, domain):
    records = pools[f"ed-{domain}"] + pools[f"md-{domain}"]
    return [record.text for record in records]


@pytest.fixture(scope="session")
def trained_world(desk, world):
    """Base encoder plus med- and fin-pretrained variants with held-out text.

    Every 10th in-domain sentence is held out of pretraining so MLM loss can
    be measured on text the models never saw.
    """
    out = {"base": build_encoder(desk.encoder, seed=ROOT_SEED)}
    for domain in ("med", "fin"):
        texts = domain_texts(world["pools"], domain)
        held_out = texts[::10]
        train_texts = [t for i, t in enumerate(texts) if i % 10 != 0]
        model, record = pretrain_mlm(train_texts, world["vocab"], desk.encoder, desk.pretrain_full)
        out[domain] = {
            "model": model,
            "record": record,
            "train": train_texts,
            "held_out": held_out,
        }
    return out
