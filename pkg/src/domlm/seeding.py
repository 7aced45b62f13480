"""Deterministic seed derivation so one master seed drives every stage."""

import hashlib


def split_seed(seed: int, *labels) -> int:
    """Derive a 63-bit child seed for a named stage from a master seed.

    Stable across platforms and Python versions (pure SHA-256); distinct
    labels give independent streams without coordinating offsets.
    """
    tag = "/".join(str(label) for label in labels)
    digest = hashlib.sha256(f"{seed}#{tag}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF
