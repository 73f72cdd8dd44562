"""Labelled random-stream derivation from one master seed."""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ContractError

MAX_SEED = 2**64 - 1


def check_seed(seed) -> int:
    if isinstance(seed, bool) or int(seed) != seed or not 0 <= int(seed) <= MAX_SEED:
        raise ContractError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return int(seed)


def stream_seed(master: int, label: str, index: int = 0) -> np.random.SeedSequence:
    """Seed sequence for component ``label`` and stream ``index``.

    The label is hashed so that streams do not depend on the order in which
    components ask for them.
    """
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    tag = int.from_bytes(digest[:8], "little")
    return np.random.SeedSequence([check_seed(master), tag, int(index)])


def derive_rng(master: int, label: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(stream_seed(master, label, index))
