"""Deterministic seed derivation for pipeline stages.

Every stage of a run draws randomness from its own seed derived from
(master_seed, stage_name) through a stable hash, so inserting or removing
a stage never shifts the randomness of the others.  Python's builtin
``hash`` is salted per process and must not be used here.
"""

from __future__ import annotations

import hashlib

_SEED_BITS = 63


def derive_seed(master_seed: int, name: str) -> int:
    """Derive a stage seed from the master seed and a stage label."""
    digest = hashlib.sha256(f"{master_seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % (1 << _SEED_BITS)
