"""Deterministic seed derivation.

Every random draw in the pipeline comes from a numpy Generator whose seed is
derived by hashing a master seed together with a context label. Substreams are
therefore independent: adding a language or rerunning one stage never perturbs
the draws of another.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np


def derive_seed(*parts) -> int:
    """Map an arbitrary tuple of labels to a stable 64-bit seed."""
    payload = json.dumps(parts, separators=(",", ":"), default=str)
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))
