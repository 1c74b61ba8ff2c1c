"""Named, order-independent random substreams derived from a master seed.

Every consumer of randomness asks for a generator keyed by a tuple of
labels (``("morphology", knee_id)``, ``("tree", 17)``...).  The key is hashed
with BLAKE2b into a 64-bit integer, so the stream a consumer sees never
depends on how many draws other consumers made or on scheduling order.
"""

import hashlib

import numpy as np


def stable_hash(*parts) -> int:
    """Stable unsigned 64-bit hash of ``parts`` (str/int/float)."""
    text = "\x1f".join(repr(p) if not isinstance(p, str) else p for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream(master_seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(stable_hash(int(master_seed), *labels))
