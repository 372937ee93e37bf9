"""Named deterministic random substreams derived from a single root seed.

Every source of randomness in the package (data generation, parameter init,
episode sampling) draws from a substream addressed by string/int labels, so
results do not depend on call order and per-sample generation stays pure.
"""

import hashlib

import numpy as np

_MASK63 = (1 << 63) - 1


def substream_seed(root_seed: int, *labels) -> int:
    """Derive a stable 63-bit seed from a root seed and a label path."""
    key = str(int(root_seed)) + "/" + "/".join(str(x) for x in labels)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & _MASK63


def substream_rng(root_seed: int, *labels) -> np.random.Generator:
    """A numpy Generator for the given substream."""
    return np.random.default_rng(substream_seed(root_seed, *labels))
