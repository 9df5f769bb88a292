"""Named random substreams derived from one root seed."""

import zlib

import numpy as np


def derive_seed(root: int, *names) -> int:
    """Stable 63-bit seed for the substream ``root/names[0]/names[1]/...``."""
    key = tuple(zlib.crc32(str(n).encode("utf-8")) for n in names)
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=key)
    hi, lo = (int(v) for v in ss.generate_state(2, dtype=np.uint32))
    return (hi >> 1) << 32 | lo


def rng_for(root: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *names))
