"""Deterministic named RNG substreams derived from one root seed.

Every source of randomness in the pipeline (data generation, parameter
init, dropout, shuffling, splits) pulls from its own named stream so that
adding randomness in one place never perturbs another.
"""

import zlib

import numpy as np


def substream(root_seed: int, name: str, *indices: int) -> np.random.Generator:
    """Return a generator for the substream `name` (plus optional indices).

    The mapping is stable across platforms and runs: it depends only on the
    root seed, a CRC32 of the name, and the index tuple.
    """
    key = (zlib.crc32(name.encode("utf-8")),) + tuple(int(i) for i in indices)
    seq = np.random.SeedSequence(entropy=int(root_seed), spawn_key=key)
    return np.random.default_rng(seq)
