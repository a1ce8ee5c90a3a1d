"""
Deterministic random streams derived from a single master seed
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def split_seed(master, *labels):
    """
    Derive a 64-bit child seed from a master seed and a sequence of labels

    seed = blake2b(master, label_1, ..., label_k) truncated to 64 bits. Labels
    may be ints or strings, so realizations, nodes and channels can be mixed.

    Args:
        master: Master seed (int)
        *labels: Realization index, channel name, node id, ...

    Returns:
        int: Child seed in [0, 2**64)
    """
    digest = hashlib.blake2b(digest_size=8)
    digest.update(str(int(master) & _MASK64).encode())
    for label in labels:
        digest.update(b"/")
        digest.update(str(label).encode())
    return int.from_bytes(digest.digest(), 'little')


def stream(master, *labels):
    """
    Counter-based generator for one (master, labels...) stream

    Philox streams are keyed, so the draws of one stream never depend on how
    many other streams were used before it.

    Returns:
        numpy.random.Generator
    """
    return np.random.Generator(np.random.Philox(key=split_seed(master, *labels)))
