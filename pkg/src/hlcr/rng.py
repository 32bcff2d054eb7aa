"""Seed derivation.

Every random stream in the package is a ``numpy.random.Generator`` backed by
PCG64 and keyed by ``(seed, labels...)``.  String labels are hashed with
BLAKE2b so that streams are stable across processes and Python versions
(``hash()`` is salted per process and must not be used here).
"""
import hashlib

import numpy as np

BIT_GENERATOR = "PCG64"
#: Bumped whenever the mapping from (seed, labels) to streams changes.
STREAM_VERSION = 1


def label_key(label):
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("integer stream labels must be non-negative")
        return int(label)
    digest = hashlib.blake2b(str(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_rng(seed, *labels):
    """Independent generator for the stream named by ``labels`` under ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(label_key(lab) for lab in labels))
    return np.random.Generator(np.random.PCG64(ss))


def describe(seed, *labels):
    return {
        "bit_generator": BIT_GENERATOR,
        "stream_version": STREAM_VERSION,
        "seed": int(seed),
        "labels": [str(lab) for lab in labels],
    }
