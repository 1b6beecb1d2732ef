"""Deterministic seed derivation.

A child seed is the first 8 bytes (little-endian) of
``sha256(b"csobench/v1:" + str(root) + ":" + label)``.  The derivation is part of
the on-disk format: changing it changes every artifact, so it is versioned by
the ``v1`` tag.
"""

import hashlib

import numpy as np

SEED_FORMAT = "v1"


def derive_seed(root, label):
    """Return a 64-bit child seed for stream ``label`` under ``root``."""
    if not label:
        raise ValueError("stream label must be non-empty")
    msg = f"csobench/{SEED_FORMAT}:{int(root)}:{label}".encode()
    return int.from_bytes(hashlib.sha256(msg).digest()[:8], "little")


def child_rng(root, label):
    return np.random.default_rng(derive_seed(root, label))
