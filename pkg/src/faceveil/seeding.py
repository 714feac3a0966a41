"""Deterministic named seed streams.

All randomness in a run flows from one root seed. Every consumer derives
its own stream seed from (root, stream-name), so adding or reordering
consumers never perturbs each other's draws, and weights/datasets are
reproducible across platforms (the hash is blake2b, not Python's salted
``hash``).
"""
from __future__ import annotations

import hashlib

import torch

_MASK = (1 << 63) - 1


def derive_seed(root: int, name: str) -> int:
    """Derive a stable 63-bit seed for the stream ``name``."""
    digest = hashlib.blake2b(f"{root}:{name}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") & _MASK


def generator(root: int, name: str) -> torch.Generator:
    """A CPU torch.Generator seeded from the named stream."""
    gen = torch.Generator()
    gen.manual_seed(derive_seed(root, name))
    return gen
