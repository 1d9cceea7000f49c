"""Derived RNG streams.

Every stream seed is the first 8 bytes (big-endian) of
``sha256(f"{master}|{purpose}|{client}|{round}")``, with -1 standing in for
"no client" / "no round". Streams never share state, so the order in which
clients or subsystems draw cannot change any result.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, purpose: str, client: int = -1, rnd: int = -1) -> int:
    key = f"{master}|{purpose}|{client}|{rnd}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")


def stream(master: int, purpose: str, client: int = -1, rnd: int = -1) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, purpose, client, rnd))
