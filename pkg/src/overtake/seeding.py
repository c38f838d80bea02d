"""Seed derivation shared by the generator, the splitter and the sweep.

Every sub-seed is ``derive_seed(master, *keys)``: the first 8 bytes
(little endian) of BLAKE2b over the canonical text ``"master|key1|key2|..."``.
That is a pure function of its arguments, identical on every platform and
independent of process scheduling. Generators are numpy ``PCG64`` seeded with
the derived value.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *keys) -> int:
    text = "|".join([str(int(master))] + [str(k) for k in keys])
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


def rng_for(master: int, *keys) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, *keys)))
