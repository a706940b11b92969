import hashlib

import numpy as np

from errors import InvalidArgumentError


def _purpose_key(purpose: str) -> int:
    return int.from_bytes(hashlib.blake2b(purpose.encode('utf-8'), digest_size=8).digest(), 'little')


class SeedStreams:
    """
    Expands one master seed into independent random streams.

    A stream is addressed by a purpose name plus integer keys, e.g.
    ("rollout", level, prior_index, repeat). The same address always yields
    the same stream, so results never depend on call order or worker count.
    """

    def __init__(self, master_seed: int):
        if master_seed < 0:
            raise InvalidArgumentError(f"Master seed must be non-negative, got {master_seed}")
        self.master_seed = int(master_seed)

    def generator(self, purpose: str, *keys: int) -> np.random.Generator:
        spawn_key = (_purpose_key(purpose),) + tuple(int(k) for k in keys)
        return np.random.default_rng(np.random.SeedSequence(self.master_seed, spawn_key=spawn_key))

    def __repr__(self):
        return f"SeedStreams(master_seed={self.master_seed})"
