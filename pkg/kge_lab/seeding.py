"""Root-seed derivation.

Every random stream in a run comes from one root seed and a fixed label.
"""

import hashlib

import numpy as np


def derive_seed(root_seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{root_seed}:{label}".encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'little')


def make_rng(root_seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, label))
