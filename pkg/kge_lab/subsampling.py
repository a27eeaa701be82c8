"""
Frequency-discount weights for the NS loss

Each training instance (x, y) gets a positive-term weight A and a
negative-term weight B, both inverse square roots of a frequency and
normalized over the training set D:

    base  A = B = 1/sqrt(#(x,y))   (the word2vec-style default)
    freq  A = 1/sqrt(#(x,y)),  B = 1/sqrt(#x)
    uniq  A = B = 1/sqrt(#x)

#(x,y) is the backoff #(e_i,r_k) + #(r_k,e_j); #x depends on the query
direction. Weights are multiplied by |D| afterwards (unless disabled) so
that no subsampling corresponds to all-ones weights.
"""

import logging
from typing import Sequence, Tuple

import numpy as np

from .data_loader import Direction, FrequencyTable

logger = logging.getLogger(__name__)

SUBSAMPLING_METHODS = ('none', 'base', 'freq', 'uniq')


def _check_method(method: str) -> None:
    if method not in SUBSAMPLING_METHODS:
        raise ValueError(f"unknown subsampling method {method!r}; expected one of {SUBSAMPLING_METHODS}")


def _inv_sqrt(count: float) -> float:
    if count <= 0:
        raise ValueError(f"zero frequency {count} for a training triple")
    return 1.0 / np.sqrt(count)


def subsample_weights(method: str, triple: Sequence[int], freq: FrequencyTable,
                      direction: Direction = Direction.TAIL, rescale: bool = True) -> Tuple[float, float]:
    """(A, B) for one training triple seen as a `direction` query."""
    _check_method(method)
    if method == 'none':
        return 1.0, 1.0
    direction = Direction(direction)
    scale = float(len(freq)) if rescale else 1.0
    pair = _inv_sqrt(freq.pair_frequency(triple)) / freq.pair_norm
    query = _inv_sqrt(freq.query_frequency(triple, direction)) / freq.query_norm[direction]
    if method == 'base':
        return scale * pair, scale * pair
    if method == 'freq':
        return scale * pair, scale * query
    return scale * query, scale * query


def subsample_table(method: str, freq: FrequencyTable, rescale: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """
    Weights for every training triple and both directions

    Returns:
        Tuple of (A, B), each shaped (2, |D|) and indexed by [direction, triple row]
    """
    _check_method(method)
    n = len(freq)
    if method == 'none':
        return np.ones((2, n)), np.ones((2, n))
    if np.any(freq.pair_freq <= 0):
        raise ValueError("zero pair frequency for a training triple")
    scale = float(n) if rescale else 1.0
    pair = 1.0 / np.sqrt(freq.pair_freq)
    pair = np.tile(pair / pair.sum(), (2, 1))
    query = np.stack([
        1.0 / np.sqrt(freq.query_counts(direction)) for direction in (Direction.TAIL, Direction.HEAD)
    ])
    query = query / query.sum(axis=1, keepdims=True)
    if method == 'base':
        a, b = pair, pair
    elif method == 'freq':
        a, b = pair, query
    else:
        a, b = query, query
    logger.debug(f"Subsampling '{method}' weights computed for {n} triples")
    return scale * a, scale * b
