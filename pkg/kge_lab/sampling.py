"""
Negative sampling and the batched loss/gradient

Negatives are drawn uniformly over all entities with replacement and the
true answer is not filtered out. Queries of both directions may share a
batch; each direction is scored in its own chunks and gradients are merged
in a fixed order.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import settings
from .data_loader import Direction, QuerySet
from .losses import negative_coefficients, objective_and_score_grads
from .models import LossSpec
from .scoring import ModelParams, ScoreGradient, backward_candidates, score_candidates

logger = logging.getLogger(__name__)


@dataclass
class NegativeBatch:
    """nu sampled entity ids per positive query, plus SANS weights once known."""

    entities: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        self.entities = np.atleast_2d(np.asarray(self.entities, dtype=np.int64))
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64).reshape(self.entities.shape)

    @property
    def nu(self) -> int:
        return self.entities.shape[1]

    def __len__(self) -> int:
        return self.entities.shape[0]


def sample_negatives(num_entities: int, nu: int, rng: np.random.Generator, batch_size: int = 1) -> NegativeBatch:
    """nu i.i.d. uniform draws over [0, num_entities) for each of `batch_size` queries."""
    if nu < 1:
        raise ValueError(f"nu must be >= 1, got {nu}")
    return NegativeBatch(rng.integers(0, num_entities, size=(batch_size, nu)))


def _chunks(index: np.ndarray, size: int):
    for start in range(0, len(index), size):
        yield index[start:start + size]


def candidate_scores(params: ModelParams, batch: QuerySet, candidates: np.ndarray,
                     chunk_size: Optional[int] = None) -> np.ndarray:
    """Scores (batch, k) of each query's candidate list."""
    chunk_size = chunk_size or settings.LOSS_CHUNK
    scores = np.empty(candidates.shape)
    for direction in (Direction.TAIL, Direction.HEAD):
        group = np.flatnonzero(batch.direction == direction)
        for rows in _chunks(group, chunk_size):
            scores[rows] = score_candidates(params, direction, batch.anchor[rows], batch.relation[rows],
                                            candidates[rows])
    return scores


def loss_and_grad(params: ModelParams, batch: QuerySet, negatives: NegativeBatch, spec: LossSpec,
                  weights: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                  chunk_size: Optional[int] = None) -> Tuple[float, ScoreGradient]:
    """
    Batch-mean loss and its gradient w.r.t. every touched parameter row

    Args:
        params: Model parameters (read only)
        batch: Positive queries; their answers are the positives
        negatives: Negative entities per query (and frozen SANS weights, if any)
        spec: Loss family, margin, nu and SANS temperature
        weights: Per-query subsampling multipliers (A, B); None means all ones
        chunk_size: Queries scored at once

    Returns:
        Tuple of (loss, ScoreGradient)
    """
    if len(negatives) != len(batch):
        raise ValueError(f"{len(negatives)} negative rows for {len(batch)} queries")
    chunk_size = chunk_size or settings.LOSS_CHUNK
    candidates = np.concatenate([batch.answer[:, None], negatives.entities], axis=1)
    scores = candidate_scores(params, batch, candidates, chunk_size)

    coefficients = negative_coefficients(spec.family, scores[:, 1:], spec.alpha, negatives.weights)
    pos_weight, neg_weight = weights if weights is not None else (None, None)
    loss, d_pos, d_neg = objective_and_score_grads(scores[:, 0], scores[:, 1:], spec.gamma, coefficients,
                                                   pos_weight, neg_weight)
    upstream = np.concatenate([d_pos[:, None], d_neg], axis=1)

    grad = ScoreGradient()
    for direction in (Direction.TAIL, Direction.HEAD):
        group = np.flatnonzero(batch.direction == direction)
        for rows in _chunks(group, chunk_size):
            backward_candidates(params, direction, batch.anchor[rows], batch.relation[rows], candidates[rows],
                                upstream[rows], grad)
    return loss, grad
