"""
Negative-sampling losses

All three families share one objective

    -[A * log sigmoid(s_pos + gamma) + B * sum_i c_i * log sigmoid(-s_neg_i - gamma)]

averaged over the batch, where the negative coefficients c_i are 1 for the
original loss, 1/nu for the KGE loss and the (constant) self-adversarial
softmax weights for SANS. A and B are the per-instance subsampling weights.
"""

import logging
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit, log_expit, softmax

logger = logging.getLogger(__name__)

LOSS_FAMILIES = ('ns-original', 'ns-kge', 'sans')


def _as_batch(scores_pos, scores_neg) -> Tuple[np.ndarray, np.ndarray]:
    pos = np.atleast_1d(np.asarray(scores_pos, dtype=np.float64))
    neg = np.asarray(scores_neg, dtype=np.float64).reshape(len(pos), -1)
    return pos, neg


def sans_weights(scores_neg, alpha: float = 1.0) -> np.ndarray:
    """Softmax of alpha * score over each row of negatives."""
    neg = np.atleast_2d(np.asarray(scores_neg, dtype=np.float64))
    return softmax(alpha * neg, axis=-1)


def negative_coefficients(family: str, scores_neg: np.ndarray, alpha: float = 1.0,
                          weights: Optional[np.ndarray] = None) -> np.ndarray:
    """The c_i multiplying each negative log-sigmoid term."""
    if family == 'ns-original':
        return np.ones_like(scores_neg)
    if family == 'ns-kge':
        return np.full_like(scores_neg, 1.0 / scores_neg.shape[-1])
    if family == 'sans':
        return sans_weights(scores_neg, alpha) if weights is None else np.asarray(weights).reshape(scores_neg.shape)
    raise ValueError(f"unknown loss family {family!r}; expected one of {LOSS_FAMILIES}")


def objective_and_score_grads(scores_pos, scores_neg, gamma: float, coefficients: np.ndarray,
                              pos_weight=None, neg_weight=None) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Batch-mean loss and its derivatives w.r.t. the positive and negative scores

    Args:
        scores_pos: (batch,) positive scores
        scores_neg: (batch, nu) negative scores
        gamma: margin added inside both sigmoids
        coefficients: (batch, nu) negative-term coefficients, held constant
        pos_weight: (batch,) multiplier A of the positive term (defaults to 1)
        neg_weight: (batch,) multiplier B of the negative term (defaults to 1)

    Returns:
        Tuple of (loss, dloss/dscores_pos, dloss/dscores_neg)
    """
    pos, neg = _as_batch(scores_pos, scores_neg)
    n = len(pos)
    a = np.ones(n) if pos_weight is None else np.asarray(pos_weight, dtype=np.float64).reshape(n)
    b = np.ones(n) if neg_weight is None else np.asarray(neg_weight, dtype=np.float64).reshape(n)
    c = np.asarray(coefficients, dtype=np.float64).reshape(neg.shape)

    pos_term = log_expit(pos + gamma)
    neg_term = (c * log_expit(-neg - gamma)).sum(axis=-1)
    loss = float(-(a * pos_term + b * neg_term).mean())

    d_pos = -a * expit(-(pos + gamma)) / n
    d_neg = b[:, None] * c * expit(neg + gamma) / n
    return loss, d_pos, d_neg


def loss_original(scores_pos, scores_neg, gamma: float = 0.0, pos_weight=None, neg_weight=None) -> float:
    """Original NS loss: negatives summed, margin optional (gamma=0 is the plain form)."""
    pos, neg = _as_batch(scores_pos, scores_neg)
    coefficients = negative_coefficients('ns-original', neg)
    return objective_and_score_grads(pos, neg, gamma, coefficients, pos_weight, neg_weight)[0]


def loss_kge(scores_pos, scores_neg, gamma: float = 0.0, nu: Optional[int] = None,
             pos_weight=None, neg_weight=None) -> float:
    """KGE NS loss: negatives averaged (1/nu) and margin inside both sigmoids."""
    pos, neg = _as_batch(scores_pos, scores_neg)
    if nu is not None and nu != neg.shape[-1]:
        raise ValueError(f"nu={nu} but {neg.shape[-1]} negative scores per instance were given")
    coefficients = negative_coefficients('ns-kge', neg)
    return objective_and_score_grads(pos, neg, gamma, coefficients, pos_weight, neg_weight)[0]


def loss_sans(scores_pos, scores_neg, gamma: float = 0.0, alpha: float = 1.0,
              pos_weight=None, neg_weight=None, weights=None) -> float:
    """Self-adversarial loss; the softmax weights are treated as constants."""
    pos, neg = _as_batch(scores_pos, scores_neg)
    coefficients = negative_coefficients('sans', neg, alpha, weights)
    return objective_and_score_grads(pos, neg, gamma, coefficients, pos_weight, neg_weight)[0]
