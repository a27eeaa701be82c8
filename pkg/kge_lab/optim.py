"""Adam with row-sparse updates for embedding tables."""

import logging
from dataclasses import dataclass
from typing import Dict

import numpy as np

from .scoring import ModelParams, ScoreGradient

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """First/second moments per table, zero-initialized, plus the step counter."""

    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, tables: Dict[str, np.ndarray], **kwargs) -> 'AdamState':
        return cls(
            m={name: np.zeros_like(t) for name, t in tables.items()},
            v={name: np.zeros_like(t) for name, t in tables.items()},
            **kwargs,
        )


def adam_step(params: ModelParams, grads: ScoreGradient, state: AdamState, lr: float) -> None:
    """
    One in-place update: only rows present in `grads` move.

    Moments of untouched rows are left as they are; the step counter, and
    with it the bias correction, advances once per call.
    """
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    step_size = lr / bc1

    for table in grads.tables:
        if table not in params.tables:
            raise ValueError(f"gradient for unknown table {table!r}")
        rows, g = grads.reduce(table)
        target = params.tables[table]
        if g.shape[1] != target.shape[1]:
            raise ValueError(f"gradient width {g.shape[1]} does not match table {table!r} width {target.shape[1]}")
        m = state.m[table]
        v = state.v[table]
        m[rows] = state.beta1 * m[rows] + (1.0 - state.beta1) * g
        v[rows] = state.beta2 * v[rows] + (1.0 - state.beta2) * (g * g)
        denom = np.sqrt(v[rows] / bc2) + state.eps
        target[rows] -= step_size * m[rows] / denom


def dense_adam_step(tables: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState, lr: float) -> None:
    """Same rule over whole arrays; used for the tabular score model."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        tables[name] -= (lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
