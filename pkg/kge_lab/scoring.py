"""
Scoring functions for kge_lab

RESCAL, DistMult, ComplEx, TransE, RotatE and HAKE, each with an analytic
backward pass. Kernels take gathered embedding blocks shaped
(batch, k, width); the relation block always has k == 1 and the entity
blocks have k == 1 or k == number of candidates.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .data_loader import Direction, Query

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
LAMBDA_TABLE = 'lambda'


def _sum_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the shape of its input."""
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _real_norm(residual: np.ndarray, p: int) -> Tuple[np.ndarray, np.ndarray]:
    """p-norm over the last axis and its gradient (subgradient 0 at zero)."""
    if p == 1:
        return np.abs(residual).sum(axis=-1), np.sign(residual)
    norm = np.sqrt((residual * residual).sum(axis=-1))
    safe = np.where(norm > 0, norm, 1.0)
    grad = np.where(norm[..., None] > 0, residual / safe[..., None], 0.0)
    return norm, grad


def _complex_norm(real: np.ndarray, imag: np.ndarray, p: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """p-norm of elementwise complex moduli, with gradients w.r.t. both parts."""
    if p == 1:
        modulus = np.hypot(real, imag)
        safe = np.where(modulus > 0, modulus, 1.0)
        zero = modulus == 0
        return modulus.sum(axis=-1), np.where(zero, 0.0, real / safe), np.where(zero, 0.0, imag / safe)
    norm = np.sqrt((real * real + imag * imag).sum(axis=-1))
    safe = np.where(norm > 0, norm, 1.0)[..., None]
    zero = (norm == 0)[..., None]
    return norm, np.where(zero, 0.0, real / safe), np.where(zero, 0.0, imag / safe)


class ScoringFunction:
    """Base class: table layout, forward and backward for one model kind."""

    kind = ''
    distance_based = False
    default_p: Optional[int] = None
    complex_entities = False

    def __init__(self, dim: int, p: Optional[int] = None):
        if dim < 1:
            raise ValueError(f"invalid dimension {dim}; must be >= 1")
        self.dim = int(dim)
        self.p = int(p if p is not None else (self.default_p or 1))
        if self.p not in (1, 2):
            raise ValueError(f"p must be 1 or 2, got {self.p}")

    @property
    def entity_width(self) -> int:
        return 2 * self.dim if self.complex_entities else self.dim

    @property
    def relation_width(self) -> int:
        return self.dim

    def table_shapes(self, num_entities: int, num_relations: int) -> Dict[str, Tuple[int, int]]:
        return {
            'entity': (num_entities, self.entity_width),
            'relation': (num_relations, self.relation_width),
        }

    def phase_columns(self, table: str) -> slice:
        """Columns of `table` that hold angles in [0, 2pi)."""
        return slice(0, 0)

    def forward(self, h, r, t, lam=0.0) -> np.ndarray:
        raise NotImplementedError

    def backward(self, h, r, t, lam, upstream):
        """Vector-Jacobian product: returns (dh, dr, dt, dlam) for dL/dscore = upstream."""
        raise NotImplementedError


class RESCAL(ScoringFunction):
    kind = 'rescal'

    @property
    def relation_width(self) -> int:
        return self.dim * self.dim

    def _matrix(self, r):
        return r.reshape(r.shape[:-1] + (self.dim, self.dim))

    def forward(self, h, r, t, lam=0.0):
        M = self._matrix(r)
        if h.shape[-2] == 1:
            hM = np.einsum('...i,...ij->...j', h, M)
            return (hM * t).sum(axis=-1)
        Mt = np.einsum('...ij,...j->...i', M, t)
        return (h * Mt).sum(axis=-1)

    def backward(self, h, r, t, lam, upstream):
        M = self._matrix(r)
        u = upstream[..., None]
        Mt = np.einsum('...ij,...j->...i', M, t)
        hM = np.einsum('...i,...ij->...j', h, M)
        dh = _sum_to(u * Mt, h.shape)
        dt = _sum_to(u * hM, t.shape)
        full = np.broadcast_shapes(h.shape, t.shape)
        uh = np.broadcast_to(u * h, full)
        dM = np.einsum('bki,bkj->bij', uh, np.broadcast_to(t, full))
        dr = dM.reshape(r.shape)
        return dh, dr, dt, 0.0


class DistMult(ScoringFunction):
    kind = 'distmult'

    def forward(self, h, r, t, lam=0.0):
        return (h * r * t).sum(axis=-1)

    def backward(self, h, r, t, lam, upstream):
        u = upstream[..., None]
        return (
            _sum_to(u * r * t, h.shape),
            _sum_to(u * h * t, r.shape),
            _sum_to(u * h * r, t.shape),
            0.0,
        )


class ComplEx(ScoringFunction):
    kind = 'complex'
    complex_entities = True

    @property
    def relation_width(self) -> int:
        return 2 * self.dim

    def forward(self, h, r, t, lam=0.0):
        h_re, h_im = np.split(h, 2, axis=-1)
        r_re, r_im = np.split(r, 2, axis=-1)
        t_re, t_im = np.split(t, 2, axis=-1)
        a = h_re * r_re - h_im * r_im
        b = h_re * r_im + h_im * r_re
        return (a * t_re + b * t_im).sum(axis=-1)

    def backward(self, h, r, t, lam, upstream):
        u = upstream[..., None]
        h_re, h_im = np.split(h, 2, axis=-1)
        r_re, r_im = np.split(r, 2, axis=-1)
        t_re, t_im = np.split(t, 2, axis=-1)
        dh = np.concatenate(np.broadcast_arrays(u * (r_re * t_re + r_im * t_im), u * (r_re * t_im - r_im * t_re)), axis=-1)
        dr = np.concatenate(np.broadcast_arrays(u * (h_re * t_re + h_im * t_im), u * (h_re * t_im - h_im * t_re)), axis=-1)
        dt = np.concatenate(np.broadcast_arrays(u * (h_re * r_re - h_im * r_im), u * (h_re * r_im + h_im * r_re)), axis=-1)
        return _sum_to(dh, h.shape), _sum_to(dr, r.shape), _sum_to(dt, t.shape), 0.0


class TransE(ScoringFunction):
    kind = 'transe'
    distance_based = True
    default_p = 1

    def forward(self, h, r, t, lam=0.0):
        norm, _ = _real_norm(h + r - t, self.p)
        return -norm

    def backward(self, h, r, t, lam, upstream):
        _, g = _real_norm(h + r - t, self.p)
        g = -upstream[..., None] * g
        return _sum_to(g, h.shape), _sum_to(g, r.shape), _sum_to(-g, t.shape), 0.0


class RotatE(ScoringFunction):
    """Relations are stored as phase angles, so |r_i| = 1 by construction."""

    kind = 'rotate'
    distance_based = True
    default_p = 1
    complex_entities = True

    def phase_columns(self, table):
        return slice(0, self.dim) if table == 'relation' else slice(0, 0)

    def _rotate(self, h, r):
        h_re, h_im = np.split(h, 2, axis=-1)
        cos, sin = np.cos(r), np.sin(r)
        return h_re, h_im, cos, sin, h_re * cos - h_im * sin, h_re * sin + h_im * cos

    def forward(self, h, r, t, lam=0.0):
        *_, rot_re, rot_im = self._rotate(h, r)
        t_re, t_im = np.split(t, 2, axis=-1)
        norm, _, _ = _complex_norm(rot_re - t_re, rot_im - t_im, self.p)
        return -norm

    def backward(self, h, r, t, lam, upstream):
        h_re, h_im, cos, sin, rot_re, rot_im = self._rotate(h, r)
        t_re, t_im = np.split(t, 2, axis=-1)
        _, g_re, g_im = _complex_norm(rot_re - t_re, rot_im - t_im, self.p)
        u = upstream[..., None]
        g_re, g_im = -u * g_re, -u * g_im
        dh = np.concatenate(np.broadcast_arrays(g_re * cos + g_im * sin, g_im * cos - g_re * sin), axis=-1)
        dr = g_im * rot_re - g_re * rot_im
        dt = np.concatenate(np.broadcast_arrays(-g_re, -g_im), axis=-1)
        return _sum_to(dh, h.shape), _sum_to(dr, r.shape), _sum_to(dt, t.shape), 0.0


class HAKE(ScoringFunction):
    """Modulus part -||h o |r| - t||_p plus phase part -lambda ||sin((h'+r'-t')/2)||_1."""

    kind = 'hake'
    distance_based = True
    default_p = 2
    complex_entities = True

    @property
    def relation_width(self) -> int:
        return 2 * self.dim

    def table_shapes(self, num_entities, num_relations):
        shapes = super().table_shapes(num_entities, num_relations)
        shapes[LAMBDA_TABLE] = (1, 1)
        return shapes

    def phase_columns(self, table):
        if table in ('entity', 'relation'):
            return slice(self.dim, 2 * self.dim)
        return slice(0, 0)

    def _parts(self, h, r, t):
        h_mod, h_phase = np.split(h, 2, axis=-1)
        r_mod, r_phase = np.split(r, 2, axis=-1)
        t_mod, t_phase = np.split(t, 2, axis=-1)
        half = (np.mod(h_phase, TWO_PI) + np.mod(r_phase, TWO_PI) - np.mod(t_phase, TWO_PI)) / 2.0
        return h_mod, r_mod, t_mod, half

    def forward(self, h, r, t, lam=0.0):
        h_mod, r_mod, t_mod, half = self._parts(h, r, t)
        norm, _ = _real_norm(h_mod * np.abs(r_mod) - t_mod, self.p)
        return -norm - lam * np.abs(np.sin(half)).sum(axis=-1)

    def backward(self, h, r, t, lam, upstream):
        h_mod, r_mod, t_mod, half = self._parts(h, r, t)
        u = upstream[..., None]
        _, g = _real_norm(h_mod * np.abs(r_mod) - t_mod, self.p)
        g = -u * g
        sin_half = np.sin(half)
        dphase = -u * lam * 0.5 * np.cos(half) * np.sign(sin_half)
        dh = np.concatenate(np.broadcast_arrays(g * np.abs(r_mod), dphase), axis=-1)
        dr = np.concatenate(np.broadcast_arrays(g * h_mod * np.sign(r_mod), dphase), axis=-1)
        dt = np.concatenate(np.broadcast_arrays(-g, -dphase), axis=-1)
        dlam = float(-(upstream * np.abs(sin_half).sum(axis=-1)).sum())
        return _sum_to(dh, h.shape), _sum_to(dr, r.shape), _sum_to(dt, t.shape), dlam

SCORING_FUNCTIONS = {cls.kind: cls for cls in (RESCAL, DistMult, ComplEx, TransE, RotatE, HAKE)}
MODEL_KINDS = tuple(SCORING_FUNCTIONS)


def get_scoring(kind: str, dim: int, p: Optional[int] = None) -> ScoringFunction:
    try:
        return SCORING_FUNCTIONS[kind](dim, p)
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}") from None


@dataclass
class ModelParams:
    """Embedding tables of one model; `lambda` exists for HAKE only."""

    model: str
    dim: int
    tables: Dict[str, np.ndarray]
    p: Optional[int] = None
    seed: Optional[int] = None
    scoring: ScoringFunction = field(init=False, repr=False)

    def __post_init__(self):
        self.scoring = get_scoring(self.model, self.dim, self.p)
        self.p = self.scoring.p

    @property
    def num_entities(self) -> int:
        return self.tables['entity'].shape[0]

    @property
    def num_relations(self) -> int:
        return self.tables['relation'].shape[0]

    @property
    def lam(self) -> float:
        return float(self.tables[LAMBDA_TABLE][0, 0]) if LAMBDA_TABLE in self.tables else 0.0

    def copy(self) -> 'ModelParams':
        return ModelParams(self.model, self.dim, {k: v.copy() for k, v in self.tables.items()}, self.p, self.seed)


def init_params(model: str, num_entities: int, num_relations: int, dim: int,
                gamma: float = 0.0, seed: int = 0, p: Optional[int] = None) -> ModelParams:
    """
    Fill every table i.i.d. uniform on [-(gamma+2)/dim, (gamma+2)/dim]

    Phase columns (RotatE relations, HAKE phase halves) are uniform on
    [0, 2pi) and the HAKE mixing weight lambda is uniform on [0, 0.01].
    """
    scoring = get_scoring(model, dim, p)
    rng = np.random.default_rng(seed)
    bound = (gamma + 2.0) / dim
    tables = {}
    for name, shape in scoring.table_shapes(num_entities, num_relations).items():
        if name == LAMBDA_TABLE:
            tables[name] = rng.uniform(0.0, 0.01, size=shape)
            continue
        table = rng.uniform(-bound, bound, size=shape)
        phases = scoring.phase_columns(name)
        width = phases.stop - phases.start
        if width:
            table[:, phases] = rng.uniform(0.0, TWO_PI, size=(shape[0], width))
        tables[name] = table
    return ModelParams(model, dim, tables, scoring.p, seed)


class ScoreGradient:
    """Sparse gradient: (table, row) -> dense block, merged in insertion order."""

    def __init__(self):
        self._rows = defaultdict(list)
        self._grads = defaultdict(list)

    def add(self, table: str, rows: np.ndarray, grads: np.ndarray) -> None:
        rows = np.asarray(rows, dtype=np.int64).reshape(-1)
        self._rows[table].append(rows)
        self._grads[table].append(np.asarray(grads, dtype=np.float64).reshape(len(rows), -1))

    @property
    def tables(self):
        return list(self._rows)

    def reduce(self, table: str) -> Tuple[np.ndarray, np.ndarray]:
        """Unique rows (sorted) of `table` and their summed gradient blocks."""
        if table not in self._rows:
            return np.empty(0, dtype=np.int64), np.empty((0, 0))
        rows = np.concatenate(self._rows[table])
        grads = np.concatenate(self._grads[table], axis=0)
        unique, inverse = np.unique(rows, return_inverse=True)
        summed = np.zeros((len(unique), grads.shape[1]))
        np.add.at(summed, inverse.reshape(-1), grads)
        return unique, summed

    def as_dict(self) -> Dict[Tuple[str, int], np.ndarray]:
        out = {}
        for table in self.tables:
            rows, grads = self.reduce(table)
            for row, grad in zip(rows, grads):
                out[(table, int(row))] = grad
        return out

    def dense(self, params: ModelParams) -> Dict[str, np.ndarray]:
        """Full-size gradient tables; meant for tests and small models."""
        out = {name: np.zeros_like(table) for name, table in params.tables.items()}
        for table in self.tables:
            rows, grads = self.reduce(table)
            out[table][rows] += grads
        return out


def _gather(params: ModelParams, direction: Direction, anchors: np.ndarray, relations: np.ndarray,
            candidates: np.ndarray):
    entity, relation = params.tables['entity'], params.tables['relation']
    anchor_emb = entity[anchors][:, None, :]
    cand_emb = entity[candidates]
    rel_emb = relation[relations][:, None, :]
    if direction is Direction.TAIL:
        return anchor_emb, rel_emb, cand_emb
    return cand_emb, rel_emb, anchor_emb


def score_candidates(params: ModelParams, direction: Direction, anchors: np.ndarray, relations: np.ndarray,
                     candidates: np.ndarray) -> np.ndarray:
    """Scores (batch, k) of `candidates` (batch, k) in the masked slot of same-direction queries."""
    h, r, t = _gather(params, Direction(direction), anchors, relations, candidates)
    return params.scoring.forward(h, r, t, params.lam)


def score_all_entities(params: ModelParams, direction: Direction, anchors: np.ndarray,
                       relations: np.ndarray) -> np.ndarray:
    """Scores (batch, |E|) of every entity as the answer of each query."""
    entity, relation = params.tables['entity'], params.tables['relation']
    anchor_emb = entity[anchors][:, None, :]
    rel_emb = relation[relations][:, None, :]
    everyone = entity[None, :, :]
    if Direction(direction) is Direction.TAIL:
        return params.scoring.forward(anchor_emb, rel_emb, everyone, params.lam)
    return params.scoring.forward(everyone, rel_emb, anchor_emb, params.lam)


def backward_candidates(params: ModelParams, direction: Direction, anchors: np.ndarray, relations: np.ndarray,
                        candidates: np.ndarray, upstream: np.ndarray, grad: ScoreGradient) -> None:
    """Accumulate d(sum upstream * score)/d(params) into `grad`."""
    direction = Direction(direction)
    h, r, t = _gather(params, direction, anchors, relations, candidates)
    dh, dr, dt, dlam = params.scoring.backward(h, r, t, params.lam, upstream)
    d_anchor, d_cand = (dh, dt) if direction is Direction.TAIL else (dt, dh)
    grad.add('entity', anchors, d_anchor[:, 0, :])
    grad.add('entity', candidates.reshape(-1), d_cand.reshape(-1, d_cand.shape[-1]))
    grad.add('relation', relations, dr[:, 0, :])
    if LAMBDA_TABLE in params.tables:
        grad.add(LAMBDA_TABLE, np.zeros(1, dtype=np.int64), np.array([[dlam]]))


def _check_query(params: ModelParams, query: Query, candidate: int) -> None:
    for value, bound, what in ((query.anchor, params.num_entities, 'entity'),
                               (candidate, params.num_entities, 'entity'),
                               (query.relation, params.num_relations, 'relation')):
        if not 0 <= value < bound:
            raise IndexError(f"{what} index {value} out of range [0, {bound})")


def score(params: ModelParams, query: Query, candidate: int) -> float:
    """Score of `candidate` as the answer of `query`."""
    _check_query(params, query, candidate)
    scores = score_candidates(params, query.direction, np.array([query.anchor]), np.array([query.relation]),
                              np.array([[candidate]]))
    return float(scores[0, 0])


def score_grad(params: ModelParams, query: Query, candidate: int) -> Tuple[float, Dict[Tuple[str, int], np.ndarray]]:
    """Score plus its exact gradient w.r.t. every touched parameter row."""
    value = score(params, query, candidate)
    grad = ScoreGradient()
    backward_candidates(params, query.direction, np.array([query.anchor]), np.array([query.relation]),
                        np.array([[candidate]]), np.ones((1, 1)), grad)
    return value, grad.as_dict()
