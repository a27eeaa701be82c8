"""
Theory lab for kge_lab
Closed-form and desk-scale numerical checks of how the margin gamma, the
number of negatives nu and the noise distribution shape what the NS
losses learn, on small categorical instances with a free score per
(query, label) cell.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit, log_expit, softmax

logger = logging.getLogger(__name__)

CLOSED_FORM_FAMILIES = ('ns-original', 'ns-kge')
RANGE_CONSTRAINTS = ('unbounded', 'nonpositive')

# relative slack for the reachability inequality, so that gamma = log|Y|
# exactly counts as reachable despite rounding in exp(log(n)) / n
_REACH_RTOL = 1e-12


@dataclass
class CategoricalInstance:
    """p_d(y|x) and p_n(y|x) as (queries, labels) arrays, plus the query marginal p(x)."""

    p_d: np.ndarray
    p_n: np.ndarray
    p_x: Optional[np.ndarray] = None

    def __post_init__(self):
        self.p_d = np.atleast_2d(np.asarray(self.p_d, dtype=np.float64))
        self.p_n = np.atleast_2d(np.asarray(self.p_n, dtype=np.float64))
        if self.p_n.shape != self.p_d.shape:
            raise ValueError(f"p_d shape {self.p_d.shape} != p_n shape {self.p_n.shape}")
        if self.p_x is None:
            self.p_x = np.full(self.num_queries, 1.0 / self.num_queries)
        self.p_x = np.asarray(self.p_x, dtype=np.float64).reshape(self.num_queries)
        for name, rows in (('p_d', self.p_d), ('p_n', self.p_n)):
            if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-12):
                raise ValueError(f"{name} rows must be probability distributions")
        if abs(self.p_x.sum() - 1.0) > 1e-12:
            raise ValueError("p_x must sum to 1")

    @property
    def num_queries(self) -> int:
        return self.p_d.shape[0]

    @property
    def num_labels(self) -> int:
        return self.p_d.shape[1]


def random_instance(num_queries: int, num_labels: int, seed: int = 0, uniform_noise: bool = False,
                    concentration: float = 1.0) -> CategoricalInstance:
    """Dirichlet-drawn p_d (and p_n unless uniform), renormalized to exact row sums."""
    rng = np.random.default_rng(seed)
    p_d = rng.dirichlet(np.full(num_labels, concentration), size=num_queries)
    if uniform_noise:
        p_n = np.full((num_queries, num_labels), 1.0 / num_labels)
    else:
        p_n = rng.dirichlet(np.full(num_labels, concentration), size=num_queries)
        p_n = np.maximum(p_n, 1e-6)
    return CategoricalInstance(normalize_rows(p_d), normalize_rows(p_n))


def normalize_rows(rows: np.ndarray) -> np.ndarray:
    rows = rows / rows.sum(axis=1, keepdims=True)
    # push the rounding residue into the largest entry
    residue = 1.0 - rows.sum(axis=1)
    rows[np.arange(len(rows)), rows.argmax(axis=1)] += residue
    return rows


@dataclass
class TabularScoreModel:
    """One free score per (query, label); `nonpositive` clamps to (-inf, 0]."""

    scores: np.ndarray
    constraint: str = 'unbounded'

    def __post_init__(self):
        if self.constraint not in RANGE_CONSTRAINTS:
            raise ValueError(f"unknown range constraint {self.constraint!r}")
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.project()

    @classmethod
    def zeros(cls, instance: CategoricalInstance, constraint: str = 'unbounded') -> 'TabularScoreModel':
        return cls(np.zeros(instance.p_d.shape), constraint)

    def project(self) -> None:
        if self.constraint == 'nonpositive':
            np.minimum(self.scores, 0.0, out=self.scores)

    def distribution(self) -> np.ndarray:
        return softmax(self.scores, axis=1)


def _noise_scale(family: str, nu: int) -> float:
    """Expected number of negative log-sigmoid terms per unit of p_n."""
    if family == 'ns-original':
        return float(nu)
    if family == 'ns-kge':
        return 1.0
    raise ValueError(f"no closed form for loss family {family!r}; expected one of {CLOSED_FORM_FAMILIES}")


def objective_distribution(instance: CategoricalInstance) -> np.ndarray:
    """Row-normalized p_d / p_n: where softmax(s) ends up at the loss optimum."""
    if np.any(instance.p_n <= 0):
        raise ValueError("p_n must be strictly positive")
    ratio = instance.p_d / instance.p_n
    return ratio / ratio.sum(axis=1, keepdims=True)


def optimal_scores(instance: CategoricalInstance, family: str, gamma: float = 0.0, nu: int = 1) -> np.ndarray:
    """Unconstrained optimum: exp(s) = p_d / (c * exp(gamma) * p_n), c = nu (original) or 1 (KGE)."""
    scale = _noise_scale(family, nu)
    with np.errstate(divide='ignore'):
        return np.log(instance.p_d) - np.log(scale * instance.p_n) - gamma


def reachability(instance: CategoricalInstance, family: str, gamma: float = 0.0, nu: int = 1) -> np.ndarray:
    """True where the unconstrained optimum lies inside (-inf, 0]."""
    scale = _noise_scale(family, nu)
    bound = scale * np.exp(gamma) * instance.p_n
    return instance.p_d <= bound * (1.0 + _REACH_RTOL)


def minimal_margin(label_count: int) -> float:
    """Smallest gamma with every cell reachable under uniform noise: log |Y|."""
    if label_count < 1:
        raise ValueError(f"label count must be >= 1, got {label_count}")
    return float(np.log(label_count))


def cell_losses(instance: CategoricalInstance, scores: np.ndarray, family: str, gamma: float = 0.0,
                nu: int = 1) -> np.ndarray:
    """Full-expectation loss contribution of every (query, label) cell."""
    scale = _noise_scale(family, nu)
    z = np.asarray(scores, dtype=np.float64) + gamma
    with np.errstate(invalid='ignore'):
        positive = np.where(instance.p_d > 0, instance.p_d * log_expit(z), 0.0)
    negative = scale * instance.p_n * log_expit(-z)
    return -instance.p_x[:, None] * (positive + negative)


def exact_loss(instance: CategoricalInstance, scores: np.ndarray, family: str, gamma: float = 0.0,
               nu: int = 1) -> float:
    return float(cell_losses(instance, scores, family, gamma, nu).sum())


def expected_score_grad(instance: CategoricalInstance, scores: np.ndarray, family: str, gamma: float = 0.0,
                        nu: int = 1) -> np.ndarray:
    """d(exact_loss)/d(scores)."""
    scale = _noise_scale(family, nu)
    z = np.asarray(scores, dtype=np.float64) + gamma
    return -instance.p_x[:, None] * (instance.p_d * expit(-z) - scale * instance.p_n * expit(z))


def _constrained_optimum(instance, family, gamma, nu, constraint):
    best = optimal_scores(instance, family, gamma, nu)
    if constraint == 'nonpositive':
        best = np.minimum(best, 0.0)
    return best


def exact_loss_and_floor(instance: CategoricalInstance, model: TabularScoreModel, family: str,
                         gamma: float = 0.0, nu: int = 1) -> Tuple[float, float]:
    """
    Expected loss at the model's scores and the least loss its range allows

    Each cell is a convex 1-D problem, so the constrained minimizer is the
    unconstrained one clamped to the allowed range.
    """
    loss = exact_loss(instance, model.scores, family, gamma, nu)
    floor = exact_loss(instance, _constrained_optimum(instance, family, gamma, nu, model.constraint),
                       family, gamma, nu)
    return loss, floor


def floor_gap(instance: CategoricalInstance, family: str, gamma: float = 0.0, nu: int = 1) -> np.ndarray:
    """Per-cell excess of the nonpositive-range floor over the unconstrained one."""
    free = cell_losses(instance, _constrained_optimum(instance, family, gamma, nu, 'unbounded'), family, gamma, nu)
    clamped = cell_losses(instance, _constrained_optimum(instance, family, gamma, nu, 'nonpositive'),
                          family, gamma, nu)
    return clamped - free


def descend(instance: CategoricalInstance, family: str, gamma: float = 0.0, nu: int = 1,
            constraint: str = 'unbounded', max_steps: int = 500, method: str = 'newton',
            lr: float = 1.0, tol: float = 1e-13) -> TabularScoreModel:
    """
    Full-expectation minimization of the tabular model

    `newton` takes per-cell Newton steps clipped to unit length (the cells
    are independent convex problems); `gradient` takes plain projected
    gradient steps of size `lr`.
    """
    model = TabularScoreModel.zeros(instance, constraint)
    scale = _noise_scale(family, nu)
    for step in range(max_steps):
        grad = expected_score_grad(instance, model.scores, family, gamma, nu)
        if method == 'newton':
            z = model.scores + gamma
            curvature = instance.p_x[:, None] * (instance.p_d + scale * instance.p_n) * expit(z) * expit(-z)
            delta = np.clip(grad / np.maximum(curvature, 1e-300), -1.0, 1.0)
        elif method == 'gradient':
            delta = lr * grad
        else:
            raise ValueError(f"unknown descent method {method!r}")
        model.scores -= delta
        model.project()
        if np.max(np.abs(delta)) < tol:
            logger.debug(f"Tabular descent converged after {step + 1} steps")
            break
    return model


def l1_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Largest row-wise L1 distance."""
    return float(np.max(np.abs(np.asarray(p) - np.asarray(q)).sum(axis=1)))


def gradient_scaling_probe(instance: CategoricalInstance, family: str, nus: Sequence[int], trials: int = 10_000,
                           seed: int = 0, gamma: float = 0.0, gammas: Sequence[float] = (0.0, 6.0),
                           query: int = 0) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Monte-Carlo negative-term score gradients at fixed random scores

    For each nu, negatives are drawn from p_n(.|x) `trials` times. The
    table reports the norm of the mean gradient (the expected gradient)
    and, for reference, the mean of the per-trial norms. A second table
    gives the exact expected gradient norm at each margin in `gammas`.

    Returns:
        Tuple of (scaling table, margin table)
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    num_labels = instance.num_labels
    scores = rng.normal(size=num_labels)
    noise = instance.p_n[query]

    rows = []
    for nu in nus:
        coef = 1.0 if family == 'ns-original' else 1.0 / nu
        samples = rng.choice(num_labels, size=(trials, nu), p=noise)
        flat = (np.arange(trials)[:, None] * num_labels + samples).ravel()
        counts = np.bincount(flat, minlength=trials * num_labels).reshape(trials, num_labels)
        per_trial = coef * counts * expit(scores + gamma)
        rows.append({
            'family': family,
            'nu': nu,
            'expected_grad_norm': float(np.linalg.norm(per_trial.mean(axis=0))),
            'mean_trial_norm': float(np.linalg.norm(per_trial, axis=1).mean()),
        })
    scaling = pd.DataFrame(rows)
    scaling['ratio'] = scaling['expected_grad_norm'] / scaling['expected_grad_norm'].iloc[0]

    reference_nu = nus[0]
    margin_rows = []
    for g in gammas:
        expected = _noise_scale(family, reference_nu) * noise * expit(scores + g)
        margin_rows.append({'family': family, 'nu': reference_nu, 'gamma': g,
                            'expected_grad_norm': float(np.linalg.norm(expected))})
    return scaling, pd.DataFrame(margin_rows)


def sans_equivalence_probe(instance: CategoricalInstance, gamma: float, nus: Sequence[int], trials: int = 10_000,
                           seed: int = 0, alpha: float = 1.0, query: int = 0, scores: Optional[np.ndarray] = None,
                           include_exhaustive: bool = True) -> pd.DataFrame:
    """
    Gap between the sampled self-adversarial loss and its exact limit

    The limit is the KGE NS loss in expectation with p_n = p_theta =
    softmax(alpha * s). Negatives for the sampled loss are uniform. With
    `include_exhaustive`, a final row uses every label exactly once.
    """
    num_labels = instance.num_labels
    if num_labels > 64:
        raise ValueError("exact enumeration needs at most 64 labels")
    rng = np.random.default_rng(seed)
    if scores is None:
        scores = rng.normal(size=num_labels)
    scores = np.asarray(scores, dtype=np.float64)
    p_theta = softmax(alpha * scores)
    positive = float(np.sum(instance.p_d[query] * log_expit(scores + gamma)))
    exact = -(positive + float(np.sum(p_theta * log_expit(-scores - gamma))))

    def sampled(labels: np.ndarray) -> np.ndarray:
        s = scores[labels]
        weights = softmax(alpha * s, axis=-1)
        return -(positive + (weights * log_expit(-s - gamma)).sum(axis=-1))

    rows = []
    for nu in nus:
        labels = rng.integers(0, num_labels, size=(trials, nu))
        gaps = np.abs(sampled(labels) - exact)
        rows.append({'nu': str(nu), 'mean_gap': float(gaps.mean()), 'std_gap': float(gaps.std())})
    if include_exhaustive:
        gap = abs(float(sampled(np.arange(num_labels)[None, :])[0]) - exact)
        rows.append({'nu': 'all', 'mean_gap': gap, 'std_gap': 0.0})
    return pd.DataFrame(rows)
