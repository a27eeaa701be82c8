"""
Training loop for kge_lab
Minibatch Adam over uniformly sampled queries, plus a tabular mode that
trains one free score per (query, label) cell of a categorical instance.
"""

import json
import logging
from typing import Dict, List, Optional, Tuple

import numpy as np

from .data_loader import KGDataset, build_filter_index, count_frequencies, make_queries
from .evaluation import evaluate
from .exceptions import DataError, NumericalAbort
from .losses import negative_coefficients, objective_and_score_grads
from .models import EvalReport, LossSpec, TrainConfig
from .optim import AdamState, adam_step, dense_adam_step
from .sampling import loss_and_grad, sample_negatives
from .scoring import ModelParams, init_params
from .seeding import derive_seed, make_rng
from .subsampling import subsample_table
from .theory import CategoricalInstance, TabularScoreModel, exact_loss, expected_score_grad

logger = logging.getLogger(__name__)


def learning_rate_at(step: int, base_lr: float, max_steps: int, schedule: str = 'constant',
                     halve_fraction: float = 0.5) -> float:
    """Rate for 0-based `step`; `halve` divides by two after each further fraction of max_steps."""
    if schedule == 'constant':
        return base_lr
    if schedule == 'halve':
        interval = max(1, int(round(halve_fraction * max_steps)))
        return base_lr * 0.5 ** (step // interval)
    raise ValueError(f"unknown learning-rate schedule {schedule!r}")


def metric_record(step: int, split: str, loss: Optional[float] = None,
                  report: Optional[EvalReport] = None) -> Dict:
    record = {'step': step, 'split': split}
    if loss is not None:
        record['loss'] = loss
    if report is not None:
        record.update(mrr=report.mrr, hits1=report.hits1, hits3=report.hits3, hits10=report.hits10)
    return record


class KGETrainer:
    """Owns the parameters and optimizer state of one training run"""

    def __init__(self, config: TrainConfig, dataset: KGDataset, metrics_path: Optional[str] = None):
        """
        Set up parameters, optimizer state and per-run lookup tables

        Args:
            config: Resolved training configuration
            dataset: Loaded benchmark (train split must be non-empty)
            metrics_path: JSON-lines file that receives every log record as it is made
        """
        if len(dataset.train) == 0:
            raise DataError("training split is empty")
        self.config = config
        self.dataset = dataset
        self.metrics_path = metrics_path
        self.spec: LossSpec = config.loss

        self.params = init_params(
            config.model, dataset.num_entities, dataset.num_relations, config.dim,
            gamma=self.spec.gamma, seed=derive_seed(config.seed, 'init'), p=config.p,
        )
        self.state = AdamState.zeros_like(self.params.tables)
        self.queries = make_queries(dataset.train)
        self.frequencies = count_frequencies(dataset.train)
        self.pos_weights, self.neg_weights = subsample_table(
            self.spec.subsampling, self.frequencies, self.spec.rescale_subsampling,
        )
        self.filter_index = build_filter_index(dataset.train, dataset.valid, dataset.test)

        self.log: List[Dict] = []
        self.losses: List[float] = []

    def batch_seed(self, step: int) -> int:
        return derive_seed(self.config.seed, f"batch:{step}")

    def train_step(self, step: int) -> float:
        """Sample one minibatch, take one Adam step, return the batch loss."""
        seed = self.batch_seed(step)
        rng = np.random.default_rng(seed)
        picked = rng.integers(0, len(self.queries), size=self.config.batch_size)
        batch = self.queries.take(picked)
        negatives = sample_negatives(self.dataset.num_entities, self.spec.nu, rng, self.config.batch_size)

        # query q belongs to training triple q // 2, direction q % 2
        rows, directions = picked // 2, picked % 2
        weights = (self.pos_weights[directions, rows], self.neg_weights[directions, rows])

        loss, grads = loss_and_grad(self.params, batch, negatives, self.spec, weights)
        if not np.isfinite(loss):
            logger.critical(f"Non-finite loss at step {step} (batch seed {seed})")
            raise NumericalAbort(step, seed, loss)

        lr = learning_rate_at(step, self.config.learning_rate, self.config.max_steps,
                              self.config.lr_schedule, self.config.halve_fraction)
        adam_step(self.params, grads, self.state, lr)
        return loss

    def evaluate_split(self, split: str) -> Optional[EvalReport]:
        triples = self.dataset.split(split)
        if len(triples) == 0:
            logger.warning(f"Skipping evaluation on empty split {split!r}")
            return None
        return evaluate(self.params, make_queries(triples), self.filter_index, split=split)

    def _record(self, record: Dict, sink) -> None:
        self.log.append(record)
        if sink is not None:
            sink.write(json.dumps(record, sort_keys=True) + '\n')
            sink.flush()

    def run(self) -> Tuple[ModelParams, List[Dict]]:
        """Run max_steps updates, then evaluate on test; returns (params, metric log)."""
        cfg = self.config
        logger.info(f"🚀 Training {cfg.model} (d={cfg.dim}) with {self.spec.family}, gamma={self.spec.gamma}, "
                    f"nu={self.spec.nu}, subsampling={self.spec.subsampling} for {cfg.max_steps} steps")
        sink = open(self.metrics_path, 'w', encoding='utf-8') if self.metrics_path else None
        try:
            for step in range(cfg.max_steps):
                loss = self.train_step(step)
                self.losses.append(loss)
                last = step == cfg.max_steps - 1
                if step % cfg.log_every == 0 or last:
                    logger.info(f"Step {step}: loss={loss:.6f}")
                    self._record(metric_record(step, 'train', loss=loss), sink)
                if cfg.eval_every and (step + 1) % cfg.eval_every == 0:
                    report = self.evaluate_split('valid')
                    if report is not None:
                        self._record(metric_record(step, 'valid', report=report), sink)

            report = self.evaluate_split('test')
            if report is not None:
                self._record(metric_record(cfg.max_steps - 1, 'test', report=report), sink)
        finally:
            if sink is not None:
                sink.close()
        logger.info("✅ Training completed")
        return self.params, self.log


def train(config: TrainConfig, dataset: KGDataset,
          metrics_path: Optional[str] = None) -> Tuple[ModelParams, List[Dict]]:
    """Train a model on `dataset`; see KGETrainer."""
    return KGETrainer(config, dataset, metrics_path).run()


def smoothed(losses, decay: float = 0.98) -> np.ndarray:
    """Exponential moving average, seeded with the first value."""
    losses = np.asarray(losses, dtype=np.float64)
    out = np.empty_like(losses)
    running = losses[0] if len(losses) else 0.0
    for i, value in enumerate(losses):
        running = decay * running + (1.0 - decay) * value
        out[i] = running
    return out


def _sample_rows(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draws; cdf is (B, L) and u is (B,) or (B, k)."""
    if u.ndim == 1:
        idx = (cdf < u[:, None]).sum(axis=-1)
    else:
        idx = (cdf[:, None, :] < u[..., None]).sum(axis=-1)
    return np.minimum(idx, cdf.shape[-1] - 1)


def train_tabular(instance: CategoricalInstance, spec: LossSpec, steps: int = 2000, lr: float = 0.05,
                  mode: str = 'exact', batch_size: int = 64, seed: int = 0, constraint: str = 'unbounded',
                  lr_schedule: str = 'constant', halve_fraction: float = 0.5) -> Tuple[TabularScoreModel, np.ndarray]:
    """
    Adam on a tabular score model

    `exact` uses the full-expectation loss and gradient (NS families only);
    `sampled` draws queries from p(x), answers from p_d and nu negatives
    from p_n for every step, so it also covers SANS.

    Returns:
        Tuple of (trained model, per-step loss)
    """
    if mode not in ('exact', 'sampled'):
        raise ValueError(f"unknown tabular training mode {mode!r}")
    model = TabularScoreModel.zeros(instance, constraint)
    tables = {'scores': model.scores}
    state = AdamState.zeros_like(tables)
    rng = make_rng(seed, 'tabular')
    data_cdf = np.cumsum(instance.p_d, axis=1)
    noise_cdf = np.cumsum(instance.p_n, axis=1)
    losses = np.empty(steps)

    for step in range(steps):
        if mode == 'exact':
            losses[step] = exact_loss(instance, model.scores, spec.family, spec.gamma, spec.nu)
            grad = expected_score_grad(instance, model.scores, spec.family, spec.gamma, spec.nu)
        else:
            x = rng.choice(instance.num_queries, size=batch_size, p=instance.p_x)
            y = _sample_rows(data_cdf[x], rng.random(batch_size))
            negs = _sample_rows(noise_cdf[x], rng.random((batch_size, spec.nu)))
            pos, neg = model.scores[x, y], model.scores[x[:, None], negs]
            coefficients = negative_coefficients(spec.family, neg, spec.alpha)
            losses[step], d_pos, d_neg = objective_and_score_grads(pos, neg, spec.gamma, coefficients)
            grad = np.zeros_like(model.scores)
            np.add.at(grad, (x, y), d_pos)
            np.add.at(grad, (np.broadcast_to(x[:, None], negs.shape), negs), d_neg)

        rate = learning_rate_at(step, lr, steps, lr_schedule, halve_fraction)
        dense_adam_step(tables, {'scores': grad}, state, rate)
        model.project()

    logger.debug(f"Tabular {mode} training finished: loss {losses[0]:.6f} -> {losses[-1]:.6f}")
    return model, losses
