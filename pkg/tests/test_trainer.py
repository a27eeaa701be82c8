import json
from unittest.mock import patch

import numpy as np
import pytest

from kge_lab.checkpoint import save_checkpoint
from kge_lab.data_loader import KGDataset, TripleSet, Vocab, load_dataset
from kge_lab.exceptions import DataError, NumericalAbort
from kge_lab.models import LossSpec, TrainConfig
from kge_lab.scoring import ScoreGradient
from kge_lab.theory import l1_distance, objective_distribution, random_instance
from kge_lab.trainer import KGETrainer, learning_rate_at, smoothed, train, train_tabular


def toy_config(**overrides):
    values = dict(model='distmult', dim=8, batch_size=16, max_steps=300, learning_rate=0.05,
                  log_every=100, eval_every=100, seed=7,
                  loss=LossSpec(family='ns-kge', gamma=0.0, nu=4))
    values.update(overrides)
    return TrainConfig(**values)


class TestLearningRate:
    """Test cases for the learning-rate schedules"""

    def test_constant(self):
        assert learning_rate_at(999, 0.1, 1000) == 0.1

    def test_halve(self):
        rates = [learning_rate_at(s, 1.0, 100, 'halve', 0.25) for s in (0, 24, 25, 50, 99)]
        assert rates == [1.0, 1.0, 0.5, 0.25, 0.125]

    def test_unknown_schedule(self):
        with pytest.raises(ValueError):
            learning_rate_at(0, 1.0, 10, 'cosine')


class TestKGETrainer:
    """Test cases for the minibatch training loop"""

    def test_loss_goes_down(self, toy_dataset_dir):
        dataset = load_dataset(toy_dataset_dir)
        trainer = KGETrainer(toy_config(), dataset)
        trainer.run()
        losses = np.asarray(trainer.losses)
        assert len(losses) == 300
        assert losses[-30:].mean() < losses[:30].mean()

    def test_log_layout(self, toy_dataset_dir):
        dataset = load_dataset(toy_dataset_dir)
        _, log = train(toy_config(), dataset)
        train_steps = [r['step'] for r in log if r['split'] == 'train']
        valid_steps = [r['step'] for r in log if r['split'] == 'valid']
        assert train_steps == [0, 100, 200, 299]
        assert valid_steps == [99, 199, 299]
        assert log[-1]['split'] == 'test' and log[-1]['step'] == 299
        assert 0.0 < log[-1]['mrr'] <= 1.0

    def test_validation_at_final_step(self, toy_dataset_dir):
        dataset = load_dataset(toy_dataset_dir)
        _, log = train(toy_config(max_steps=40, eval_every=40), dataset)
        assert [(r['step'], r['split']) for r in log] == [(0, 'train'), (39, 'train'), (39, 'valid'), (39, 'test')]

    def test_metrics_file_mirrors_log(self, toy_dataset_dir, tmp_path):
        dataset = load_dataset(toy_dataset_dir)
        path = tmp_path / 'metrics.jsonl'
        _, log = train(toy_config(max_steps=50), dataset, metrics_path=str(path))
        lines = [json.loads(line) for line in path.read_text().splitlines()]
        assert lines == log

    def test_same_seed_same_run(self, toy_dataset_dir, tmp_path):
        dataset = load_dataset(toy_dataset_dir)
        outputs = []
        for name in ('a.bin', 'b.bin'):
            params, log = train(toy_config(max_steps=120, model='rotate'), dataset)
            save_checkpoint(params, str(tmp_path / name))
            outputs.append((log, (tmp_path / name).read_bytes()))
        assert outputs[0] == outputs[1]

    def test_different_seed_different_run(self, toy_dataset_dir):
        dataset = load_dataset(toy_dataset_dir)
        a, _ = train(toy_config(max_steps=20), dataset)
        b, _ = train(toy_config(max_steps=20, seed=8), dataset)
        assert not np.array_equal(a.tables['entity'], b.tables['entity'])

    def test_batch_seeds_follow_step(self, toy_dataset_dir):
        trainer = KGETrainer(toy_config(), load_dataset(toy_dataset_dir))
        assert trainer.batch_seed(3) == trainer.batch_seed(3)
        assert trainer.batch_seed(3) != trainer.batch_seed(4)

    def test_non_finite_loss_aborts(self, toy_dataset_dir):
        trainer = KGETrainer(toy_config(), load_dataset(toy_dataset_dir))
        with patch('kge_lab.trainer.loss_and_grad', return_value=(float('nan'), ScoreGradient())):
            with pytest.raises(NumericalAbort) as excinfo:
                trainer.run()
        assert excinfo.value.step == 0
        assert excinfo.value.batch_seed == trainer.batch_seed(0)
        assert excinfo.value.exit_code == 3

    def test_unused_relation_never_moves(self):
        triples = np.array([[0, 0, 1], [1, 0, 2], [2, 1, 3], [3, 1, 0]])
        vocab = Vocab(entities=list('abcd'), relations=['r0', 'r1', 'unused'])
        dataset = KGDataset(vocab, TripleSet(triples), TripleSet(triples[:1], 'valid'), TripleSet(triples[1:2], 'test'))
        trainer = KGETrainer(toy_config(max_steps=40, eval_every=0), dataset)
        before = trainer.params.tables['relation'][2].copy()
        trainer.run()
        np.testing.assert_array_equal(trainer.params.tables['relation'][2], before)
        assert not trainer.state.m['relation'][2].any()

    def test_subsampled_sans_run(self, toy_dataset_dir):
        config = toy_config(max_steps=60, model='hake',
                            loss=LossSpec(family='sans', gamma=6.0, nu=4, alpha=0.5, subsampling='freq'))
        _, log = train(config, load_dataset(toy_dataset_dir))
        assert all(np.isfinite(r['loss']) for r in log if r['split'] == 'train')

    def test_empty_training_split(self):
        vocab = Vocab(entities=['a'], relations=['r'])
        empty = TripleSet(np.zeros((0, 3)))
        with pytest.raises(DataError):
            KGETrainer(toy_config(), KGDataset(vocab, empty, empty, empty))


class TestTabularTraining:
    """Adam on a free score table"""

    def setup_method(self):
        self.instance = random_instance(3, 5, seed=2, uniform_noise=True)

    def test_exact_mode_reaches_objective(self):
        spec = LossSpec(family='ns-kge', gamma=1.0, nu=1)
        model, losses = train_tabular(self.instance, spec, steps=3000, lr=0.05,
                                      lr_schedule='halve', halve_fraction=0.1)
        assert l1_distance(model.distribution(), objective_distribution(self.instance)) < 1e-3
        assert losses[-1] < losses[0]

    @pytest.mark.parametrize('family', ['ns-original', 'ns-kge', 'sans'])
    def test_sampled_mode_lowers_loss(self, family):
        spec = LossSpec(family=family, gamma=0.0, nu=4)
        _, losses = train_tabular(self.instance, spec, steps=500, lr=0.05, mode='sampled', seed=1)
        assert losses[-50:].mean() < losses[:50].mean()
        curve = smoothed(losses)
        assert curve[-1] < curve[0]

    def test_nonpositive_constraint_holds(self):
        spec = LossSpec(family='ns-kge', gamma=0.0, nu=2)
        model, _ = train_tabular(self.instance, spec, steps=200, mode='sampled', constraint='nonpositive')
        assert np.all(model.scores <= 0)

    def test_same_seed_same_scores(self):
        spec = LossSpec(family='sans', gamma=1.0, nu=3)
        a, _ = train_tabular(self.instance, spec, steps=100, mode='sampled', seed=4)
        b, _ = train_tabular(self.instance, spec, steps=100, mode='sampled', seed=4)
        np.testing.assert_array_equal(a.scores, b.scores)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            train_tabular(self.instance, LossSpec(), mode='online')

    def test_smoothing(self):
        np.testing.assert_allclose(smoothed([2.0, 2.0, 2.0]), 2.0)
        assert smoothed([]).size == 0
