import numpy as np
import pytest
from scipy.special import log_expit, softmax

from kge_lab.data_loader import TripleSet, count_frequencies, make_queries
from kge_lab.losses import sans_weights
from kge_lab.models import LossSpec
from kge_lab.sampling import NegativeBatch, candidate_scores, loss_and_grad, sample_negatives
from kge_lab.scoring import MODEL_KINDS, init_params, score
from kge_lab.subsampling import subsample_table

TOY = np.array([[0, 0, 1], [1, 0, 2], [2, 1, 3], [3, 1, 4], [4, 0, 0], [0, 1, 2]])


def batch_weights(method, picked):
    a, b = subsample_table(method, count_frequencies(TripleSet(TOY)))
    return a[picked % 2, picked // 2], b[picked % 2, picked // 2]


def attach_sans_weights(params, batch, negatives, alpha):
    scores = candidate_scores(params, batch, negatives.entities)
    return NegativeBatch(negatives.entities, sans_weights(scores, alpha))


def max_relative_error(params, batch, negatives, spec, weights):
    _, grad = loss_and_grad(params, batch, negatives, spec, weights)
    analytic = grad.dense(params)
    h = 1e-5
    worst = 0.0
    for name, table in params.tables.items():
        for idx in np.ndindex(table.shape):
            original = table[idx]
            table[idx] = original + h
            up, _ = loss_and_grad(params, batch, negatives, spec, weights)
            table[idx] = original - h
            down, _ = loss_and_grad(params, batch, negatives, spec, weights)
            table[idx] = original
            numeric = (up - down) / (2 * h)
            worst = max(worst, abs(analytic[name][idx] - numeric) / max(1.0, abs(numeric)))
    return worst


class TestSampleNegatives:
    """Test cases for uniform negative sampling"""

    def test_range_and_shape(self):
        negatives = sample_negatives(14541, 256, np.random.default_rng(0), batch_size=3)
        assert negatives.entities.shape == (3, 256)
        assert negatives.entities.min() >= 0 and negatives.entities.max() < 14541
        assert negatives.nu == 256 and len(negatives) == 3

    def test_single_entity(self):
        negatives = sample_negatives(1, 5, np.random.default_rng(0))
        assert np.all(negatives.entities == 0)

    def test_fixed_seed_is_reproducible(self):
        a = sample_negatives(100, 8, np.random.default_rng(9), batch_size=4)
        b = sample_negatives(100, 8, np.random.default_rng(9), batch_size=4)
        np.testing.assert_array_equal(a.entities, b.entities)

    def test_invalid_nu(self):
        with pytest.raises(ValueError):
            sample_negatives(10, 0, np.random.default_rng(0))


class TestLossAndGrad:
    """Batched loss and parameter gradients"""

    def setup_method(self):
        self.queries = make_queries(TripleSet(TOY))
        self.picked = np.array([0, 3, 4, 9, 11])
        self.batch = self.queries.take(self.picked)

    @pytest.mark.parametrize('model', MODEL_KINDS)
    @pytest.mark.parametrize('family', ['ns-original', 'ns-kge', 'sans'])
    def test_matches_finite_differences(self, model, family):
        rng = np.random.default_rng(2)
        for gamma in (0.0, 6.0):
            for nu in (1, 8):
                for method in ('none', 'freq'):
                    params = init_params(model, 5, 2, 3, gamma=1.0, seed=nu)
                    spec = LossSpec(family=family, gamma=gamma, nu=nu, alpha=1.0, subsampling=method)
                    negatives = sample_negatives(5, nu, rng, len(self.batch))
                    if family == 'sans':
                        negatives = attach_sans_weights(params, self.batch, negatives, spec.alpha)
                    weights = batch_weights(method, self.picked)
                    assert max_relative_error(params, self.batch, negatives, spec, weights) < 1e-5

    def test_unit_weights_match_no_weights(self):
        params = init_params('complex', 5, 2, 4, seed=0)
        negatives = sample_negatives(5, 4, np.random.default_rng(1), len(self.batch))
        spec = LossSpec(family='ns-kge', gamma=2.0, nu=4)
        plain_loss, plain_grad = loss_and_grad(params, self.batch, negatives, spec)
        ones = (np.ones(len(self.batch)), np.ones(len(self.batch)))
        unit_loss, unit_grad = loss_and_grad(params, self.batch, negatives, spec, ones)
        assert plain_loss == unit_loss
        for name, table in plain_grad.dense(params).items():
            np.testing.assert_array_equal(table, unit_grad.dense(params)[name])

    def test_small_chunks_give_same_result(self):
        params = init_params('rotate', 5, 2, 4, seed=0)
        negatives = sample_negatives(5, 3, np.random.default_rng(1), len(self.batch))
        spec = LossSpec(family='sans', gamma=6.0, nu=3)
        loss, grad = loss_and_grad(params, self.batch, negatives, spec)
        chunked_loss, chunked = loss_and_grad(params, self.batch, negatives, spec, chunk_size=1)
        assert loss == pytest.approx(chunked_loss, rel=1e-14)
        for name, table in grad.dense(params).items():
            np.testing.assert_allclose(table, chunked.dense(params)[name], rtol=1e-12, atol=1e-15)

    @pytest.mark.parametrize('model', ['transe', 'rotate'])
    def test_sans_over_every_entity_matches_closed_form(self, model):
        params = init_params(model, 5, 2, 4, gamma=6.0, seed=1)
        batch = self.queries.take(np.array([0]))
        query = batch[0]
        spec = LossSpec(family='sans', gamma=6.0, nu=5, alpha=1.0)
        negatives = NegativeBatch(np.arange(5)[None, :])

        s_pos = score(params, query, query.answer)
        s_all = np.array([score(params, query, e) for e in range(5)])
        expected = -log_expit(s_pos + 6.0) - np.sum(softmax(s_all) * log_expit(-s_all - 6.0))

        loss, _ = loss_and_grad(params, batch, negatives, spec)
        assert loss == pytest.approx(expected, rel=1e-12)
        frozen = attach_sans_weights(params, batch, negatives, spec.alpha)
        assert loss_and_grad(params, batch, frozen, spec)[0] == pytest.approx(expected, rel=1e-12)

    def test_sans_weights_sum_to_one(self):
        params = init_params('transe', 5, 2, 4, seed=0)
        negatives = sample_negatives(5, 6, np.random.default_rng(1), len(self.batch))
        weighted = attach_sans_weights(params, self.batch, negatives, alpha=0.5)
        assert np.all(weighted.weights >= 0)
        np.testing.assert_allclose(weighted.weights.sum(axis=1), 1.0)

    def test_row_count_mismatch(self):
        params = init_params('distmult', 5, 2, 4, seed=0)
        with pytest.raises(ValueError):
            loss_and_grad(params, self.batch, NegativeBatch(np.zeros((2, 3))), LossSpec(nu=3))
