import numpy as np
import pytest

from kge_lab.optim import AdamState, adam_step, dense_adam_step
from kge_lab.scoring import ScoreGradient, init_params


def reference_adam(grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Scalar Adam written out longhand."""
    theta, m, v = 0.0, 0.0, 0.0
    trace = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        theta -= lr * (m / (1 - beta1 ** t)) / (np.sqrt(v / (1 - beta2 ** t)) + eps)
        trace.append(theta)
    return trace


class TestAdamStep:
    """Test cases for the row-sparse Adam update"""

    def setup_method(self):
        self.params = init_params('distmult', 6, 2, 3, seed=0)
        self.state = AdamState.zeros_like(self.params.tables)

    def test_first_step_moves_by_learning_rate(self):
        tables = {'w': np.zeros((1, 1))}
        state = AdamState.zeros_like(tables)
        dense_adam_step(tables, {'w': np.ones((1, 1))}, state, lr=0.1)
        assert tables['w'][0, 0] == pytest.approx(-0.1, rel=1e-6)

    def test_matches_scalar_trace(self):
        grads = [1.0, -0.5, 2.0, 0.25, 0.0, 3.0]
        tables = {'w': np.zeros((1, 1))}
        state = AdamState.zeros_like(tables)
        trace = []
        for g in grads:
            dense_adam_step(tables, {'w': np.full((1, 1), g)}, state, lr=0.05)
            trace.append(tables['w'][0, 0])
        np.testing.assert_allclose(trace, reference_adam(grads, 0.05), rtol=1e-12)

    def test_zero_gradient_leaves_everything_unchanged(self):
        before = self.params.copy()
        grad = ScoreGradient()
        grad.add('entity', [2], np.zeros((1, 3)))
        adam_step(self.params, grad, self.state, lr=0.1)
        np.testing.assert_array_equal(self.params.tables['entity'], before.tables['entity'])
        assert not self.state.m['entity'].any() and not self.state.v['entity'].any()
        assert self.state.step == 1

    def test_untouched_rows_keep_values_and_moments(self):
        before = self.params.copy()
        grad = ScoreGradient()
        grad.add('entity', [1, 4, 1], np.ones((3, 3)))
        adam_step(self.params, grad, self.state, lr=0.1)
        changed = np.flatnonzero((self.params.tables['entity'] != before.tables['entity']).any(axis=1))
        np.testing.assert_array_equal(changed, [1, 4])
        assert not self.state.m['entity'][[0, 2, 3, 5]].any()
        np.testing.assert_array_equal(self.params.tables['relation'], before.tables['relation'])

    def test_sparse_matches_dense_on_touched_rows(self):
        tables = {name: t.copy() for name, t in self.params.tables.items()}
        dense_state = AdamState.zeros_like(tables)
        grad = ScoreGradient()
        block = np.random.default_rng(0).normal(size=(6, 3))
        grad.add('entity', np.arange(6), block)
        adam_step(self.params, grad, self.state, lr=0.01)
        dense_adam_step(tables, {'entity': block}, dense_state, lr=0.01)
        np.testing.assert_allclose(self.params.tables['entity'], tables['entity'], rtol=1e-14)

    def test_shape_mismatch(self):
        grad = ScoreGradient()
        grad.add('entity', [0], np.ones((1, 5)))
        with pytest.raises(ValueError):
            adam_step(self.params, grad, self.state, lr=0.1)

    def test_unknown_table(self):
        grad = ScoreGradient()
        grad.add('lambda', [0], np.ones((1, 1)))
        with pytest.raises(ValueError):
            adam_step(self.params, grad, self.state, lr=0.1)
