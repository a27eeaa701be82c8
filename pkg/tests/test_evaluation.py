import math

import numpy as np
import pytest

from kge_lab.data_loader import Direction, Query, TripleSet, build_filter_index, make_queries
from kge_lab.evaluation import (
    compute_ranks,
    evaluate,
    expected_random_mrr,
    rank_answer,
    rank_from_scores,
    report_from_ranks,
)
from kge_lab.scoring import ModelParams, init_params, score


def brute_force_rank(params, query, known):
    """Sort every surviving candidate and average the answer's tied positions."""
    target = score(params, query, query.answer)
    candidates = [c for c in range(params.num_entities) if c == query.answer or c not in known]
    ordered = sorted((score(params, query, c) for c in candidates), reverse=True)
    positions = [i + 1 for i, s in enumerate(ordered) if s == target]
    return math.floor(sum(positions) / len(positions) + 0.5)


def toy_split(rng, size, num_entities=20, num_relations=3):
    seen = set()
    while len(seen) < size:
        seen.add((int(rng.integers(num_entities)), int(rng.integers(num_relations)), int(rng.integers(num_entities))))
    return TripleSet(np.array(sorted(seen)))


class TestRankFromScores:
    """Test cases for the tie rule"""

    def test_unique_maximum(self):
        assert rank_from_scores(np.array([0.1, 2.0, -1.0]), answer=1) == 1

    def test_third_place(self):
        assert rank_from_scores(np.array([5.0, 4.0, 3.0, 2.0, 1.0]), answer=2) == 3

    @pytest.mark.parametrize('num_entities, expected', [(5, 3), (4, 3), (1, 1), (2, 2)])
    def test_all_equal(self, num_entities, expected):
        assert rank_from_scores(np.zeros(num_entities), answer=0) == expected

    def test_excluded_candidates_do_not_count(self):
        scores = np.array([5.0, 4.0, 3.0, 2.0])
        assert rank_from_scores(scores, answer=2, excluded=[0, 2]) == 2

    def test_strictly_increasing_transform(self):
        scores = np.random.default_rng(0).normal(size=30).round(1)
        for answer in range(30):
            assert rank_from_scores(scores, answer) == rank_from_scores(np.exp(3 * scores) - 7, answer)


class TestEvaluate:
    """Filtered ranking against an exhaustive oracle"""

    def setup_method(self):
        rng = np.random.default_rng(4)
        self.train = toy_split(rng, 40)
        self.valid = toy_split(rng, 10)
        self.test = toy_split(rng, 12)
        self.index = build_filter_index(self.train, self.valid, self.test)
        # small integer embeddings produce plenty of exact ties
        self.params = ModelParams('distmult', 3, {
            'entity': rng.integers(-1, 2, size=(20, 3)).astype(float),
            'relation': np.ones((3, 3)),
        })

    def test_matches_brute_force(self):
        queries = make_queries(self.test)
        ranks = compute_ranks(self.params, queries, self.index)
        for i, query in enumerate(queries):
            assert ranks[i] == brute_force_rank(self.params, query, self.index.for_query(query))
        report = evaluate(self.params, queries, self.index)
        assert report.mrr == pytest.approx(np.mean(1.0 / ranks))
        assert report.hits10 == pytest.approx(np.mean(ranks <= 10))

    def test_single_query_agrees_with_batch(self):
        queries = make_queries(self.test)
        ranks = compute_ranks(self.params, queries, self.index, chunk_cells=7)
        assert [rank_answer(self.params, q, self.index) for q in queries] == ranks.tolist()

    def test_filtered_never_worse_than_raw(self):
        queries = make_queries(self.test)
        filtered = compute_ranks(self.params, queries, self.index)
        raw = compute_ranks(self.params, queries, None)
        assert np.all(filtered <= raw)
        assert not evaluate(self.params, queries).filtered

    def test_order_independent(self):
        queries = make_queries(self.valid)
        perm = np.random.default_rng(1).permutation(len(queries))
        a = evaluate(self.params, queries, self.index)
        b = evaluate(self.params, queries.take(perm), self.index)
        assert a.mrr == pytest.approx(b.mrr, rel=1e-12)
        assert (a.hits1, a.hits3, a.hits10) == (b.hits1, b.hits3, b.hits10)

    def test_random_model_runs_on_all_models(self):
        queries = make_queries(self.test)
        for model in ('rescal', 'complex', 'transe', 'rotate', 'hake'):
            report = evaluate(init_params(model, 20, 3, 4, seed=0), queries, self.index, keep_ranks=True)
            assert len(report.ranks) == len(queries)
            assert report.hits1 <= report.hits3 <= report.hits10


class TestReport:
    """Test cases for metric aggregation"""

    def test_two_queries(self):
        report = report_from_ranks(np.array([1, 4]))
        assert report.mrr == pytest.approx(0.625)
        assert (report.hits1, report.hits3, report.hits10) == (0.5, 0.5, 1.0)

    def test_all_first(self):
        report = report_from_ranks(np.ones(7))
        assert (report.mrr, report.hits1, report.hits3, report.hits10) == (1.0, 1.0, 1.0, 1.0)

    def test_empty_query_set(self):
        with pytest.raises(ValueError):
            report_from_ranks(np.array([]))

    def test_tsv_row(self):
        report = report_from_ranks(np.array([1, 4]))
        assert report.to_tsv_row() == '62.50\t50.00\t50.00\t100.00'
        assert report.to_tsv_row(header=True).splitlines()[0] == 'MRR\tHits@1\tHits@3\tHits@10'

    def test_expected_random_mrr(self):
        assert expected_random_mrr(1) == 1.0
        assert expected_random_mrr(2) == pytest.approx(0.75)
        assert expected_random_mrr(4) == pytest.approx((1 + 1 / 2 + 1 / 3 + 1 / 4) / 4)

    def test_query_helper(self):
        params = ModelParams('distmult', 1, {'entity': np.array([[1.0], [2.0], [3.0]]), 'relation': np.ones((1, 1))})
        assert rank_answer(params, Query(Direction.HEAD, 0, 0, 1)) == 2
