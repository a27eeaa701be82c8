"""
Filtered link-prediction evaluation

rank = 1 + #(strictly higher) + ceil(#(ties other than the answer) / 2),
counting only candidates that are not other known answers of the query.
"""

import json
import logging
from typing import Optional

import numpy as np

from . import settings
from .data_loader import Direction, FilterIndex, Query, QuerySet
from .models import EvalReport
from .scoring import ModelParams, score_all_entities

logger = logging.getLogger(__name__)

HITS_AT = (1, 3, 10)


def rank_from_scores(scores: np.ndarray, answer: int, excluded=()) -> int:
    """Rank of `answer` within one row of candidate scores."""
    target = scores[answer]
    keep = np.ones(len(scores), dtype=bool)
    keep[list(excluded)] = False
    keep[answer] = False
    higher = int(np.count_nonzero((scores > target) & keep))
    ties = int(np.count_nonzero((scores == target) & keep))
    return 1 + higher + (ties + 1) // 2


def rank_answer(params: ModelParams, query: Query, filter_index: Optional[FilterIndex] = None) -> int:
    """Filtered rank of the query's answer among all entities (raw when no index)."""
    scores = score_all_entities(params, query.direction, np.array([query.anchor]), np.array([query.relation]))[0]
    excluded = filter_index.for_query(query) if filter_index is not None else ()
    return rank_from_scores(scores, query.answer, excluded)


def compute_ranks(params: ModelParams, queries: QuerySet, filter_index: Optional[FilterIndex] = None,
                  chunk_cells: Optional[int] = None) -> np.ndarray:
    """Ranks of every query, in query-set order."""
    chunk_cells = chunk_cells or settings.EVAL_CHUNK
    num_entities = params.num_entities
    rows_per_chunk = max(1, chunk_cells // max(1, num_entities * params.scoring.entity_width))
    ranks = np.empty(len(queries), dtype=np.int64)

    for direction in (Direction.TAIL, Direction.HEAD):
        group = np.flatnonzero(queries.direction == direction)
        for start in range(0, len(group), rows_per_chunk):
            rows = group[start:start + rows_per_chunk]
            scores = score_all_entities(params, direction, queries.anchor[rows], queries.relation[rows])
            answers = queries.answer[rows]
            target = scores[np.arange(len(rows)), answers][:, None]
            keep = np.ones(scores.shape, dtype=bool)
            keep[np.arange(len(rows)), answers] = False
            if filter_index is not None:
                for i, row in enumerate(rows):
                    known = filter_index.answers(direction, queries.anchor[row], queries.relation[row])
                    if known:
                        keep[i, list(known)] = False
                        keep[i, answers[i]] = False
            higher = np.count_nonzero((scores > target) & keep, axis=1)
            ties = np.count_nonzero((scores == target) & keep, axis=1)
            ranks[rows] = 1 + higher + (ties + 1) // 2
    return ranks


def report_from_ranks(ranks: np.ndarray, split: Optional[str] = None, filtered: bool = True,
                      keep_ranks: bool = False) -> EvalReport:
    ranks = np.asarray(ranks, dtype=np.float64)
    if len(ranks) == 0:
        raise ValueError("cannot evaluate an empty query set")
    hits = {k: float(np.mean(ranks <= k)) for k in HITS_AT}
    return EvalReport(
        mrr=float(np.mean(1.0 / ranks)),
        hits1=hits[1],
        hits3=hits[3],
        hits10=hits[10],
        num_queries=len(ranks),
        split=split,
        filtered=filtered,
        ranks=[int(r) for r in ranks] if keep_ranks else None,
    )


def evaluate(params: ModelParams, queries: QuerySet, filter_index: Optional[FilterIndex] = None,
             split: Optional[str] = None, keep_ranks: bool = False) -> EvalReport:
    """
    MRR and Hits@1/3/10 over all (head and tail) queries

    Args:
        params: Model parameters
        queries: Queries to rank, typically make_queries(split)
        filter_index: Known answers to remove; None gives raw metrics
        split: Label stored on the report
        keep_ranks: Attach the per-query rank vector

    Returns:
        EvalReport
    """
    ranks = compute_ranks(params, queries, filter_index)
    report = report_from_ranks(ranks, split=split, filtered=filter_index is not None, keep_ranks=keep_ranks)
    logger.info(f"Evaluation on {split or 'queries'}: MRR={report.mrr:.4f} Hits@10={report.hits10:.4f} "
                f"({report.num_queries} queries)")
    return report


def expected_random_mrr(num_candidates: int) -> float:
    """Mean of 1/rank for a rank uniform on 1..n."""
    return float(np.sum(1.0 / np.arange(1, num_candidates + 1)) / num_candidates)


def report_to_json(report: EvalReport) -> str:
    return json.dumps(report.model_dump(exclude_none=True), sort_keys=True)
