"""
Data loader module for kge_lab
Reads triple files, builds vocabularies, derives directional queries and
the frequency statistics used by subsampling and filtered evaluation
"""

import logging
import os
from collections import defaultdict
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, FrozenSet, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .exceptions import DataError, DuplicateTripleError, TripleParseError, VocabularyError

logger = logging.getLogger(__name__)

SPLITS = ('train', 'valid', 'test')


class Direction(IntEnum):
    """Which side of the triple a query masks."""

    TAIL = 0  # (e_i, r_k, ?)
    HEAD = 1  # (?, r_k, e_j)

    @property
    def label(self) -> str:
        return 'tail-prediction' if self is Direction.TAIL else 'head-prediction'


@dataclass
class Vocab:
    """Bidirectional symbol <-> id maps for entities and relations."""

    entities: List[str] = field(default_factory=list)
    relations: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.entity_index = {name: i for i, name in enumerate(self.entities)}
        self.relation_index = {name: i for i, name in enumerate(self.relations)}

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def encode(self, head: str, relation: str, tail: str) -> Tuple[int, int, int]:
        try:
            return self.entity_index[head], self.relation_index[relation], self.entity_index[tail]
        except KeyError as e:
            raise VocabularyError(f"unknown symbol {e.args[0]!r}") from None

    def decode(self, triple: Sequence[int]) -> Tuple[str, str, str]:
        head, relation, tail = (int(v) for v in triple)
        return self.entities[head], self.relations[relation], self.entities[tail]

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> 'Vocab':
        """Build a vocabulary in first-appearance order (row by row, head before tail)."""
        interleaved = df[['head', 'tail']].to_numpy().ravel()
        _, entities = pd.factorize(interleaved, sort=False)
        _, relations = pd.factorize(df['relation'].to_numpy(), sort=False)
        return cls(entities=list(entities), relations=list(relations))

    @classmethod
    def from_dict_files(cls, entities_path: str, relations_path: str) -> 'Vocab':
        """Read `<id>\\t<name>` dictionaries as shipped with the public benchmarks."""
        return cls(
            entities=_read_dict_file(entities_path),
            relations=_read_dict_file(relations_path),
        )


def _numbered_lines(path: str) -> Iterator[Tuple[int, str]]:
    """Non-blank lines of a UTF-8 text file with their 1-based numbers."""
    with open(path, 'rb') as f:
        for line_number, raw in enumerate(f, start=1):
            try:
                line = raw.decode('utf-8').rstrip('\r\n')
            except UnicodeDecodeError as e:
                raise TripleParseError(path, line_number, f"invalid UTF-8 at byte {e.start}") from e
            if line:
                yield line_number, line


def _read_dict_file(path: str) -> List[str]:
    names = []
    for line_number, line in _numbered_lines(path):
        fields = line.split('\t')
        if len(fields) != 2:
            raise TripleParseError(path, line_number, f"expected 2 fields, found {len(fields)}")
        if not fields[0].isdecimal() or int(fields[0]) != len(names):
            raise TripleParseError(path, line_number, f"ids must be consecutive from 0, found {fields[0]}")
        names.append(fields[1])
    return names


@dataclass
class TripleSet:
    """Integer-encoded (head, relation, tail) triples of one split."""

    triples: np.ndarray
    name: str = 'train'

    def __post_init__(self):
        self.triples = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)

    def __len__(self) -> int:
        return len(self.triples)

    def __iter__(self) -> Iterator[Tuple[int, int, int]]:
        for head, relation, tail in self.triples:
            yield int(head), int(relation), int(tail)

    @property
    def heads(self) -> np.ndarray:
        return self.triples[:, 0]

    @property
    def relations(self) -> np.ndarray:
        return self.triples[:, 1]

    @property
    def tails(self) -> np.ndarray:
        return self.triples[:, 2]


@dataclass(frozen=True)
class Query:
    direction: Direction
    anchor: int
    relation: int
    answer: int


@dataclass
class QuerySet:
    """Struct-of-arrays view over directional queries."""

    direction: np.ndarray
    anchor: np.ndarray
    relation: np.ndarray
    answer: np.ndarray

    def __len__(self) -> int:
        return len(self.direction)

    def __getitem__(self, index: int) -> Query:
        return Query(
            Direction(int(self.direction[index])),
            int(self.anchor[index]),
            int(self.relation[index]),
            int(self.answer[index]),
        )

    def __iter__(self) -> Iterator[Query]:
        for i in range(len(self)):
            yield self[i]

    def take(self, index: np.ndarray) -> 'QuerySet':
        return QuerySet(self.direction[index], self.anchor[index], self.relation[index], self.answer[index])


class FrequencyTable:
    """Training-split counts #(e_i, r_k) and #(r_k, e_j).

    Also keeps, per training triple, the backoff pair frequency
    #(x, y) ~ #(e_i, r_k) + #(r_k, e_j) and the query frequency #x for each
    direction, with the normalizer sums every subsampling method needs.
    """

    def __init__(self, train: TripleSet):
        if len(train) == 0:
            raise DataError("cannot count frequencies of an empty training split")
        self.triples = train.triples
        df = pd.DataFrame(train.triples, columns=['head', 'relation', 'tail'])

        head_rel = df.groupby(['head', 'relation']).size()
        rel_tail = df.groupby(['relation', 'tail']).size()
        self.count_head_rel: Dict[Tuple[int, int], int] = {
            (int(h), int(r)): int(c) for (h, r), c in head_rel.items()
        }
        self.count_rel_tail: Dict[Tuple[int, int], int] = {
            (int(r), int(t)): int(c) for (r, t), c in rel_tail.items()
        }

        self.head_rel = df.groupby(['head', 'relation'])['tail'].transform('size').to_numpy(np.int64)
        self.rel_tail = df.groupby(['relation', 'tail'])['head'].transform('size').to_numpy(np.int64)
        self.pair_freq = self.head_rel + self.rel_tail

        # normalizers: sum over D of 1/sqrt(#(x,y)) and of 1/sqrt(#x) per direction
        self.pair_norm = float(np.sum(1.0 / np.sqrt(self.pair_freq)))
        self.query_norm = {
            Direction.TAIL: float(np.sum(1.0 / np.sqrt(self.head_rel))),
            Direction.HEAD: float(np.sum(1.0 / np.sqrt(self.rel_tail))),
        }

    def __len__(self) -> int:
        return len(self.triples)

    def query_counts(self, direction: Direction) -> np.ndarray:
        """#x for every training triple seen as a `direction` query."""
        return self.head_rel if direction is Direction.TAIL else self.rel_tail

    def pair_frequency(self, triple: Sequence[int]) -> int:
        head, relation, tail = (int(v) for v in triple)
        return self.count_head_rel.get((head, relation), 0) + self.count_rel_tail.get((relation, tail), 0)

    def query_frequency(self, triple: Sequence[int], direction: Direction = Direction.TAIL) -> int:
        head, relation, tail = (int(v) for v in triple)
        if direction is Direction.TAIL:
            return self.count_head_rel.get((head, relation), 0)
        return self.count_rel_tail.get((relation, tail), 0)

    def to_frame(self, vocab: Optional[Vocab] = None) -> pd.DataFrame:
        df = pd.DataFrame(self.triples, columns=['head', 'rel', 'tail'])
        if vocab is not None:
            df['head'] = [vocab.entities[i] for i in df['head']]
            df['rel'] = [vocab.relations[i] for i in df['rel']]
            df['tail'] = [vocab.entities[i] for i in df['tail']]
        df['pair_freq'] = self.pair_freq
        return df


class FilterIndex:
    """(direction, anchor, relation) -> every known answer across all splits."""

    def __init__(self, answers: Dict[Tuple[int, int, int], FrozenSet[int]]):
        self._answers = answers

    def __len__(self) -> int:
        return len(self._answers)

    def answers(self, direction: Direction, anchor: int, relation: int) -> FrozenSet[int]:
        return self._answers.get((int(direction), int(anchor), int(relation)), frozenset())

    def for_query(self, query: Query) -> FrozenSet[int]:
        return self.answers(query.direction, query.anchor, query.relation)


@dataclass
class KGDataset:
    """The three splits of a benchmark plus their shared vocabulary."""

    vocab: Vocab
    train: TripleSet
    valid: TripleSet
    test: TripleSet
    path: Optional[str] = None

    @property
    def num_entities(self) -> int:
        return self.vocab.num_entities

    @property
    def num_relations(self) -> int:
        return self.vocab.num_relations

    def split(self, name: str) -> TripleSet:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}; expected one of {SPLITS}")
        return getattr(self, name)

    def get_data_summary(self) -> dict:
        return {
            'entities': self.num_entities,
            'relations': self.num_relations,
            'train': len(self.train),
            'valid': len(self.valid),
            'test': len(self.test),
        }


def _read_triple_frame(path: str) -> pd.DataFrame:
    rows = []
    line_numbers = []
    for line_number, line in _numbered_lines(path):
        fields = line.split('\t')
        if len(fields) != 3:
            raise TripleParseError(path, line_number, f"expected 3 tab-separated fields, found {len(fields)}")
        rows.append(fields)
        line_numbers.append(line_number)
    df = pd.DataFrame(rows, columns=['head', 'relation', 'tail'], dtype=str)
    df['line'] = line_numbers
    return df


def load_triples(path: str, vocab: Optional[Vocab] = None, name: Optional[str] = None) -> Tuple[TripleSet, Vocab]:
    """
    Read a `head<TAB>relation<TAB>tail` file

    Args:
        path: Triple file (UTF-8)
        vocab: Fixed vocabulary; when given, unknown symbols are an error.
            When omitted the vocabulary is built from this file.
        name: Split name attached to the returned TripleSet

    Returns:
        Tuple of (TripleSet, Vocab)
    """
    df = _read_triple_frame(path)
    split_name = name or os.path.splitext(os.path.basename(path))[0]

    duplicated = df.duplicated(subset=['head', 'relation', 'tail'])
    if duplicated.any():
        first = df[duplicated].iloc[0]
        raise DuplicateTripleError(path, int(first['line']), (first['head'], first['relation'], first['tail']))

    if vocab is None:
        vocab = Vocab.from_frame(df)

    heads = df['head'].map(vocab.entity_index)
    relations = df['relation'].map(vocab.relation_index)
    tails = df['tail'].map(vocab.entity_index)
    for column, codes in (('head', heads), ('relation', relations), ('tail', tails)):
        missing = codes.isna()
        if missing.any():
            row = df[missing].iloc[0]
            raise VocabularyError(f"{path}:{int(row['line'])}: unknown {column} {row[column]!r}")

    triples = np.column_stack([heads.to_numpy(np.int64), relations.to_numpy(np.int64), tails.to_numpy(np.int64)])
    logger.info(f"Loaded {len(triples)} triples from {path}")
    return TripleSet(triples, name=split_name), vocab


def load_dataset(directory: str) -> KGDataset:
    """Load `train.txt`, `valid.txt` and `test.txt` from a dataset directory."""
    paths = {split: os.path.join(directory, f"{split}.txt") for split in SPLITS}
    missing = [p for p in paths.values() if not os.path.isfile(p)]
    if missing:
        raise DataError(f"missing dataset files: {', '.join(missing)}")

    entities_path = os.path.join(directory, 'entities.dict')
    relations_path = os.path.join(directory, 'relations.dict')
    vocab = None
    if os.path.isfile(entities_path) and os.path.isfile(relations_path):
        vocab = Vocab.from_dict_files(entities_path, relations_path)
        logger.info(f"Using dictionary vocabulary: {vocab.num_entities} entities, {vocab.num_relations} relations")

    train, vocab = load_triples(paths['train'], vocab, name='train')
    valid, _ = load_triples(paths['valid'], vocab, name='valid')
    test, _ = load_triples(paths['test'], vocab, name='test')
    for split in (valid, test):
        if len(split) == 0:
            logger.warning(f"Split {split.name!r} in {directory} is empty")

    dataset = KGDataset(vocab=vocab, train=train, valid=valid, test=test, path=directory)
    logger.info(f"Dataset summary: {dataset.get_data_summary()}")
    return dataset


def count_frequencies(train: TripleSet) -> FrequencyTable:
    return FrequencyTable(train)


def make_queries(triples: TripleSet) -> QuerySet:
    """Two queries per triple, tail-prediction first, triple order preserved."""
    n = len(triples)
    direction = np.tile(np.array([Direction.TAIL, Direction.HEAD], dtype=np.int64), n)
    anchor = np.empty(2 * n, dtype=np.int64)
    answer = np.empty(2 * n, dtype=np.int64)
    anchor[0::2], answer[0::2] = triples.heads, triples.tails
    anchor[1::2], answer[1::2] = triples.tails, triples.heads
    relation = np.repeat(triples.relations, 2)
    return QuerySet(direction, anchor, relation, answer)


def build_filter_index(train: TripleSet, valid: TripleSet, test: TripleSet) -> FilterIndex:
    answers = defaultdict(set)
    for split in (train, valid, test):
        for head, relation, tail in split:
            answers[(int(Direction.TAIL), head, relation)].add(tail)
            answers[(int(Direction.HEAD), tail, relation)].add(head)
    return FilterIndex({key: frozenset(values) for key, values in answers.items()})
