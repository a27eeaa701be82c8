import os

import pytest


def write_split(directory, name, rows):
    with open(os.path.join(directory, f"{name}.txt"), 'w', encoding='utf-8') as f:
        for row in rows:
            f.write('\t'.join(row) + '\n')


@pytest.fixture
def make_dataset(tmp_path):
    """Write train/valid/test files under tmp_path and return the directory."""
    def _make(train, valid=(), test=(), name='toy'):
        directory = tmp_path / name
        directory.mkdir()
        write_split(directory, 'train', train)
        write_split(directory, 'valid', valid)
        write_split(directory, 'test', test)
        return str(directory)
    return _make


TOY_TRAIN = [
    ('a', 'likes', 'b'),
    ('b', 'likes', 'c'),
    ('c', 'likes', 'd'),
    ('d', 'likes', 'e'),
    ('a', 'knows', 'c'),
    ('b', 'knows', 'd'),
    ('c', 'knows', 'e'),
    ('e', 'likes', 'a'),
]
TOY_VALID = [('d', 'knows', 'a')]
TOY_TEST = [('e', 'knows', 'b'), ('a', 'likes', 'd')]


@pytest.fixture
def toy_dataset_dir(make_dataset):
    """Five entities, two relations."""
    return make_dataset(TOY_TRAIN, TOY_VALID, TOY_TEST)
