"""
Checkpoint files

Layout: 8-byte little-endian header length, UTF-8 JSON header, then every
table as 64-bit little-endian reals in header order.
"""

import json
import logging
import os
import struct
import tempfile
from typing import Optional

import numpy as np

from .exceptions import DataError, VocabularyError
from .scoring import ModelParams

logger = logging.getLogger(__name__)

_LENGTH = struct.Struct('<Q')


def save_checkpoint(params: ModelParams, path: str) -> None:
    """Write atomically: temp file in the target directory, then rename."""
    header = {
        'model': params.model,
        'dim': params.dim,
        'p': params.p,
        'num_entities': params.num_entities,
        'num_relations': params.num_relations,
        'seed': params.seed,
        'tables': [[name, list(table.shape)] for name, table in params.tables.items()],
    }
    encoded = json.dumps(header, sort_keys=True).encode('utf-8')
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix='.ckpt-', dir=directory)
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(_LENGTH.pack(len(encoded)))
            f.write(encoded)
            for table in params.tables.values():
                f.write(np.ascontiguousarray(table, dtype='<f8').tobytes())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    logger.info(f"Checkpoint written to {path}")


def load_checkpoint(path: str, num_entities: Optional[int] = None,
                    num_relations: Optional[int] = None) -> ModelParams:
    """Read a checkpoint, optionally checking it against a dataset vocabulary."""
    with open(path, 'rb') as f:
        try:
            (length,) = _LENGTH.unpack(f.read(_LENGTH.size))
            header = json.loads(f.read(length).decode('utf-8'))
        except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DataError(f"{path}: unreadable checkpoint header ({e})") from e
        body = f.read()
    if len(body) % 8:
        raise DataError(f"{path}: truncated checkpoint ({len(body)} body bytes)")

    if num_entities is not None and header['num_entities'] != num_entities:
        raise VocabularyError(
            f"checkpoint has {header['num_entities']} entities but the dataset has {num_entities}"
        )
    if num_relations is not None and header['num_relations'] != num_relations:
        raise VocabularyError(
            f"checkpoint has {header['num_relations']} relations but the dataset has {num_relations}"
        )

    values = np.frombuffer(body, dtype='<f8')
    tables = {}
    offset = 0
    for name, shape in header['tables']:
        size = int(np.prod(shape))
        if offset + size > len(values):
            raise DataError(f"{path}: truncated checkpoint (table {name!r})")
        tables[name] = values[offset:offset + size].reshape(shape).astype(np.float64)
        offset += size
    if offset != len(values):
        raise DataError(f"{path}: {len(values) - offset} trailing values after the last table")
    return ModelParams(header['model'], header['dim'], tables, header['p'], header['seed'])
