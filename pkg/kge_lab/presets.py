"""
Named hyperparameter presets, `<dataset>-<model>`

Batch size, dimension, SANS temperature and max steps per model and
benchmark, together with the negative count, margin and learning rate
used for the self-adversarial runs. YAGO3-10 is covered for TransE,
RotatE and HAKE only.
"""

import os
from typing import Dict

from . import settings
from .exceptions import UsageError
from .models import LossSpec, TrainConfig

#            batch, dim, alpha, steps, nu, gamma, lr
_TABLE = {
    'fb15k237': {
        'rescal': (1024, 500, 1.0, 100000, 256, 200.0, 0.001),
        'complex': (1024, 1000, 1.0, 100000, 256, 200.0, 0.001),
        'distmult': (1024, 2000, 1.0, 100000, 256, 200.0, 0.001),
        'transe': (1024, 1000, 1.0, 100000, 256, 9.0, 0.00005),
        'rotate': (1024, 1000, 1.0, 100000, 256, 9.0, 0.00005),
        'hake': (1024, 1000, 1.0, 100000, 256, 9.0, 0.00005),
    },
    'wn18rr': {
        'rescal': (512, 500, 1.0, 80000, 1024, 200.0, 0.002),
        'complex': (512, 500, 1.0, 80000, 1024, 200.0, 0.002),
        'distmult': (512, 1000, 1.0, 80000, 1024, 200.0, 0.002),
        'transe': (512, 500, 0.5, 80000, 1024, 6.0, 0.00005),
        'rotate': (512, 500, 0.5, 80000, 1024, 6.0, 0.00005),
        'hake': (512, 500, 0.5, 80000, 1024, 6.0, 0.00005),
    },
    'yago310': {
        'transe': (1024, 500, 1.0, 200000, 400, 24.0, 0.0002),
        'rotate': (1024, 500, 1.0, 200000, 400, 24.0, 0.0002),
        'hake': (1024, 500, 1.0, 200000, 500, 24.0, 0.0002),
    },
}


def _build() -> Dict[str, TrainConfig]:
    presets = {}
    for dataset, models in _TABLE.items():
        for model, (batch, dim, alpha, steps, nu, gamma, lr) in models.items():
            name = f"{dataset}-{model}"
            presets[name] = TrainConfig(
                model=model,
                dim=dim,
                batch_size=batch,
                max_steps=steps,
                learning_rate=lr,
                eval_every=10000,
                loss=LossSpec(family='sans', gamma=gamma, nu=nu, alpha=alpha, subsampling='base'),
                dataset_path=os.path.join(settings.DATA_DIR, settings.DATASET_DIRS[dataset]),
                preset=name,
            )
    return presets


PRESETS = _build()


def get_preset(name: str) -> TrainConfig:
    try:
        return PRESETS[name].model_copy(deep=True)
    except KeyError:
        raise UsageError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from None
