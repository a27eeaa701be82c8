# Settings for the kge_lab project
#
# Values are read from the environment (or a .env file) through
# python-decouple, so a run can be tuned without touching the code:
#
#     KGE_LAB_LOG_LEVEL=DEBUG python -m kge_lab theory prop1

from decouple import config

PROJECT_NAME = 'kge_lab'
VERSION = '0.3.0'

# Logging configuration
LOG_LEVEL = config('KGE_LAB_LOG_LEVEL', default='INFO')

# Where datasets live (one sub-directory per benchmark) and where runs go
DATA_DIR = config('KGE_LAB_DATA_DIR', default='data')
RUNS_DIR = config('KGE_LAB_RUNS_DIR', default='runs')

# Upper bound on the number of (query, candidate) cells scored at once
# during evaluation. Lower it on small machines.
EVAL_CHUNK = config('KGE_LAB_EVAL_CHUNK', default=4_000_000, cast=int)

# Queries per chunk when computing the loss and its gradient
LOSS_CHUNK = config('KGE_LAB_LOSS_CHUNK', default=256, cast=int)

# Train-loss log interval (steps)
LOG_EVERY = config('KGE_LAB_LOG_EVERY', default=100, cast=int)

# Dataset directory names for the preset keys
DATASET_DIRS = {
    'fb15k237': 'FB15k-237',
    'wn18rr': 'WN18RR',
    'yago310': 'YAGO3-10',
}

# Entity counts of the public benchmarks
BENCHMARK_ENTITY_COUNTS = {
    'FB15k-237': 14541,
    'WN18RR': 40943,
    'YAGO3-10': 123182,
}
