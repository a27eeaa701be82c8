"""
Command-line interface: train, eval, theory and freq

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from typing import Dict, List, Optional

import pandas as pd
from pydantic import ValidationError

from . import settings
from .checkpoint import load_checkpoint, save_checkpoint
from .data_loader import Direction, SPLITS, build_filter_index, count_frequencies, load_dataset, make_queries
from .evaluation import evaluate, expected_random_mrr, report_to_json
from .exceptions import KGELabError, NumericalAbort, UsageError
from .models import RunManifest, TrainConfig
from .presets import PRESETS, get_preset
from .scenarios import SCENARIOS, run_scenario
from .scoring import MODEL_KINDS
from .subsampling import SUBSAMPLING_METHODS, subsample_table
from .trainer import train

logger = logging.getLogger(__name__)

MANIFEST_FILE = 'manifest.json'
CONFIG_FILE = 'config.json'
METRICS_FILE = 'metrics.jsonl'
CHECKPOINT_FILE = 'checkpoint.bin'
DATASET_FILES = ('train.txt', 'valid.txt', 'test.txt', 'entities.dict', 'relations.dict')


class ArgumentParser(argparse.ArgumentParser):
    """argparse that raises UsageError instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog='kge_lab', description='Negative-sampling loss lab for knowledge graph embedding')
    parser.add_argument('--version', action='version', version=f"%(prog)s {settings.VERSION}")
    commands = parser.add_subparsers(dest='command', required=True)

    p_train = commands.add_parser('train', help='train a model and write a run directory')
    p_train.add_argument('--preset', choices=sorted(PRESETS), help='hyperparameter preset <dataset>-<model>')
    p_train.add_argument('--config', help='JSON file mirroring TrainConfig')
    p_train.add_argument('--model', choices=MODEL_KINDS)
    p_train.add_argument('--loss', choices=['ns', 'ns-original', 'ns-kge', 'sans'])
    p_train.add_argument('--gamma', type=float)
    p_train.add_argument('--nu', type=int)
    p_train.add_argument('--alpha', type=float)
    p_train.add_argument('--subsampling', choices=SUBSAMPLING_METHODS)
    p_train.add_argument('--no-rescale-subsampling', dest='rescale_subsampling', action='store_false', default=None,
                         help='keep subsampling weights summing to 1 instead of |D|')
    p_train.add_argument('--lr', type=float)
    p_train.add_argument('--lr-schedule', choices=['constant', 'halve'])
    p_train.add_argument('--batch', type=int)
    p_train.add_argument('--dim', type=int)
    p_train.add_argument('--steps', type=int)
    p_train.add_argument('--seed', type=int)
    p_train.add_argument('--eval-every', type=int)
    p_train.add_argument('--dataset', help='dataset directory with train/valid/test.txt')
    p_train.add_argument('--out', help='run directory (default: under KGE_LAB_RUNS_DIR)')

    p_eval = commands.add_parser('eval', help='evaluate a checkpoint')
    p_eval.add_argument('--checkpoint', required=True, help='checkpoint file or run directory')
    p_eval.add_argument('--dataset', help='dataset directory (default: the one recorded in the run directory)')
    p_eval.add_argument('--split', choices=SPLITS, default='test')
    p_eval.add_argument('--raw', action='store_true', help='do not filter other known answers')

    p_theory = commands.add_parser('theory', help='run a theory-lab scenario')
    p_theory.add_argument('scenario', choices=list(SCENARIOS))
    p_theory.add_argument('--seed', type=int, default=0)

    p_freq = commands.add_parser('freq', help='dump subsampling weights per training triple')
    p_freq.add_argument('--dataset', required=True)
    p_freq.add_argument('--method', choices=SUBSAMPLING_METHODS, default='base')
    p_freq.add_argument('--direction', choices=['tail', 'head', 'both'], default='tail')
    p_freq.add_argument('--out', help='output file (default: stdout)')
    return parser


def _deep_update(base: Dict, overrides: Dict) -> Dict:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_update(merged[key], value)
        else:
            merged[key] = value
    return merged


def _flag_overrides(args: argparse.Namespace) -> Dict:
    top = {
        'model': args.model,
        'dim': args.dim,
        'batch_size': args.batch,
        'max_steps': args.steps,
        'learning_rate': args.lr,
        'lr_schedule': args.lr_schedule,
        'seed': args.seed,
        'eval_every': args.eval_every,
        'dataset_path': args.dataset,
    }
    loss = {
        'family': args.loss,
        'gamma': args.gamma,
        'nu': args.nu,
        'alpha': args.alpha,
        'subsampling': args.subsampling,
        'rescale_subsampling': args.rescale_subsampling,
    }
    overrides = {k: v for k, v in top.items() if v is not None}
    loss = {k: v for k, v in loss.items() if v is not None}
    if loss:
        overrides['loss'] = loss
    return overrides


def resolve_train_config(args: argparse.Namespace) -> TrainConfig:
    """Preset, then config file, then flags; later sources win."""
    base = get_preset(args.preset) if args.preset else TrainConfig()
    merged = base.model_dump()
    if args.config:
        try:
            with open(args.config, encoding='utf-8') as f:
                from_file = json.load(f)
        except json.JSONDecodeError as e:
            raise UsageError(f"{args.config}: invalid JSON ({e})") from e
        if not isinstance(from_file, dict):
            raise UsageError(f"{args.config}: expected a JSON object, found {type(from_file).__name__}")
        merged = _deep_update(merged, from_file)
    merged = _deep_update(merged, _flag_overrides(args))
    try:
        return TrainConfig.model_validate(merged)
    except ValidationError as e:
        raise UsageError(f"invalid training configuration: {e}") from e


def dataset_checksums(directory: str) -> Dict[str, str]:
    checksums = {}
    for name in DATASET_FILES:
        path = os.path.join(directory, name)
        if os.path.isfile(path):
            with open(path, 'rb') as f:
                checksums[name] = hashlib.sha256(f.read()).hexdigest()
    return checksums


def _write_json(path: str, payload: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        f.write(payload + '\n')


def cmd_train(args: argparse.Namespace) -> int:
    config = resolve_train_config(args)
    if not config.dataset_path:
        raise UsageError("no dataset given: use --dataset, a preset or a config file with dataset_path")
    dataset = load_dataset(config.dataset_path)

    run_dir = args.out or os.path.join(settings.RUNS_DIR, f"{config.preset or config.model}-seed{config.seed}")
    os.makedirs(run_dir, exist_ok=True)
    manifest = RunManifest(
        config=config.model_dump(mode='json'),
        root_seed=config.seed,
        tool_version=settings.VERSION,
        dataset_checksums=dataset_checksums(config.dataset_path),
        started_at=datetime.now(timezone.utc),
    )
    manifest_path = os.path.join(run_dir, MANIFEST_FILE)
    _write_json(manifest_path, manifest.model_dump_json(indent=2))
    _write_json(os.path.join(run_dir, CONFIG_FILE), config.model_dump_json(indent=2))
    logger.info(f"📁 Run directory: {run_dir}")

    try:
        params, log = train(config, dataset, metrics_path=os.path.join(run_dir, METRICS_FILE))
    except NumericalAbort:
        manifest.status = 'aborted'
        manifest.finished_at = datetime.now(timezone.utc)
        _write_json(manifest_path, manifest.model_dump_json(indent=2))
        raise

    save_checkpoint(params, os.path.join(run_dir, CHECKPOINT_FILE))
    manifest.status = 'completed'
    manifest.finished_at = datetime.now(timezone.utc)
    _write_json(manifest_path, manifest.model_dump_json(indent=2))

    final = [record for record in log if record['split'] == 'test']
    if final:
        print(json.dumps(final[-1], sort_keys=True))
    print(run_dir)
    return 0


def _resolve_checkpoint(path: str, dataset_path: Optional[str]):
    if os.path.isdir(path):
        run_dir = path
        path = os.path.join(run_dir, CHECKPOINT_FILE)
        if dataset_path is None and os.path.isfile(os.path.join(run_dir, CONFIG_FILE)):
            with open(os.path.join(run_dir, CONFIG_FILE), encoding='utf-8') as f:
                dataset_path = json.load(f).get('dataset_path')
    if dataset_path is None:
        raise UsageError("no dataset given: use --dataset")
    return path, dataset_path


def cmd_eval(args: argparse.Namespace) -> int:
    checkpoint_path, dataset_path = _resolve_checkpoint(args.checkpoint, args.dataset)
    dataset = load_dataset(dataset_path)
    params = load_checkpoint(checkpoint_path, dataset.num_entities, dataset.num_relations)
    triples = dataset.split(args.split)
    if len(triples) == 0:
        raise UsageError(f"split {args.split!r} is empty")
    filter_index = None if args.raw else build_filter_index(dataset.train, dataset.valid, dataset.test)
    report = evaluate(params, make_queries(triples), filter_index, split=args.split)
    logger.info(f"Random-rank baseline MRR for {dataset.num_entities} entities: "
                f"{expected_random_mrr(dataset.num_entities):.4f}")
    print(report_to_json(report))
    print(report.to_tsv_row(header=True))
    return 0


def cmd_theory(args: argparse.Namespace) -> int:
    result = run_scenario(args.scenario, args.seed)
    sys.stdout.write(result.render())
    return 0


def freq_records(dataset, method: str, directions: List[Direction]) -> List[Dict]:
    """One record per (training triple, direction) with weights before and after |D| rescaling."""
    freq = count_frequencies(dataset.train)
    raw_a, raw_b = subsample_table(method, freq, rescale=False)
    scale = float(len(dataset.train)) if method != 'none' else 1.0
    table = freq.to_frame(dataset.vocab)
    frames = []
    for direction in directions:
        df = table.copy()
        df['direction'] = direction.label
        df['query_freq'] = freq.query_counts(direction)
        df['A_raw'] = raw_a[direction]
        df['B_raw'] = raw_b[direction]
        df['A'] = scale * df['A_raw']
        df['B'] = scale * df['B_raw']
        frames.append(df)
    records = pd.concat(frames, ignore_index=True).to_dict(orient='records')
    # numpy scalars are not JSON serializable
    return [{k: v.item() if hasattr(v, 'item') else v for k, v in r.items()} for r in records]


def cmd_freq(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    directions = [Direction.TAIL, Direction.HEAD] if args.direction == 'both' else [
        Direction.TAIL if args.direction == 'tail' else Direction.HEAD
    ]
    lines = [json.dumps(r, sort_keys=True) for r in freq_records(dataset, args.method, directions)]
    text = '\n'.join(lines) + ('\n' if lines else '')
    if args.out:
        with open(args.out, 'w', encoding='utf-8') as f:
            f.write(text)
        logger.info(f"Wrote {len(lines)} weight records to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {
    'train': cmd_train,
    'eval': cmd_eval,
    'theory': cmd_theory,
    'freq': cmd_freq,
}


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=settings.LOG_LEVEL, format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except KGELabError as e:
        logger.error(f"❌ {e}")
        return e.exit_code
    except ValidationError as e:
        logger.error(f"❌ {e}")
        return UsageError.exit_code
    except OSError as e:
        logger.error(f"❌ I/O error: {e}")
        return 2
