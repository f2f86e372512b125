#!/usr/bin/env python3

'''
ablation suites: every cell of a suite is a set of TrainConfig overrides, run once per seed on the
benchmark generated with that seed; results are aggregated to mean / sd / n per cell
'''

import csv
import logging
import dataclasses

from pathlib import Path

import numpy as np

from memalign.synthgen import BenchmarkConfig, generate_benchmark
from memalign.trainer import TrainConfig, pretrain_source, adapt, evaluate_detector
from memalign.tools.params import get_params
from memalign.tools.errors import ArgumentError, MemalignError

logger = logging.getLogger(__name__)

# used when config/ablation/ablation_suites.yaml is not installed
BUILTIN_SUITES = {
    'strategies': [{'name': mode, 'overrides': {'alignment_mode': f'provenance:{mode}'}}
                   for mode in ('domain_only', 'color', 'rotation', 'color_rotation')],
    'memory_vs_batch': [{'name': mode, 'overrides': {'alignment_mode': mode}}
                        for mode in ('memory_similar', 'batch_c2c', 'category_agnostic', 'prototype')],
    'fg_bg': [{'name': 'fg_bg', 'overrides': {'fg_enabled': True, 'bg_enabled': True}},
              {'name': 'fg_only', 'overrides': {'fg_enabled': True, 'bg_enabled': False}},
              {'name': 'bg_only', 'overrides': {'fg_enabled': False, 'bg_enabled': True}}],
    'subsampling': [{'name': 'full', 'overrides': {'subsample': 'none'}},
                    {'name': 'coreset', 'overrides': {'subsample': 'coreset'}},
                    {'name': 'random', 'overrides': {'subsample': 'random'}}],
    'delta_sweep': [{'name': f'delta_{d}', 'overrides': {'delta': d}} for d in (0.0, 0.4, 0.6, 0.8, 0.9)],
    'k_sweep': [{'name': f'k_{k}', 'overrides': {'top_k': k}} for k in (1, 10, 30)],
    'lambda2_sweep': [{'name': f'lambda_fg_{v}', 'overrides': {'lambda_fg': v}} for v in (0.01, 0.05, 0.1, 0.5)],
    'lambda3_sweep': [{'name': f'lambda_bg_{v}', 'overrides': {'lambda_bg': v}} for v in (0.01, 0.05, 0.1, 0.5)],
    'source_vs_adapted': [{'name': 'source_only', 'overrides': {}, 'pretrain_only': True},
                          {'name': 'adapted', 'overrides': {}}],
}

SUMMARY_COLUMNS = ('suite', 'cell', 'map_mean', 'map_sd', 'accuracy_mean', 'accuracy_sd', 'n', 'failures')
PER_SEED_COLUMNS = ('suite', 'cell', 'seed', 'map', 'accuracy', 'status', 'error')

@dataclasses.dataclass
class CellResult:
    cell: str
    seed: int
    map: float = None
    accuracy: float = None
    status: str = 'ok'
    error: str = ''

@dataclasses.dataclass
class AblationTable:
    suite: str
    cells: list
    results: list

    def cell_results(self, cell):
        return [r for r in self.results if r.cell == cell]

    def summary_rows(self):
        rows = []
        for cell in self.cells:
            ok = [r for r in self.cell_results(cell) if r.status == 'ok']
            maps = [r.map for r in ok]
            accuracies = [r.accuracy for r in ok]
            rows.append({'suite': self.suite, 'cell': cell,
                         'map_mean': _mean(maps), 'map_sd': _sd(maps),
                         'accuracy_mean': _mean(accuracies), 'accuracy_sd': _sd(accuracies),
                         'n': len(ok), 'failures': len(self.cell_results(cell)) - len(ok)})
        return rows

    def per_seed_rows(self):
        return [{'suite': self.suite, **dataclasses.asdict(r)} for r in self.results]

def _mean(values):
    return float(np.mean(values)) if values else None

def _sd(values):
    # sample standard deviation over seeds
    return float(np.std(values, ddof=1)) if len(values) > 1 else (0.0 if values else None)

def available_suites():
    return get_params('ablation/ablation_suites.yaml', default=BUILTIN_SUITES)

def suite_cells(suite_name, suites=None):
    suites = suites if suites is not None else available_suites()
    if suite_name not in suites:
        raise ArgumentError(f'unknown ablation suite "{suite_name}", available: {sorted(suites)}')
    cells = suites[suite_name]
    names = [cell['name'] for cell in cells]
    if len(set(names)) != len(names):
        raise ArgumentError(f'ablation suite {suite_name} has duplicated cell names')
    return cells

def run_cell(cell, seed, base_config, source, target, provenance, detector):
    config = base_config.replace(seed=seed, **cell.get('overrides', {}))
    if not cell.get('pretrain_only', False):
        detector, trace = adapt(source, target, detector, config, provenance=provenance)
        last = trace.last('adapt')
        if last is not None and last['map'] is not None:
            return last['map'], last['accuracy']
    report = evaluate_detector(target, detector, config.eval_score_threshold, config.nms_iou, config.threads)
    return report.map, report.accuracy

def run_ablation(suite_name, base_config, seeds, benchmark_config=None, suites=None):
    '''
    one benchmark and one pretrained detector per seed, shared by every cell of the suite
    a failing cell is recorded and the suite continues
    '''
    assert isinstance(base_config, TrainConfig)
    cells = suite_cells(suite_name, suites)
    seeds = list(seeds)
    if not seeds:
        raise ArgumentError('an ablation needs at least one seed')
    benchmark_config = benchmark_config or BenchmarkConfig.from_params()
    results = []
    for seed in seeds:
        logger.info(f'ablation {suite_name}: seed {seed}, generating the benchmark')
        source, target, provenance = generate_benchmark(benchmark_config, seed, base_config.threads)
        detector, _ = pretrain_source(source, base_config.replace(seed=seed), benchmark_config.num_classes)
        for cell in cells:
            try:
                m, accuracy = run_cell(cell, seed, base_config, source, target, provenance, detector)
                results.append(CellResult(cell['name'], seed, m, accuracy))
                logger.info(f'ablation {suite_name}/{cell["name"]} seed {seed}: mAP {m:.3f}, accuracy {accuracy:.3f}')
            except MemalignError as e:
                logger.error(f'ablation {suite_name}/{cell["name"]} seed {seed} failed: {e}')
                results.append(CellResult(cell['name'], seed, status='failed', error=str(e)))
    return AblationTable(suite_name, [cell['name'] for cell in cells], results)

def write_rows(path, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction='ignore', lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({k: '' if v is None else (repr(v) if isinstance(v, float) else v) for k, v in row.items()})

def read_rows(path):
    with open(path, 'r', newline='') as f:
        return list(csv.DictReader(f))

def write_ablation(table, out_dir):
    '''
    <suite>_summary.csv (mean, sd, n per cell) and <suite>_per_seed.csv
    '''
    out_dir = Path(out_dir)
    summary_path = out_dir / f'{table.suite}_summary.csv'
    write_rows(summary_path, SUMMARY_COLUMNS, table.summary_rows())
    write_rows(out_dir / f'{table.suite}_per_seed.csv', PER_SEED_COLUMNS, table.per_seed_rows())
    return summary_path
