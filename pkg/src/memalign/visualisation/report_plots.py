#!/usr/bin/env python3

'''
standalone SVG charts for ablation tables (grouped bars with sd error bars, or a line per metric for
numeric sweeps) and for training traces
'''

import logging

from pathlib import Path

import matplotlib

matplotlib.use('Agg')
matplotlib.rcParams.update({'font.family': 'DejaVu Sans', 'axes.unicode_minus': False,
                            # fixed ids so that identical inputs give identical files
                            'svg.hashsalt': 'memalign'})

import matplotlib.pyplot as plt

from memalign.tools.errors import ArgumentError

logger = logging.getLogger(__name__)

METRICS = (('map', 'mAP @ IoU 0.5'), ('accuracy', 'detection accuracy'))

def _float(value):
    if value is None or value == '':
        return None
    return float(value)

def sweep_value(cell_name):
    '''
    e.g. input  : delta_0.4
            output : 0.4 (None if the cell name does not end in a number)
    '''
    tail = str(cell_name).rsplit('_', 1)[-1]
    try:
        return float(tail)
    except ValueError:
        return None

def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format='svg', metadata={'Date': None})
    plt.close(fig)
    logger.info(f'wrote {path}')
    return path

def plot_ablation(summary_rows, path, title=None):
    '''
    summary_rows: dicts with cell, <metric>_mean and <metric>_sd (csv strings or floats)
    '''
    if not summary_rows:
        raise ArgumentError('nothing to plot, the ablation table is empty')
    cells = [row['cell'] for row in summary_rows]
    title = title or summary_rows[0].get('suite', 'ablation')
    xs = [sweep_value(cell) for cell in cells]
    fig, axes = plt.subplots(1, len(METRICS), figsize=(4.5 * len(METRICS), 3.6), constrained_layout=True)
    for ax, (metric, label) in zip(axes, METRICS):
        means = [_float(row.get(f'{metric}_mean')) for row in summary_rows]
        sds = [_float(row.get(f'{metric}_sd')) or 0.0 for row in summary_rows]
        if all(x is not None for x in xs):
            points = sorted((x, m, s) for x, m, s in zip(xs, means, sds) if m is not None)
            ax.errorbar([p[0] for p in points], [p[1] for p in points], yerr=[p[2] for p in points],
                        marker='o', capsize=3)
            ax.set_xlabel(cells[0].rsplit('_', 1)[0])
        else:
            positions = range(len(cells))
            ax.bar(positions, [m if m is not None else 0.0 for m in means], yerr=sds, capsize=3,
                   color=plt.cm.Set2.colors[:len(cells)] if len(cells) <= 8 else None)
            ax.set_xticks(list(positions))
            ax.set_xticklabels(cells, rotation=30, ha='right')
        ax.set_ylabel(label)
        ax.set_ylim(0.0, 1.0)
        ax.grid(True, alpha=0.3)
    fig.suptitle(title)
    return _save(fig, path)

def plot_training_curves(trace, path, title='training'):
    '''
    loss components and target mAP per epoch, one column per phase
    '''
    phases = [p for p in ('pretrain', 'adapt') if trace.phase(p)]
    if not phases:
        raise ArgumentError('nothing to plot, the trace is empty')
    fig, axes = plt.subplots(2, len(phases), figsize=(5 * len(phases), 6), constrained_layout=True, squeeze=False)
    for column, phase in enumerate(phases):
        records = trace.phase(phase)
        epochs = [r['epoch'] for r in records]
        ax = axes[0][column]
        for key in ('l_sup', 'l_unsup', 'l_fg', 'l_bg', 'l_total'):
            values = [r[key] for r in records]
            if any(v for v in values):
                ax.plot(epochs, values, label=key)
        ax.set_title(phase)
        ax.set_ylabel('loss')
        ax.legend(loc='best', fontsize=8)
        ax.grid(True, alpha=0.3)
        ax = axes[1][column]
        evaluated = [r for r in records if r['map'] is not None]
        ax.plot([r['epoch'] for r in evaluated], [r['map'] for r in evaluated], marker='o', label='mAP')
        ax.plot([r['epoch'] for r in evaluated], [r['accuracy'] for r in evaluated], marker='s', label='accuracy')
        ax.set_xlabel('epoch')
        ax.set_ylim(0.0, 1.0)
        ax.legend(loc='best', fontsize=8)
        ax.grid(True, alpha=0.3)
    fig.suptitle(title)
    return _save(fig, path)
