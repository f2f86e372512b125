#!/usr/bin/env python3

'''
memalign command line: gen-data, pretrain, build-memory, subsample, adapt, eval, ablate, report

every command writes its artifacts plus an experiment.json record into --out
exit codes: 0 success, 2 validation error, 3 runtime / numerical error
'''

import os
import sys
import time
import logging
import hashlib
import argparse
import datetime
import dataclasses

from pathlib import Path

from memalign import synthgen
from memalign.synthgen import BenchmarkConfig, generate_benchmark, save_benchmark, load_benchmark
from memalign.detector import save_detector, load_detector
from memalign.memory import build_memory, subsample_bank, save_memory, load_memory
from memalign.trainer import TrainConfig, MetricsTrace, pretrain_source, adapt, evaluate_detector, infer_num_classes
from memalign.ablation import run_ablation, write_ablation, write_rows, read_rows, available_suites, SUMMARY_COLUMNS
from memalign.visualisation.report_plots import plot_ablation, plot_training_curves
from memalign.tools.artifact_io import prepare_output_dir, DirectoryLock, write_json
from memalign.tools.common import RngStream
from memalign.tools.errors import print_error, exit_code_for, MemalignError, UsageError, DatasetIOError, EXIT_SUCCESS
from memalign.tools.params import SCHEMA_VERSION

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = 'MEMALIGN_LOG_LEVEL'
LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR')

@dataclasses.dataclass
class ExperimentRecord:
    command: str
    seed: int
    config: dict
    config_hash: str
    code_hash: str
    inputs: dict = dataclasses.field(default_factory=dict)
    artifacts: list = dataclasses.field(default_factory=list)
    evaluation: dict = None
    # wall clock metadata, the only non reproducible part of an output directory
    started_at: str = ''
    duration_s: float = 0.0

    def save(self, out_dir):
        return write_json(Path(out_dir) / 'experiment.json',
                          {'schema_version': SCHEMA_VERSION, **dataclasses.asdict(self)}, sealed=True)

def code_hash():
    '''
    sha256 over the package sources, stands in for a build id
    '''
    h = hashlib.sha256()
    root = Path(__file__).resolve().parent
    for path in sorted(root.rglob('*.py')):
        h.update(str(path.relative_to(root)).encode('utf-8'))
        h.update(path.read_bytes())
    return h.hexdigest()

def configure_logging(level=None):
    level = (level or os.environ.get(LOG_LEVEL_ENV) or 'INFO').upper()
    if level not in LOG_LEVELS:
        raise UsageError(f'unknown log level "{level}", expected one of {LOG_LEVELS}')
    logging.basicConfig(level=getattr(logging, level), format='[%(levelname)s] [%(name)s]: %(message)s', force=True)

def train_config(args, **overrides):
    '''
    train_params.yaml defaults < --config file < command line flags
    '''
    overrides.update({'seed': args.seed, 'threads': args.threads})
    if getattr(args, 'mode', None):
        overrides['alignment_mode'] = args.mode
    if args.config:
        return TrainConfig.from_file(args.config, overrides)
    return TrainConfig.from_params(overrides)

def require_dir(path, what):
    path = Path(path)
    if not path.is_dir():
        raise DatasetIOError(f'{what} directory not found', path)
    return path

def eval_rows(split, report):
    return [{'split': split, **report.as_row()}]

def eval_columns(num_classes):
    return ['split', 'map', 'accuracy', 'tp', 'fp', 'fn', 'n_gt'] + [f'ap_{c}' for c in range(num_classes)]

# commands

def cmd_gen_data(args, record):
    overrides = {'num_scenes': args.scenes, 'num_classes': args.classes, 'fog_intensity': args.fog}
    config = BenchmarkConfig.from_params({k: v for k, v in overrides.items() if v is not None})
    source, target, provenance = generate_benchmark(config, args.seed, args.threads)
    save_benchmark(source, target, provenance, args.out)
    record.config, record.config_hash = config.as_dict(), config.config_hash()
    record.artifacts = ['manifest.json', 'provenance.json', 'scenes/']
    print(f'{len(source)} source scenes ({source.box_count()} boxes), {len(target)} target scenes, '
          f'{len(provenance.siblings)} variant scenes written to {args.out}')

def cmd_pretrain(args, record):
    source, _, _ = load_benchmark(require_dir(args.data, 'dataset'))
    overrides = {'pretrain_epochs': args.epochs} if args.epochs is not None else {}
    config = train_config(args, **overrides)
    detector, trace = pretrain_source(source, config, infer_num_classes(source))
    save_detector(detector, args.out)
    trace.write_csv(Path(args.out) / 'trace.csv')
    record.config, record.config_hash = config.as_dict(), config.config_hash()
    record.inputs = {'data': str(args.data)}
    record.artifacts = ['detector.npz', 'detector.json', 'trace.csv']
    last = trace.last('pretrain')
    record.evaluation = {'split': 'source', 'map': last['map'], 'accuracy': last['accuracy']} if last else None

def cmd_build_memory(args, record):
    source, _, provenance = load_benchmark(require_dir(args.data, 'dataset'))
    detector = load_detector(require_dir(args.detector, 'detector'))
    scenes = list(source)
    if args.mode and args.mode.startswith('provenance'):
        scenes += list(provenance.siblings)
    bank = build_memory(scenes, detector, background_scenes=list(source))
    save_memory(bank, args.out)
    record.inputs = {'data': str(args.data), 'detector': str(args.detector)}
    record.config, record.config_hash = {'mode': args.mode}, detector.content_hash()
    record.artifacts = ['memory.json', 'memory.f32']
    print(f'memory: {bank.fg_count()} foreground entries over {len(scenes)} scenes, {len(bank.bg)} background entries')

def cmd_subsample(args, record):
    bank = load_memory(require_dir(args.memory, 'memory'))
    subset = subsample_bank(bank, args.method, args.keep_fg, args.keep_bg, RngStream(args.seed).spawn('subsample'))
    save_memory(subset, args.out)
    record.inputs = {'memory': str(args.memory)}
    record.config = {'method': args.method, 'keep_fg': args.keep_fg, 'keep_bg': args.keep_bg}
    record.config_hash = bank.extractor_hash
    record.artifacts = ['memory.json', 'memory.f32']
    print(f'kept {subset.fg_count()}/{bank.fg_count()} foreground and {len(subset.bg)}/{len(bank.bg)} background entries')

def cmd_adapt(args, record):
    source, target, provenance = load_benchmark(require_dir(args.data, 'dataset'))
    detector = load_detector(require_dir(args.detector, 'detector'))
    overrides = {'adapt_epochs': args.epochs} if args.epochs is not None else {}
    config = train_config(args, **overrides)
    memory = load_memory(require_dir(args.memory, 'memory')) if args.memory else None
    adapted, trace = adapt(source, target, detector, config, memory=memory, provenance=provenance)
    save_detector(adapted, args.out)
    trace.write_csv(Path(args.out) / 'trace.csv')
    record.config, record.config_hash = config.as_dict(), config.config_hash()
    record.inputs = {'data': str(args.data), 'detector': str(args.detector), 'memory': args.memory}
    record.artifacts = ['detector.npz', 'detector.json', 'trace.csv']
    last = trace.last('adapt')
    record.evaluation = {'split': 'target', 'map': last['map'], 'accuracy': last['accuracy']} if last else None

def cmd_eval(args, record):
    datasets = synthgen.load_dataset(require_dir(args.data, 'dataset'))
    if args.split not in datasets:
        raise UsageError(f'split "{args.split}" not found, available: {sorted(datasets)}')
    detector = load_detector(require_dir(args.detector, 'detector'))
    report = evaluate_detector(datasets[args.split], detector, args.score_threshold, args.nms_iou, args.threads)
    write_rows(Path(args.out) / 'eval.csv', eval_columns(detector.num_classes), eval_rows(args.split, report))
    record.inputs = {'data': str(args.data), 'detector': str(args.detector)}
    record.config = {'split': args.split, 'score_threshold': args.score_threshold, 'nms_iou': args.nms_iou}
    record.config_hash = detector.content_hash()
    record.artifacts = ['eval.csv']
    record.evaluation = eval_rows(args.split, report)[0]
    print(f'{args.split}: mAP {report.map:.4f}, accuracy {report.accuracy:.4f} ({report.tp} TP, {report.fp} FP, {report.fn} FN)')

def cmd_ablate(args, record):
    overrides = {}
    if args.epochs is not None:
        overrides.update({'pretrain_epochs': args.epochs, 'adapt_epochs': args.epochs})
    config = train_config(args, **overrides)
    benchmark_config = BenchmarkConfig.from_params({'num_scenes': args.scenes} if args.scenes else None)
    seeds = list(range(args.seed, args.seed + args.seeds))
    table = run_ablation(args.suite, config, seeds, benchmark_config)
    summary_path = write_ablation(table, args.out)
    record.config, record.config_hash = config.as_dict(), config.config_hash()
    record.inputs = {'suite': args.suite, 'seeds': seeds, 'benchmark': benchmark_config.as_dict()}
    record.artifacts = [summary_path.name, f'{args.suite}_per_seed.csv']
    for row in table.summary_rows():
        print(f'{row["cell"]}: mAP {_fmt_mean_sd(row, "map")}, accuracy {_fmt_mean_sd(row, "accuracy")}, n={row["n"]}')

def _fmt_mean_sd(row, metric):
    mean, sd = row.get(f'{metric}_mean'), row.get(f'{metric}_sd')
    if mean in (None, ''):
        return 'n/a'
    return f'{float(mean):.4f} ± {float(sd or 0.0):.4f}'

def report_inputs(paths):
    '''
    expand directories into the ablation summaries and traces they hold
    '''
    found = []
    for path in map(Path, paths):
        if path.is_dir():
            found.extend(sorted(path.glob('*_summary.csv')) + sorted(path.glob('trace.csv')))
        elif path.is_file():
            found.append(path)
        else:
            raise DatasetIOError('report input not found', path)
    if not found:
        raise UsageError(f'no ablation summary or trace found in {list(paths)}')
    return found

def cmd_report(args, record):
    out_dir = Path(args.out)
    for path in report_inputs(args.inputs):
        if path.name == 'trace.csv':
            stem = path.parent.name
            if args.format == 'svg':
                record.artifacts.append(plot_training_curves(MetricsTrace.read_csv(path), out_dir / f'{stem}_training.svg', stem).name)
            continue
        stem = path.name[:-len('_summary.csv')] if path.name.endswith('_summary.csv') else path.stem
        rows = read_rows(path)
        missing = set(SUMMARY_COLUMNS) - set(rows[0] if rows else {})
        if missing:
            raise UsageError(f'{path} is not an ablation summary, missing columns {sorted(missing)}')
        if args.format == 'svg':
            record.artifacts.append(plot_ablation(rows, out_dir / f'{stem}.svg').name)
        else:
            table = [{'suite': r['suite'], 'cell': r['cell'], 'map': _fmt_mean_sd(r, 'map'),
                      'accuracy': _fmt_mean_sd(r, 'accuracy'), 'n': r['n'], 'failures': r['failures']} for r in rows]
            write_rows(out_dir / f'{stem}_report.csv', ('suite', 'cell', 'map', 'accuracy', 'n', 'failures'), table)
            record.artifacts.append(f'{stem}_report.csv')
    record.inputs = {'inputs': [str(p) for p in args.inputs], 'format': args.format}

COMMANDS = {'gen-data': cmd_gen_data, 'pretrain': cmd_pretrain, 'build-memory': cmd_build_memory,
            'subsample': cmd_subsample, 'adapt': cmd_adapt, 'eval': cmd_eval, 'ablate': cmd_ablate, 'report': cmd_report}

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=0)
    common.add_argument('--threads', type=int, default=1)
    common.add_argument('--out', required=True, help='output directory')
    common.add_argument('--config', default=None, help='training parameter yaml (needs schema_version)')
    common.add_argument('--force', action='store_true', help='write into a non-empty output directory')
    common.add_argument('--log-level', default=None, choices=LOG_LEVELS, help=f'overrides ${LOG_LEVEL_ENV}')

    parser = argparse.ArgumentParser(prog='memalign', description='memory based visually similar pair alignment for cross domain detection')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('gen-data', parents=[common], help='generate the synthetic clear / fog benchmark')
    p.add_argument('--scenes', type=int, default=None)
    p.add_argument('--classes', type=int, default=None)
    p.add_argument('--fog', type=float, default=None)

    p = sub.add_parser('pretrain', parents=[common], help='train the detector on the labelled source split')
    p.add_argument('--data', required=True)
    p.add_argument('--epochs', type=int, default=None)

    p = sub.add_parser('build-memory', parents=[common], help='build the foreground / background memory')
    p.add_argument('--data', required=True)
    p.add_argument('--detector', required=True)
    p.add_argument('--mode', default=None, help='provenance modes add the variant scenes to the foreground memory')

    p = sub.add_parser('subsample', parents=[common], help='coreset or random reduction of a memory snapshot')
    p.add_argument('--memory', required=True)
    p.add_argument('--method', choices=('coreset', 'random'), default='coreset')
    p.add_argument('--keep-fg', type=float, default=0.5)
    p.add_argument('--keep-bg', type=float, default=0.3)

    p = sub.add_parser('adapt', parents=[common], help='adapt a pretrained detector to the target split')
    p.add_argument('--data', required=True)
    p.add_argument('--detector', required=True)
    p.add_argument('--memory', default=None, help='prebuilt memory snapshot, built from the source split if omitted')
    p.add_argument('--mode', default=None, help='memory_similar, batch_c2c, category_agnostic, prototype, provenance:<strategy>')
    p.add_argument('--epochs', type=int, default=None)

    p = sub.add_parser('eval', parents=[common], help='per class AP, mAP and detection accuracy')
    p.add_argument('--data', required=True)
    p.add_argument('--detector', required=True)
    p.add_argument('--split', default=synthgen.TARGET)
    p.add_argument('--score-threshold', type=float, default=0.05)
    p.add_argument('--nms-iou', type=float, default=0.5)

    p = sub.add_parser('ablate', parents=[common], help='run an ablation suite over several seeds')
    p.add_argument('--suite', required=True)
    p.add_argument('--seeds', type=int, default=5)
    p.add_argument('--scenes', type=int, default=None, help='benchmark size per seed')
    p.add_argument('--epochs', type=int, default=None, help='pretrain and adapt epochs')

    p = sub.add_parser('report', parents=[common], help='charts and mean ± sd tables from ablation summaries and traces')
    p.add_argument('--in', dest='inputs', nargs='+', required=True)
    p.add_argument('--format', choices=('csv', 'svg'), default='svg')
    return parser

def run(args):
    if args.command == 'ablate' and args.suite not in available_suites():
        raise UsageError(f'unknown ablation suite "{args.suite}", valid suites: {sorted(available_suites())}')
    out_dir = prepare_output_dir(args.out, args.force)
    started = time.monotonic()
    record = ExperimentRecord(command=args.command, seed=args.seed, config={}, config_hash='', code_hash=code_hash(),
                              started_at=datetime.datetime.now(datetime.timezone.utc).isoformat(timespec='seconds'))
    with DirectoryLock(out_dir):
        COMMANDS[args.command](args, record)
        record.duration_s = round(time.monotonic() - started, 3)
        record.save(out_dir)
    logger.info(f'{args.command} finished in {record.duration_s:.1f} s, artifacts in {out_dir}')

def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        configure_logging(args.log_level)
        run(args)
    except MemalignError as e:
        print_error(e)
        return exit_code_for(e)
    return EXIT_SUCCESS

if __name__ == '__main__':
    sys.exit(main())
