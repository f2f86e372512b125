#!/usr/bin/env python3

'''
source pretraining, pseudo labelling and the adaptation loop

L = L_sup + lambda_unsup * L_unsup + lambda_fg * L_fg + lambda_bg * L_bg, where L_fg aligns every
confident target detection with partners chosen by the configured alignment strategy and L_bg plays
the target background against a domain discriminator through a gradient reversal
'''

import csv
import math
import logging
import dataclasses

from pathlib import Path

import numpy as np

from memalign.synthgen import AnnotatedBox
from memalign.detector import (DetectorParams, DetectorGeometry, SceneGraph, propose_and_detect, detection_loss, poolable)
from memalign.memory import ForegroundEntry, BackgroundEntry, build_memory, refresh, subsample_bank, SUBSAMPLE_METHODS
from memalign.alignment import DiscriminatorParams, loss_fg, loss_bg, STATUS_OK
from memalign.aligners.alignment_strategy_core import load_strategy
from memalign.evaluation import evaluate, iou_matrix, box_coords, IOU_THRESHOLD
from memalign.numerics import sgd_step, accumulate_grads
from memalign.tools.common import RngStream, parallel_map, sha256_of_json
from memalign.tools.params import get_params, build_dataclass, dataclass_to_dict, load_yaml
from memalign.tools.errors import ConfigValidationError, TrainingError, ArgumentError, DatasetIOError, EvaluationError

logger = logging.getLogger(__name__)

@dataclasses.dataclass
class TrainConfig:
    # loss weights
    lambda_unsup: float = 1.0
    lambda_fg: float = 0.05
    lambda_bg: float = 0.05
    # confidence threshold for pseudo labels and alignment
    delta: float = 0.8
    # triplet margin
    alpha: float = 1.5
    top_k: int = 1
    num_negatives: int = 1
    lr: float = 0.01
    momentum: float = 0.9
    pretrain_epochs: int = 30
    adapt_epochs: int = 30
    pretrain_batch: int = 4
    source_per_step: int = 2
    target_per_step: int = 2
    # memory refresh interval in epochs
    refresh_interval: int = 2
    subsample: str = 'none'
    keep_fg: float = 0.5
    keep_bg: float = 0.3
    alignment_mode: str = 'memory_similar'
    fg_enabled: bool = True
    bg_enabled: bool = True
    grl_lambda: float = 1.0
    nms_iou: float = 0.5
    eval_score_threshold: float = 0.05
    # 0 evaluates only after the last epoch
    eval_every: int = 1
    prototype_decay: float = 0.99
    seed: int = 0
    threads: int = 1
    # DetectorGeometry overrides, num_classes comes from the data
    detector: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        self.detector = dict(self.detector or {})
        bad = [name for name in ('lambda_unsup', 'lambda_fg', 'lambda_bg', 'alpha', 'lr', 'grl_lambda')
               if getattr(self, name) < 0]
        for name in ('delta', 'momentum', 'nms_iou', 'eval_score_threshold', 'prototype_decay'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                bad.append(name)
        for name in ('keep_fg', 'keep_bg'):
            if not 0.0 < getattr(self, name) <= 1.0:
                bad.append(name)
        for name in ('top_k', 'pretrain_batch', 'source_per_step', 'target_per_step', 'refresh_interval', 'threads'):
            if getattr(self, name) < 1:
                bad.append(name)
        for name in ('num_negatives', 'pretrain_epochs', 'adapt_epochs', 'eval_every'):
            if getattr(self, name) < 0:
                bad.append(name)
        if self.subsample not in SUBSAMPLE_METHODS:
            bad.append('subsample')
        unknown_geometry = set(self.detector) - {f.name for f in dataclasses.fields(DetectorGeometry)}
        if unknown_geometry or 'num_classes' in self.detector:
            bad.extend(f'detector.{key}' for key in sorted(unknown_geometry | ({'num_classes'} & set(self.detector))))
        if bad:
            raise ConfigValidationError('invalid training parameters', bad)

    @classmethod
    def from_params(cls, overrides=None):
        '''
        config/trainer/train_params.yaml defaults merged with overrides
        '''
        params = dict(get_params('trainer/train_params.yaml'))
        overrides = dict(overrides or {})
        if 'detector' in overrides:
            params['detector'] = {**params.get('detector', {}), **overrides.pop('detector')}
        params.update(overrides)
        return build_dataclass(cls, params, 'train config')

    @classmethod
    def from_file(cls, path, overrides=None):
        content = load_yaml(path)
        if 'schema_version' not in content:
            raise ConfigValidationError(f'{path}: missing schema_version', ['schema_version'])
        content.update(overrides or {})
        return cls.from_params(content)

    def replace(self, **overrides):
        d = dataclasses.asdict(self)
        d.update(overrides)
        return build_dataclass(TrainConfig, d, 'train config')

    def geometry(self, num_classes):
        return build_dataclass(DetectorGeometry, {**self.detector, 'num_classes': num_classes}, 'detector geometry')

    def as_dict(self):
        return dataclass_to_dict(self)

    def config_hash(self):
        return sha256_of_json(self.as_dict())

# metrics trace

TRACE_COLUMNS = ('phase', 'epoch', 'l_sup', 'l_unsup', 'l_fg', 'l_bg', 'l_total', 'map', 'accuracy',
                 'fg_pairs', 'bg_pairs', 'skipped_fg', 'skipped_bg', 'pseudo_labels', 'memory_refreshed')

class MetricsTrace():
    '''
    one record per completed epoch, written as a CSV with a fixed column order
    '''
    def __init__(self, records=None):
        self.records = list(records or [])

    def append(self, **record):
        unknown = set(record) - set(TRACE_COLUMNS)
        if unknown:
            raise ArgumentError(f'unknown trace columns {sorted(unknown)}')
        row = {column: record.get(column) for column in TRACE_COLUMNS}
        for column in ('l_sup', 'l_unsup', 'l_fg', 'l_bg', 'l_total', 'map', 'accuracy'):
            if row[column] is not None and not math.isfinite(row[column]):
                raise TrainingError(f'non-finite {column} in {row["phase"]} epoch {row["epoch"]}', row['epoch'])
        self.records.append(row)
        return row

    def phase(self, name):
        return [r for r in self.records if r['phase'] == name]

    def last(self, phase=None):
        records = self.records if phase is None else self.phase(phase)
        return records[-1] if records else None

    def __len__(self):
        return len(self.records)

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', newline='') as f:
            writer = csv.DictWriter(f, fieldnames=list(TRACE_COLUMNS), lineterminator='\n')
            writer.writeheader()
            for record in self.records:
                writer.writerow({k: _format_cell(v) for k, v in record.items()})

    @classmethod
    def read_csv(cls, path):
        path = Path(path)
        if not path.is_file():
            raise DatasetIOError('metrics trace not found', path)
        trace = cls()
        with open(path, 'r', newline='') as f:
            for row in csv.DictReader(f):
                trace.records.append({column: _parse_cell(column, row.get(column, '')) for column in TRACE_COLUMNS})
        return trace

def _format_cell(value):
    if value is None:
        return ''
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float):
        return repr(value)
    return value

def _parse_cell(column, text):
    if text == '':
        return None
    if column == 'phase':
        return text
    if column in ('epoch', 'fg_pairs', 'bg_pairs', 'skipped_fg', 'skipped_bg', 'pseudo_labels', 'memory_refreshed'):
        return int(text)
    return float(text)

# evaluation

def evaluate_detector(dataset, detector, score_threshold=0.05, nms_iou=0.5, threads=1):
    '''
    detections with score >= score_threshold on every scene, scored against the scene boxes
    '''
    detections = parallel_map(lambda scene: propose_and_detect(scene.image, detector, score_threshold, nms_iou),
                              dataset, threads)
    return evaluate(detections, [scene.boxes for scene in dataset], detector.num_classes)

def _try_evaluate(dataset, detector, config):
    try:
        return evaluate_detector(dataset, detector, config.eval_score_threshold, config.nms_iou, config.threads)
    except EvaluationError as e:
        logger.warning(f'evaluation skipped: {e}')
        return None

# source pretraining

def infer_num_classes(dataset):
    classes = {box.class_id for scene in dataset for box in scene.boxes}
    if not classes:
        raise ArgumentError(f'dataset {dataset.name} holds no labelled box')
    return max(classes) + 1

def pretrain_source(source, config, num_classes=None, trace=None):
    '''
    anchor classification on the labelled source scenes, mini-batches of config.pretrain_batch
    returns (detector, trace)
    '''
    assert isinstance(config, TrainConfig)
    num_classes = num_classes or infer_num_classes(source)
    trace = trace if trace is not None else MetricsTrace()
    rng = RngStream(config.seed)
    detector = DetectorParams.init(rng.spawn('init', 'detector'), geometry=config.geometry(num_classes))
    n = len(source)
    if n == 0:
        raise ArgumentError('cannot pretrain on an empty source dataset')
    for epoch in range(1, config.pretrain_epochs + 1):
        order = rng.spawn('pretrain', epoch).permutation(n)
        losses = []
        for step, start in enumerate(range(0, n, config.pretrain_batch)):
            batch = [source[int(i)] for i in order[start:start + config.pretrain_batch]]
            step_rng = rng.spawn('pretrain', epoch, step)

            def scene_pass(k):
                graph = SceneGraph(batch[k].image, detector)
                loss, _ = detection_loss(graph, batch[k].boxes, step_rng.spawn('scene', k), scale=1.0 / len(batch))
                return loss, graph.gradients()

            results = parallel_map(scene_pass, range(len(batch)), config.threads)
            grads = detector.params.zeros_like()
            for _, scene_grads in results:
                accumulate_grads(grads, scene_grads)
            loss = sum(loss for loss, _ in results) / len(batch)
            if not math.isfinite(loss):
                raise TrainingError(f'source pretraining diverged at epoch {epoch}, step {step}', epoch)
            sgd_step(detector.params, grads, config.lr, config.momentum)
            losses.append(loss)
        report = None
        if _due_for_eval(epoch, config.eval_every, config.pretrain_epochs):
            report = _try_evaluate(source, detector, config)
        l_sup = float(np.mean(losses))
        trace.append(phase='pretrain', epoch=epoch, l_sup=l_sup, l_unsup=0.0, l_fg=0.0, l_bg=0.0, l_total=l_sup,
                     map=None if report is None else report.map, accuracy=None if report is None else report.accuracy)
        logger.info(f'pretrain epoch {epoch}/{config.pretrain_epochs}: l_sup {l_sup:.4f}'
                    + ('' if report is None else f', source mAP {report.map:.3f}, accuracy {report.accuracy:.3f}'))
    return detector, trace

def _due_for_eval(epoch, every, last):
    return epoch == last or (every > 0 and epoch % every == 0)

# pseudo labels

def pseudo_label(scene, detector, delta, nms_iou=0.5):
    '''
    detections scoring >= delta as hard labels
    '''
    detections = propose_and_detect(scene.image, detector, delta, nms_iou)
    return [AnnotatedBox(d.x0, d.y0, d.x1, d.y1, d.class_id, f'{scene.scene_uid}_pseudo_{k}')
            for k, d in enumerate(detections)]

def match_target_objects(boxes, gt_boxes, iou_thr=IOU_THRESHOLD):
    '''
    uid of the highest IoU ground truth object behind each box (None below iou_thr)
    only the provenance experiment reads target annotations
    '''
    if not boxes or not gt_boxes:
        return [None] * len(boxes)
    overlaps = iou_matrix([box_coords(b) for b in boxes], [box_coords(b) for b in gt_boxes])
    uids = []
    for row in overlaps:
        j = int(np.argmax(row))
        uids.append(gt_boxes[j].object_uid if row[j] >= iou_thr else None)
    return uids

# objective

@dataclasses.dataclass
class ObjectiveReport:
    total: float
    # unweighted l_sup, l_unsup, l_fg, l_bg
    components: dict
    counts: dict
    grads: dict
    disc_grads: dict

class SourcePass():
    def __init__(self, graph, loss, instances, background):
        self.graph = graph
        self.loss = loss
        self.instances = instances
        self.background = background

class TargetPass():
    def __init__(self, graph, loss, pseudo, uids, fg, bg):
        self.graph = graph
        self.loss = loss
        self.pseudo = pseudo
        self.uids = uids
        # (g (N, D), head handle) and (bg (D,), head handle), None when unused
        self.fg = fg
        self.bg = bg

def _source_pass(scene, detector, rng, scale, collect_instances):
    graph = SceneGraph(scene.image, detector)
    loss, _ = detection_loss(graph, scene.boxes, rng, scale=scale)
    instances, background = [], None
    if collect_instances:
        valid = [box for box in scene.boxes if poolable(graph.fmap, box)]
        if valid:
            g, _, _ = graph.pool_boxes(valid)
            instances = [ForegroundEntry(np.array(v), int(box.class_id), scene.scene_uid, box.object_uid)
                         for box, v in zip(valid, g) if np.any(v)]
        bg, _, _ = graph.pool_background(scene.boxes)
        background = BackgroundEntry(np.array(bg), scene.scene_uid)
    return SourcePass(graph, loss, instances, background)

def _target_pass(scene, detector, config, rng, needs_uids, n_targets):
    pseudo = pseudo_label(scene, detector, config.delta, config.nms_iou)
    graph = SceneGraph(scene.image, detector)
    loss = 0.0
    if config.lambda_unsup > 0.0:
        loss, _ = detection_loss(graph, pseudo, rng, scale=config.lambda_unsup / n_targets)
    uids = match_target_objects(pseudo, scene.boxes) if needs_uids else [None] * len(pseudo)
    fg = bg = None
    if config.fg_enabled and config.lambda_fg > 0.0 and pseudo:
        g, _, handle = graph.pool_boxes(pseudo)
        fg = (g, handle)
    if config.bg_enabled and config.lambda_bg > 0.0:
        bg_vector, _, handle = graph.pool_background(pseudo)
        bg = (bg_vector, handle)
    return TargetPass(graph, loss, pseudo, uids, fg, bg)

def compute_objective(batch, memory, detector, disc, config, strategy, rng):
    '''
    batch: (source scenes, target scenes)
    returns an ObjectiveReport, grads are the detector gradients of the weighted total and disc_grads
    the discriminator gradients of lambda_bg * L_bg
    '''
    source_scenes, target_scenes = batch
    if not source_scenes:
        raise ArgumentError('an adaptation step needs at least one source scene')
    collect = not strategy.uses_memory
    n_s, n_t = len(source_scenes), len(target_scenes)

    source_passes = parallel_map(
        lambda i: _source_pass(source_scenes[i], detector, rng.spawn('source', i), 1.0 / n_s, collect),
        range(n_s), config.threads)
    target_passes = parallel_map(
        lambda i: _target_pass(target_scenes[i], detector, config, rng.spawn('target', i), strategy.needs_target_uids, n_t),
        range(n_t), config.threads)

    if collect:
        strategy.begin_step([e for p in source_passes for e in p.instances],
                            [p.background for p in source_passes if p.background is not None])

    # foreground alignment
    targets = []
    for ti, tp in enumerate(target_passes):
        if tp.fg is None:
            continue
        g, handle = tp.fg
        for row, (box, uid) in enumerate(zip(tp.pseudo, tp.uids)):
            targets.append((g[row], box.class_id, uid, (ti, handle, row)))
    pairs, skipped_fg = strategy.make_fg_pairs(targets, memory, rng.spawn('negatives'))
    fg_report = loss_fg(pairs, config.alpha)
    buffers = {}
    for pair, grad in zip(pairs, fg_report.grads['target']):
        ti, handle, row = pair.target_ref
        if (ti, handle) not in buffers:
            buffers[(ti, handle)] = np.zeros(target_passes[ti].fg[0].shape, dtype=np.float64)
        buffers[(ti, handle)][row] += grad
    for (ti, handle), grad in sorted(buffers.items()):
        target_passes[ti].graph.backward(handle, grad_g=config.lambda_fg * grad)

    # background alignment
    bg_targets = [(tp.bg[0], (ti, tp.bg[1])) for ti, tp in enumerate(target_passes) if tp.bg is not None]
    partners, skipped_bg = strategy.make_bg_partners(bg_targets, memory)
    bg_report = loss_bg([entry.vector for _, entry, _ in partners], [bg_t for bg_t, _, _ in partners], disc, config.grl_lambda)
    disc_grads = disc.params.zeros_like()
    if bg_report.status == STATUS_OK:
        for (_, _, (ti, handle)), grad in zip(partners, bg_report.grads['target']):
            target_passes[ti].graph.backward(handle, grad_g=config.lambda_bg * grad)
        accumulate_grads(disc_grads, {name: grad for name, grad in bg_report.grads.items() if name != 'target'},
                         config.lambda_bg)

    # single aggregation point, fixed reduction order
    grads = detector.params.zeros_like()
    for scene_grads in parallel_map(lambda p: p.graph.gradients(), source_passes + target_passes, config.threads):
        accumulate_grads(grads, scene_grads)

    components = {'l_sup': float(sum(p.loss for p in source_passes) / n_s),
                  'l_unsup': float(sum(p.loss for p in target_passes) / n_t) if n_t else 0.0,
                  'l_fg': float(fg_report.value),
                  'l_bg': float(bg_report.value)}
    total = (components['l_sup'] + config.lambda_unsup * components['l_unsup']
             + config.lambda_fg * components['l_fg'] + config.lambda_bg * components['l_bg'])
    counts = {'fg_pairs': len(pairs), 'bg_pairs': len(partners), 'skipped_fg': skipped_fg, 'skipped_bg': skipped_bg,
              'pseudo_labels': sum(len(tp.pseudo) for tp in target_passes)}
    return ObjectiveReport(total, components, counts, grads, disc_grads)

# adaptation

def memory_scenes_for(source, strategy, provenance=None):
    '''
    (foreground scenes, background scenes): provenance alignment also needs the variant siblings
    '''
    scenes = list(source)
    if strategy.needs_target_uids and provenance is not None:
        return scenes + list(provenance.siblings), scenes
    return scenes, scenes

def prepare_memory(source, detector, config, strategy, provenance=None, rng=None):
    '''
    build the memory bank over the source split and subsample it as configured
    '''
    fg_scenes, bg_scenes = memory_scenes_for(source, strategy, provenance)
    bank = build_memory(fg_scenes, detector, current_step=0, background_scenes=bg_scenes)
    rng = rng or RngStream(config.seed).spawn('subsample')
    return subsample_bank(bank, config.subsample, config.keep_fg, config.keep_bg, rng)

class AdaptationLoop():
    '''
    holds the mutable state of one adaptation run: detector, discriminator, memory and strategy
    '''
    def __init__(self, source, target, detector, config, memory=None, provenance=None):
        assert isinstance(config, TrainConfig)
        assert isinstance(detector, DetectorParams)

        # parameters
        self.config = config
        self.source = source
        self.target = target
        self.provenance = provenance
        self.rng = RngStream(config.seed).spawn('adapt')

        self.detector = detector.copy()
        self.detector.params.reset_momentum()
        self.disc = DiscriminatorParams.init(self.rng.spawn('init', 'discriminator'), detector.embed_dim)
        self.strategy = load_strategy(config.alignment_mode, config, detector.num_classes, provenance=provenance)
        self.fg_scenes, self.bg_scenes = memory_scenes_for(source, self.strategy, provenance)
        self.memory = None
        if self.strategy.uses_memory:
            self.memory = memory if memory is not None else prepare_memory(
                source, self.detector, config, self.strategy, provenance, self.rng.spawn('subsample'))

    def batches(self, epoch):
        '''
        target scenes in a fresh order each epoch, source scenes cycled alongside
        '''
        config = self.config
        target_order = self.rng.spawn('order', 'target', epoch).permutation(len(self.target))
        source_order = self.rng.spawn('order', 'source', epoch).permutation(len(self.source))
        n_steps = max(1, math.ceil(len(self.target) / config.target_per_step))
        for step in range(n_steps):
            t_idx = target_order[step * config.target_per_step:(step + 1) * config.target_per_step]
            s_idx = [source_order[(step * config.source_per_step + k) % len(self.source)] for k in range(config.source_per_step)]
            yield step, ([self.source[int(i)] for i in s_idx], [self.target[int(i)] for i in t_idx])

    def run_epoch(self, epoch):
        config = self.config
        sums = {'l_sup': 0.0, 'l_unsup': 0.0, 'l_fg': 0.0, 'l_bg': 0.0, 'l_total': 0.0}
        counts = {'fg_pairs': 0, 'bg_pairs': 0, 'skipped_fg': 0, 'skipped_bg': 0, 'pseudo_labels': 0}
        n_steps = 0
        for step, batch in self.batches(epoch):
            report = compute_objective(batch, self.memory, self.detector, self.disc, config, self.strategy,
                                       self.rng.spawn('step', epoch, step))
            if not math.isfinite(report.total):
                raise TrainingError(f'adaptation diverged at epoch {epoch}, step {step}: {report.components}', epoch)
            sgd_step(self.detector.params, report.grads, config.lr, config.momentum)
            sgd_step(self.disc.params, report.disc_grads, config.lr, config.momentum)
            for key, value in report.components.items():
                sums[key] += value
            sums['l_total'] += report.total
            for key, value in report.counts.items():
                counts[key] += value
            n_steps += 1
        self.strategy.end_epoch(epoch)
        if counts['skipped_fg'] or counts['skipped_bg']:
            logger.warning(f'epoch {epoch}: skipped {counts["skipped_fg"]} foreground and {counts["skipped_bg"]} background alignments')
        return {key: value / n_steps for key, value in sums.items()}, counts

    def refresh_memory(self, epoch):
        if self.memory is None:
            return False
        # background scenes are a subset of the foreground scenes
        self.memory, refreshed = refresh(self.memory, self.fg_scenes, self.detector, epoch, self.config.refresh_interval)
        return refreshed

    def run(self, trace=None):
        config = self.config
        trace = trace if trace is not None else MetricsTrace()
        logger.info(f'adapting with {self.strategy.tag} for {config.adapt_epochs} epochs, '
                    f'{len(self.source)} source / {len(self.target)} target scenes, memory {self.memory}')
        for epoch in range(1, config.adapt_epochs + 1):
            losses, counts = self.run_epoch(epoch)
            refreshed = self.refresh_memory(epoch)
            report = None
            if _due_for_eval(epoch, config.eval_every, config.adapt_epochs):
                report = _try_evaluate(self.target, self.detector, config)
            record = trace.append(phase='adapt', epoch=epoch, **losses, **counts,
                                  map=None if report is None else report.map,
                                  accuracy=None if report is None else report.accuracy,
                                  memory_refreshed=int(refreshed))
            logger.info(f'adapt epoch {epoch}/{config.adapt_epochs}: '
                        + ', '.join(f'{k} {v:.4f}' if isinstance(v, float) else f'{k} {v}'
                                    for k, v in record.items() if k not in ('phase', 'epoch') and v is not None))
        return self.detector, trace

def adapt(source, target, detector, config, memory=None, provenance=None, trace=None):
    '''
    returns (adapted detector, trace); the input detector is left untouched
    '''
    if len(target) == 0:
        raise ArgumentError('cannot adapt to an empty target dataset')
    return AdaptationLoop(source, target, detector, config, memory=memory, provenance=provenance).run(trace)
