#!/usr/bin/env python3

'''
VOC style detection metrics: IoU, greedy matching, all-point interpolated AP, mAP and the
matched-ground-truth detection accuracy
'''

import logging
import dataclasses

import numpy as np

from memalign.tools.errors import ArgumentError, EvaluationError

logger = logging.getLogger(__name__)

IOU_THRESHOLD = 0.5

def box_coords(box):
    '''
    (x0, y0, x1, y1) of anything box like: a 4-sequence or an object with coords()
    '''
    if hasattr(box, 'coords'):
        return box.coords()
    return tuple(box[:4])

def iou(a, b):
    a, b = box_coords(a), box_coords(b)
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    if union <= 0.0:
        return 0.0
    return float(inter / union)

def iou_matrix(a, b):
    '''
    pairwise IoU of (N, 4) and (M, 4) box arrays -> (N, M)
    '''
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix = np.clip(np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0.0, None)
    iy = np.clip(np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0.0, None)
    inter = ix * iy
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0.0, inter / np.where(union > 0.0, union, 1.0), 0.0)

def match_detections(dets, gts, iou_thr=IOU_THRESHOLD):
    '''
    greedy VOC matching: in descending score order each detection takes the highest-IoU unmatched
    ground truth of its class with IoU >= iou_thr (TP), otherwise it is a FP
    returns one boolean per detection
    '''
    scores = [d.score for d in dets]
    if any(scores[i] < scores[i + 1] for i in range(len(scores) - 1)):
        raise ArgumentError('detections must be sorted by descending score')
    matched = [False] * len(gts)
    flags = []
    for det in dets:
        best_iou, best_index = iou_thr, None
        for j, gt in enumerate(gts):
            if matched[j] or gt.class_id != det.class_id:
                continue
            overlap = iou(det, gt)
            if overlap >= best_iou and (best_index is None or overlap > best_iou):
                best_iou, best_index = overlap, j
        if best_index is None:
            flags.append(False)
        else:
            matched[best_index] = True
            flags.append(True)
    return flags

def average_precision(flags, scores, n_gt):
    '''
    all-point interpolated area under the precision/recall curve
    returns None (undefined) when there is no ground truth
    '''
    if n_gt < 0:
        raise ArgumentError(f'n_gt must be >= 0, got {n_gt}')
    if n_gt == 0:
        return None
    if len(flags) == 0:
        return 0.0
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind='stable')
    tp_flags = np.asarray(flags, dtype=np.float64)[order]
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(1.0 - tp_flags)
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, np.finfo(np.float64).eps)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    # precision envelope, monotone non-increasing
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    changes = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[changes + 1] - mrec[changes]) * mpre[changes + 1]))

def mean_ap(per_class_aps):
    '''
    arithmetic mean over classes with a defined AP
    '''
    values = [ap for ap in per_class_aps.values() if ap is not None]
    if not values:
        raise EvaluationError('no class has a defined AP, mAP is undefined')
    return float(np.mean(values))

def detection_accuracy(dets_per_scene, gts_per_scene, iou_thr=IOU_THRESHOLD):
    '''
    fraction of ground truth boxes matched by a correct-class detection at IoU >= iou_thr
    '''
    n_gt = sum(len(gts) for gts in gts_per_scene)
    if n_gt == 0:
        raise EvaluationError('detection accuracy is undefined without ground truth')
    matched = 0
    for dets, gts in zip(dets_per_scene, gts_per_scene):
        matched += sum(match_detections(sorted_by_score(dets), gts, iou_thr))
    return matched / n_gt

def sorted_by_score(dets):
    return sorted(dets, key=lambda d: -d.score)

@dataclasses.dataclass
class EvalReport:
    per_class_ap: dict
    map: float
    accuracy: float
    tp: int
    fp: int
    fn: int
    n_gt: int
    undefined_classes: list = dataclasses.field(default_factory=list)

    def as_row(self):
        row = {'map': self.map, 'accuracy': self.accuracy, 'tp': self.tp, 'fp': self.fp, 'fn': self.fn, 'n_gt': self.n_gt}
        for class_id in sorted(self.per_class_ap):
            ap = self.per_class_ap[class_id]
            row[f'ap_{class_id}'] = '' if ap is None else ap
        return row

def evaluate(dets_per_scene, gts_per_scene, num_classes, iou_thr=IOU_THRESHOLD, accuracy_score_threshold=0.5):
    '''
    per-class AP, mAP and accuracy over a set of scenes
    detection accuracy only counts detections scoring >= accuracy_score_threshold
    '''
    if len(dets_per_scene) != len(gts_per_scene):
        raise ArgumentError(f'{len(dets_per_scene)} detection lists for {len(gts_per_scene)} scenes')
    flags_by_class = {c: [] for c in range(num_classes)}
    scores_by_class = {c: [] for c in range(num_classes)}
    n_gt_by_class = {c: 0 for c in range(num_classes)}
    tp = fp = 0
    for dets, gts in zip(dets_per_scene, gts_per_scene):
        dets = sorted_by_score(dets)
        flags = match_detections(dets, gts, iou_thr)
        for det, flag in zip(dets, flags):
            flags_by_class[det.class_id].append(flag)
            scores_by_class[det.class_id].append(det.score)
        tp += sum(flags)
        fp += len(flags) - sum(flags)
        for gt in gts:
            n_gt_by_class[gt.class_id] += 1
    per_class_ap = {c: average_precision(flags_by_class[c], scores_by_class[c], n_gt_by_class[c]) for c in range(num_classes)}
    undefined = [c for c, ap in per_class_ap.items() if ap is None]
    if undefined:
        logger.warning(f'classes {undefined} have no ground truth, excluded from mAP')
    n_gt = sum(n_gt_by_class.values())
    confident = [[d for d in dets if d.score >= accuracy_score_threshold] for dets in dets_per_scene]
    return EvalReport(per_class_ap=per_class_ap, map=mean_ap(per_class_ap),
                      accuracy=detection_accuracy(confident, gts_per_scene, iou_thr),
                      tp=tp, fp=fp, fn=n_gt - tp, n_gt=n_gt, undefined_classes=undefined)
