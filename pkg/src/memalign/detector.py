#!/usr/bin/env python3

'''
toy anchor-grid detector: a two layer patch embedding backbone, bilinear box pooling, background
masking with adaptive pooling, a shared detection head that emits both the D dim embedding g
(penultimate activation) and C+1 class logits, NMS and confidence filtering

every layer has an analytic backward, SceneGraph ties them together so that several pooled heads
on one image (anchor windows, object boxes, the background) share a single backbone pass
'''

import logging
import dataclasses

from pathlib import Path

import numpy as np

from memalign.numerics import (DTYPE, ParamSet, affine_forward, affine_backward, relu_forward, relu_backward,
                               softmax, softmax_cross_entropy, im2col, accumulate_grads, check_finite)
from memalign.evaluation import iou, iou_matrix, box_coords
from memalign.tools.params import build_dataclass, SCHEMA_VERSION
from memalign.tools.errors import ArgumentError, DimensionError, DegenerateBoxError, DatasetIOError, IntegrityError, UsageError
from memalign.tools import artifact_io

logger = logging.getLogger(__name__)

EXTRACTOR_LAYERS = ('extractor/embed', 'extractor/mix')
HEAD_LAYERS = ('head/fc1', 'head/fc2', 'head/cls')

@dataclasses.dataclass
class DetectorGeometry:
    num_classes: int = 3
    image_size: int = 64
    patch: int = 8
    feature_stride: int = 4
    extractor_hidden: int = 32
    channels: int = 16
    pool_size: int = 7
    head_hidden: int = 128
    embed_dim: int = 64
    anchor_windows: tuple = (16, 32)
    anchor_strides: tuple = (4, 8)

    def __post_init__(self):
        self.anchor_windows = tuple(int(w) for w in self.anchor_windows)
        self.anchor_strides = tuple(int(s) for s in self.anchor_strides)
        if self.num_classes < 1:
            raise ArgumentError(f'num_classes must be >= 1, got {self.num_classes}')
        if len(self.anchor_windows) != len(self.anchor_strides):
            raise ArgumentError('anchor_windows and anchor_strides must have the same length')
        if self.feature_size < self.pool_size:
            raise DimensionError(f'a {self.image_size} px image gives a {self.feature_size}x{self.feature_size} feature map, '
                                 f'smaller than the {self.pool_size}x{self.pool_size} pool')

    @property
    def feature_size(self):
        return (self.image_size - self.patch) // self.feature_stride + 1

    @property
    def feature_offset(self):
        # image x of feature coordinate 0, cell i is centred on image x = offset + stride * (i + 0.5)
        return (self.patch - self.feature_stride) / 2.0

    @property
    def background_class(self):
        return self.num_classes

    def layer_shapes(self):
        pooled = self.pool_size * self.pool_size * self.channels
        return {'extractor/embed': (self.patch * self.patch * 3, self.extractor_hidden),
                'extractor/mix': (self.extractor_hidden, self.channels),
                'head/fc1': (pooled, self.head_hidden),
                'head/fc2': (self.head_hidden, self.embed_dim),
                'head/cls': (self.embed_dim, self.num_classes + 1)}

    def as_dict(self):
        d = dataclasses.asdict(self)
        d['anchor_windows'] = list(self.anchor_windows)
        d['anchor_strides'] = list(self.anchor_strides)
        return d

class DetectorParams():
    '''
    backbone (theta) and head (psi) weights in one ParamSet plus the geometry they were built for
    '''
    def __init__(self, params, geometry):
        assert isinstance(params, ParamSet)
        assert isinstance(geometry, DetectorGeometry)
        for layer, (fan_in, fan_out) in geometry.layer_shapes().items():
            if params[f'{layer}/w'].shape != (fan_in, fan_out) or params[f'{layer}/b'].shape != (fan_out,):
                raise DimensionError(f'layer {layer} does not match the detector geometry')
        self.params = params
        self.geometry = geometry
        self._anchors = None

    @classmethod
    def init(cls, rng, num_classes=None, geometry=None):
        '''
        He initialisation of every affine layer, zero biases
        '''
        geometry = geometry or DetectorGeometry()
        if num_classes is not None and num_classes != geometry.num_classes:
            geometry = dataclasses.replace(geometry, num_classes=num_classes)
        params = ParamSet()
        for layer, (fan_in, fan_out) in geometry.layer_shapes().items():
            params.add(f'{layer}/w', rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)).astype(DTYPE))
            params.add(f'{layer}/b', np.zeros(fan_out, dtype=DTYPE))
        return cls(params, geometry)

    @property
    def num_classes(self):
        return self.geometry.num_classes

    @property
    def embed_dim(self):
        return self.geometry.embed_dim

    def copy(self):
        return DetectorParams(self.params.copy(), self.geometry)

    def astype(self, dtype):
        return DetectorParams(self.params.astype(dtype), self.geometry)

    def content_hash(self):
        return self.params.content_hash()

    def anchors(self):
        if self._anchors is None:
            self._anchors = anchor_windows(self.geometry.image_size, self.geometry.anchor_windows, self.geometry.anchor_strides)
        return self._anchors

@dataclasses.dataclass
class FeatureMap:
    tensor: np.ndarray
    # image coordinate x maps to feature coordinate (x - offset) / stride
    stride: float = 1.0
    offset: float = 0.0

    @property
    def height(self):
        return self.tensor.shape[0]

    @property
    def width(self):
        return self.tensor.shape[1]

    @property
    def channels(self):
        return self.tensor.shape[2]

    def to_feature_coords(self, box):
        x0, y0, x1, y1 = box_coords(box)
        return ((x0 - self.offset) / self.stride, (y0 - self.offset) / self.stride,
                (x1 - self.offset) / self.stride, (y1 - self.offset) / self.stride)

    def cell_centres(self):
        '''
        image coordinates of the cell centres along x (columns) and y (rows)
        '''
        xs = self.offset + self.stride * (np.arange(self.width) + 0.5)
        ys = self.offset + self.stride * (np.arange(self.height) + 0.5)
        return xs, ys

@dataclasses.dataclass
class Detection:
    x0: float
    y0: float
    x1: float
    y1: float
    class_id: int
    score: float

    def coords(self):
        return (self.x0, self.y0, self.x1, self.y1)

# backbone

class ExtractorCache():
    def __init__(self, grid_shape, embed_cache, embed_relu, mix_cache, mix_relu):
        self.grid_shape = grid_shape
        self.embed_cache = embed_cache
        self.embed_relu = embed_relu
        self.mix_cache = mix_cache
        self.mix_relu = mix_relu

def extract_features_forward(image, detector):
    geometry = detector.geometry
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DimensionError(f'expected a (H, W, 3) image, got shape {image.shape}')
    params = detector.params
    dtype = params['extractor/embed/w'].dtype
    patches = im2col(image.astype(dtype), geometry.patch, geometry.feature_stride)
    grid_shape = patches.shape[:2]
    x = patches.reshape(-1, patches.shape[2])
    h, embed_cache = affine_forward(x, params['extractor/embed/w'], params['extractor/embed/b'])
    h, embed_relu = relu_forward(h)
    f, mix_cache = affine_forward(h, params['extractor/mix/w'], params['extractor/mix/b'])
    f, mix_relu = relu_forward(f)
    fmap = FeatureMap(f.reshape(grid_shape[0], grid_shape[1], -1), float(geometry.feature_stride), geometry.feature_offset)
    return fmap, ExtractorCache(grid_shape, embed_cache, embed_relu, mix_cache, mix_relu)

def extract_features(image, detector):
    return extract_features_forward(image, detector)[0]

def extract_features_backward(grad_tensor, cache):
    '''
    gradient of the feature map -> gradients of the extractor parameters
    '''
    if not isinstance(cache, ExtractorCache):
        raise UsageError('extract_features_backward called without an extractor cache')
    grad = grad_tensor.reshape(-1, grad_tensor.shape[-1])
    grad = relu_backward(grad, cache.mix_relu)
    grad, gw_mix, gb_mix = affine_backward(grad, cache.mix_cache)
    grad = relu_backward(grad, cache.embed_relu)
    _, gw_embed, gb_embed = affine_backward(grad, cache.embed_cache)
    return {'extractor/embed/w': gw_embed, 'extractor/embed/b': gb_embed,
            'extractor/mix/w': gw_mix, 'extractor/mix/b': gb_mix}

# pooling

def _interpolation_matrices(lo, hi, n_cells, pool_size, dtype):
    '''
    (N, P, n_cells) bilinear weights sampling P bin centres between lo and hi (feature coordinates)
    cell i is centred on i + 0.5, samples outside the centre range clamp to the border cells
    '''
    n = lo.shape[0]
    samples = lo[:, None] + (np.arange(pool_size)[None, :] + 0.5) * (hi - lo)[:, None] / pool_size
    t = np.clip(samples - 0.5, 0.0, n_cells - 1)
    i0 = np.minimum(np.floor(t).astype(np.int64), n_cells - 1)
    i1 = np.minimum(i0 + 1, n_cells - 1)
    frac = t - i0
    matrices = np.zeros((n, pool_size, n_cells), dtype=dtype)
    box_index = np.repeat(np.arange(n), pool_size)
    bin_index = np.tile(np.arange(pool_size), n)
    np.add.at(matrices, (box_index, bin_index, i0.reshape(-1)), (1.0 - frac).reshape(-1).astype(dtype))
    np.add.at(matrices, (box_index, bin_index, i1.reshape(-1)), frac.reshape(-1).astype(dtype))
    return matrices

def box_pool_forward(fmap, boxes, pool_size=7):
    '''
    bilinear resampling of every box region onto a pool_size x pool_size grid
    boxes are in image coordinates, returns (N, P, P, C) and the cache for box_pool_backward
    '''
    coords = np.array([fmap.to_feature_coords(b) for b in boxes], dtype=np.float64).reshape(-1, 4)
    widths, heights = coords[:, 2] - coords[:, 0], coords[:, 3] - coords[:, 1]
    degenerate = np.nonzero((widths < 1.0) | (heights < 1.0))[0]
    if degenerate.size:
        k = int(degenerate[0])
        raise DegenerateBoxError(f'box {box_coords(boxes[k])} covers {widths[k]:.2f}x{heights[k]:.2f} feature cells, at least 1x1 is required')
    dtype = fmap.tensor.dtype
    rows = _interpolation_matrices(coords[:, 1], coords[:, 3], fmap.height, pool_size, dtype)
    cols = _interpolation_matrices(coords[:, 0], coords[:, 2], fmap.width, pool_size, dtype)
    pooled = np.einsum('nph,nqw,hwc->npqc', rows, cols, fmap.tensor)
    return pooled, (rows, cols)

def box_pool(fmap, box, pool_size=7):
    return box_pool_forward(fmap, [box], pool_size)[0][0]

def box_pool_many(fmap, boxes, pool_size=7):
    return box_pool_forward(fmap, boxes, pool_size)[0]

def box_pool_backward(grad_pooled, cache):
    rows, cols = cache
    return np.einsum('nph,nqw,npqc->hwc', rows, cols, grad_pooled)

def poolable(fmap, box):
    u0, v0, u1, v1 = fmap.to_feature_coords(box)
    return u1 - u0 >= 1.0 and v1 - v0 >= 1.0

def background_keep_mask(fmap, boxes):
    '''
    (H', W') boolean, False on cells whose centre lies inside any box (union, never double counted)
    '''
    xs, ys = fmap.cell_centres()
    covered = np.zeros((fmap.height, fmap.width), dtype=bool)
    for box in boxes:
        x0, y0, x1, y1 = box_coords(box)
        covered |= ((ys >= y0) & (ys < y1))[:, None] & ((xs >= x0) & (xs < x1))[None, :]
    return ~covered

def mask_background(fmap, boxes):
    '''
    masked_feat = f * (1 - mask), mask being the union of the boxes at cell centre granularity
    '''
    keep = background_keep_mask(fmap, boxes)
    return FeatureMap(np.where(keep[..., None], fmap.tensor, np.zeros((), dtype=fmap.tensor.dtype)), fmap.stride, fmap.offset)

def adaptive_pool_matrix(n_in, n_out, dtype=DTYPE):
    '''
    (n_out, n_in) averaging matrix, bin i spans [floor(i n_in / n_out), ceil((i + 1) n_in / n_out))
    '''
    matrix = np.zeros((n_out, n_in), dtype=dtype)
    for i in range(n_out):
        start = (i * n_in) // n_out
        end = -((-(i + 1) * n_in) // n_out)
        matrix[i, start:end] = 1.0 / (end - start)
    return matrix

def adaptive_pool_forward(tensor, out=(7, 7)):
    if isinstance(tensor, FeatureMap):
        tensor = tensor.tensor
    height, width = tensor.shape[:2]
    if height < out[0] or width < out[1]:
        raise DimensionError(f'cannot adaptive-pool a {height}x{width} map to {out[0]}x{out[1]}')
    rows = adaptive_pool_matrix(height, out[0], tensor.dtype)
    cols = adaptive_pool_matrix(width, out[1], tensor.dtype)
    return np.einsum('ih,jw,hwc->ijc', rows, cols, tensor), (rows, cols)

def adaptive_pool(tensor, out=(7, 7)):
    return adaptive_pool_forward(tensor, out)[0]

def adaptive_pool_backward(grad_pooled, cache):
    rows, cols = cache
    return np.einsum('ih,jw,ijc->hwc', rows, cols, grad_pooled)

# detection head

class HeadCache():
    def __init__(self, input_shape, caches, relus):
        self.input_shape = input_shape
        self.caches = caches
        self.relus = relus

def det_head_forward(pooled, detector):
    '''
    pooled (P, P, C) or (N, P, P, C) -> g (.., D), logits (.., C + 1) and the backward cache
    '''
    geometry = detector.geometry
    expected = (geometry.pool_size, geometry.pool_size, geometry.channels)
    if pooled.shape[-3:] != expected:
        raise DimensionError(f'detection head expects pooled features of shape {expected}, got {pooled.shape[-3:]}')
    params = detector.params
    x = pooled.reshape(-1, int(np.prod(expected)))
    h, fc1_cache = affine_forward(x, params['head/fc1/w'], params['head/fc1/b'])
    h, fc1_relu = relu_forward(h)
    g, fc2_cache = affine_forward(h, params['head/fc2/w'], params['head/fc2/b'])
    g, fc2_relu = relu_forward(g)
    logits, cls_cache = affine_forward(g, params['head/cls/w'], params['head/cls/b'])
    cache = HeadCache(pooled.shape, (fc1_cache, fc2_cache, cls_cache), (fc1_relu, fc2_relu))
    if pooled.ndim == 3:
        return g[0], logits[0], cache
    return g, logits, cache

def det_head(pooled, detector):
    g, logits, _ = det_head_forward(pooled, detector)
    return g, logits

def det_head_backward(grad_g, grad_logits, cache):
    '''
    either gradient may be None, returns (grad_pooled, head parameter gradients)
    '''
    if not isinstance(cache, HeadCache):
        raise UsageError('det_head_backward called without a head cache')
    fc1_cache, fc2_cache, cls_cache = cache.caches
    fc1_relu, fc2_relu = cache.relus
    n = fc2_relu.shape[0]
    dtype = fc2_relu.dtype
    grad_at_g = np.zeros((n, fc2_relu.shape[1]), dtype=dtype)
    grads = {}
    if grad_logits is not None:
        grad_logits = np.asarray(grad_logits, dtype=dtype).reshape(n, -1)
        grad_from_logits, grads['head/cls/w'], grads['head/cls/b'] = affine_backward(grad_logits, cls_cache)
        grad_at_g += grad_from_logits
    else:
        grads['head/cls/w'] = np.zeros_like(cls_cache.w)
        grads['head/cls/b'] = np.zeros(cls_cache.w.shape[1], dtype=dtype)
    if grad_g is not None:
        grad_at_g += np.asarray(grad_g, dtype=dtype).reshape(n, -1)
    grad = relu_backward(grad_at_g, fc2_relu)
    grad, grads['head/fc2/w'], grads['head/fc2/b'] = affine_backward(grad, fc2_cache)
    grad = relu_backward(grad, fc1_relu)
    grad, grads['head/fc1/w'], grads['head/fc1/b'] = affine_backward(grad, fc1_cache)
    return grad.reshape(cache.input_shape), grads

class SceneGraph():
    '''
    one backbone pass over an image with any number of pooled heads on top

    every backward() adds into the feature map gradient, gradients() pushes it through the backbone
    once and returns a complete gradient dict (every parameter name, zeros where untouched)
    '''
    def __init__(self, image, detector):
        self.detector = detector
        self.fmap, self.extract_cache = extract_features_forward(image, detector)
        self.grad_tensor = np.zeros_like(self.fmap.tensor)
        self.head_grads = {}
        self.caches = []

    def pool_boxes(self, boxes):
        '''
        returns (g (N, D), logits (N, C + 1), handle)
        '''
        pooled, pool_cache = box_pool_forward(self.fmap, boxes, self.detector.geometry.pool_size)
        g, logits, head_cache = det_head_forward(pooled, self.detector)
        self.caches.append(('boxes', pool_cache, head_cache))
        return g, logits, len(self.caches) - 1

    def pool_background(self, boxes):
        '''
        returns (bg (D,), logits (C + 1,), handle) for the map with every box masked out
        '''
        size = self.detector.geometry.pool_size
        keep = background_keep_mask(self.fmap, boxes)
        masked = np.where(keep[..., None], self.fmap.tensor, np.zeros((), dtype=self.fmap.tensor.dtype))
        pooled, pool_cache = adaptive_pool_forward(masked, (size, size))
        g, logits, head_cache = det_head_forward(pooled, self.detector)
        self.caches.append(('background', (keep, pool_cache), head_cache))
        return g, logits, len(self.caches) - 1

    def backward(self, handle, grad_g=None, grad_logits=None):
        kind, pool_cache, head_cache = self.caches[handle]
        grad_pooled, grads = det_head_backward(grad_g, grad_logits, head_cache)
        accumulate_grads(self.head_grads, grads)
        if kind == 'boxes':
            self.grad_tensor += box_pool_backward(grad_pooled, pool_cache)
        else:
            keep, cache = pool_cache
            self.grad_tensor += adaptive_pool_backward(grad_pooled, cache) * keep[..., None]

    def gradients(self):
        grads = self.detector.params.zeros_like()
        accumulate_grads(grads, self.head_grads)
        accumulate_grads(grads, extract_features_backward(self.grad_tensor, self.extract_cache))
        return grads

# anchors, scoring and NMS

def anchor_windows(image_size, windows=(16, 32), strides=(4, 8)):
    '''
    (N, 4) dense grid of square windows inside the image, window by window in row major order
    '''
    anchors = []
    for window, stride in zip(windows, strides):
        if window > image_size:
            continue
        starts = np.arange(0, image_size - window + 1, stride, dtype=np.float64)
        for y in starts:
            for x in starts:
                anchors.append((x, y, x + window, y + window))
    if not anchors:
        raise ArgumentError(f'no anchor window fits a {image_size} px image')
    return np.array(anchors, dtype=np.float64)

def score_windows(image, detector):
    '''
    softmax over C + 1 classes for every anchor window -> (anchors (N, 4), probabilities (N, C + 1))
    '''
    anchors = detector.anchors()
    fmap = extract_features(image, detector)
    pooled = box_pool_many(fmap, anchors, detector.geometry.pool_size)
    _, logits = det_head(pooled, detector)
    return anchors, softmax(logits.astype(np.float64))

def nms(dets, iou_threshold=0.5):
    '''
    greedy per class suppression in descending score order, ties broken by lower box coordinates
    then insertion order; kept detections have pairwise same-class IoU < iou_threshold
    '''
    if not 0.0 <= iou_threshold <= 1.0:
        raise ArgumentError(f'iou_threshold must be in [0, 1], got {iou_threshold}')
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].x0, dets[i].y0, dets[i].x1, dets[i].y1, i))
    kept = []
    for i in order:
        det = dets[i]
        if all(other.class_id != det.class_id or iou(det, other) < iou_threshold for other in kept):
            kept.append(det)
    return kept

def propose_and_detect(image, detector, delta, nms_iou=0.5, max_detections=None):
    '''
    score every anchor, drop windows whose argmax is background, per class NMS, keep score >= delta
    max_detections caps the output in score order, None keeps every surviving detection
    '''
    if not 0.0 <= delta <= 1.0:
        raise ArgumentError(f'confidence threshold must be in [0, 1], got {delta}')
    anchors, probs = score_windows(image, detector)
    background = detector.geometry.background_class
    object_probs = probs[:, :background]
    classes = np.argmax(object_probs, axis=1)
    scores = object_probs[np.arange(len(anchors)), classes]
    foreground = np.argmax(probs, axis=1) != background
    candidates = [Detection(*(float(v) for v in anchors[i]), class_id=int(classes[i]), score=float(scores[i]))
                  for i in np.nonzero(foreground)[0]]
    kept = [det for det in nms(candidates, nms_iou) if det.score >= delta]
    return kept if max_detections is None else kept[:max_detections]

# training loss shared by source supervision and target pseudo labels

def assign_anchors(anchors, gt_boxes, background_class, pos_iou=0.5, neg_iou=0.3):
    '''
    positive: IoU >= pos_iou with a gt, plus the best anchor of every gt; negative: max IoU < neg_iou
    returns (positive indices, their labels, negative candidate indices)
    '''
    if len(gt_boxes) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.arange(len(anchors))
    overlaps = iou_matrix(anchors, [box_coords(b) for b in gt_boxes])
    best_gt = np.argmax(overlaps, axis=1)
    best_overlap = overlaps[np.arange(len(anchors)), best_gt]
    positive = best_overlap >= pos_iou
    labels = np.array([gt_boxes[j].class_id for j in best_gt], dtype=np.int64)
    for j in range(len(gt_boxes)):
        a = int(np.argmax(overlaps[:, j]))
        positive[a] = True
        labels[a] = gt_boxes[j].class_id
    if np.any(labels[positive] >= background_class):
        raise ArgumentError('ground truth class index collides with the background class')
    positives = np.nonzero(positive)[0]
    negatives = np.nonzero(~positive & (best_overlap < neg_iou))[0]
    return positives, labels[positives], negatives

def detection_loss(graph, gt_boxes, rng, scale=1.0, pos_iou=0.5, neg_iou=0.3, neg_ratio=3):
    '''
    anchor classification cross entropy on one scene graph, negatives sampled neg_ratio:1 with rng
    back-propagates scale * gradient into the graph and returns (loss, number of windows)
    a scene without boxes contributes nothing
    '''
    detector = graph.detector
    anchors = detector.anchors()
    positives, labels, negatives = assign_anchors(anchors, gt_boxes, detector.geometry.background_class, pos_iou, neg_iou)
    if positives.size == 0:
        return 0.0, 0
    n_neg = min(neg_ratio * positives.size, negatives.size)
    if n_neg:
        negatives = np.sort(rng.choice(negatives, size=n_neg, replace=False))
    else:
        negatives = negatives[:0]
    selected = np.concatenate([positives, negatives])
    targets = np.concatenate([labels, np.full(negatives.size, detector.geometry.background_class, dtype=np.int64)])
    _, logits, handle = graph.pool_boxes(anchors[selected])
    loss, grad_logits = softmax_cross_entropy(logits, targets)
    check_finite(np.asarray(loss), 'detection loss')
    if scale != 0.0:
        graph.backward(handle, grad_logits=scale * grad_logits)
    return loss, int(selected.size)

def detection_loss_and_grads(image, gt_boxes, detector, rng):
    graph = SceneGraph(image, detector)
    loss, n_windows = detection_loss(graph, gt_boxes, rng)
    return loss, graph.gradients(), n_windows

# persistence: detector.npz with the weights, detector.json (sealed) with geometry and weight hash

def save_detector(detector, out_dir, name='detector'):
    out_dir = Path(out_dir)
    artifact_io.write_bytes(out_dir / f'{name}.npz', detector.params.to_npz_bytes())
    header = {'schema_version': SCHEMA_VERSION, 'geometry': detector.geometry.as_dict(),
              'params_hash': detector.content_hash()}
    artifact_io.write_json(out_dir / f'{name}.json', header, sealed=True)
    logger.info(f'saved detector {detector.content_hash()[:12]} to {out_dir}')
    return header

def load_detector(in_dir, name='detector'):
    in_dir = Path(in_dir)
    header = artifact_io.read_json(in_dir / f'{name}.json', sealed=True)
    geometry = build_dataclass(DetectorGeometry, header['geometry'], 'detector geometry')
    weights_path = in_dir / f'{name}.npz'
    if not weights_path.is_file():
        raise DatasetIOError('detector weights not found', weights_path)
    detector = DetectorParams(ParamSet.from_npz(weights_path), geometry)
    if detector.content_hash() != header['params_hash']:
        raise IntegrityError('detector weights do not match their header hash', weights_path)
    return detector
