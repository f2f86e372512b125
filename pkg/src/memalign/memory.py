#!/usr/bin/env python3

'''
foreground memory (pooled features of every labelled source box, indexed per class) and background
memory (one masked and adaptive-pooled feature per source scene), periodic refresh with the current
weights, coreset / random subsampling and the memory.json + memory.f32 snapshot
'''

import logging
import dataclasses

from pathlib import Path

import numpy as np

from sklearn.metrics import pairwise_distances

from memalign.detector import DetectorParams, extract_features, box_pool_many, poolable, det_head, mask_background, adaptive_pool
from memalign.tools.common import sha256_of_bytes
from memalign.tools.errors import ArgumentError, DimensionError, DatasetIOError, IntegrityError
from memalign.tools.params import SCHEMA_VERSION
from memalign.tools import artifact_io

logger = logging.getLogger(__name__)

SUBSAMPLE_METHODS = ('none', 'coreset', 'random')

@dataclasses.dataclass(frozen=True, eq=False)
class ForegroundEntry:
    g: np.ndarray
    class_id: int
    scene_uid: str
    object_uid: str

    @property
    def uid(self):
        return self.object_uid

    @property
    def vector(self):
        return self.g

@dataclasses.dataclass(frozen=True, eq=False)
class BackgroundEntry:
    bg: np.ndarray
    scene_uid: str

    @property
    def uid(self):
        return self.scene_uid

    @property
    def vector(self):
        return self.bg

class MemoryBank():
    '''
    immutable between refreshes: refresh and subsampling return a new bank

    fg holds one uid-sorted tuple per class 0..C-1, bg one uid-sorted tuple; retrieval scans the
    cached row-normalized matrices so that argmax ties resolve to the lowest uid
    '''
    def __init__(self, fg, bg, num_classes, built_at=0, extractor_hash=''):
        self.num_classes = int(num_classes)
        self.fg = {}
        seen = set()
        for class_id in range(self.num_classes):
            entries = tuple(sorted(fg.get(class_id, ()), key=lambda e: e.uid))
            for entry in entries:
                if entry.class_id != class_id:
                    raise ArgumentError(f'entry {entry.uid} of class {entry.class_id} filed under class {class_id}')
                if (entry.scene_uid, entry.object_uid) in seen:
                    raise ArgumentError(f'duplicated memory entry {entry.uid}')
                seen.add((entry.scene_uid, entry.object_uid))
            self.fg[class_id] = entries
        unknown = set(fg) - set(range(self.num_classes))
        if unknown:
            raise ArgumentError(f'foreground entries for classes {sorted(unknown)} outside [0, {self.num_classes})')
        self.bg = tuple(sorted(bg, key=lambda e: e.uid))
        if len({e.uid for e in self.bg}) != len(self.bg):
            raise ArgumentError('duplicated background memory entry')
        self.built_at = int(built_at)
        self.extractor_hash = extractor_hash
        dims = {e.vector.shape for e in self.all_entries()}
        if len(dims) > 1:
            raise DimensionError(f'memory entries have mixed shapes {sorted(dims)}')
        self.dim = dims.pop()[0] if dims else 0
        self._matrices = {}
        self._fg_by_uid = {e.object_uid: e for e in self.all_fg()}

    def fg_entries(self, class_id):
        return self.fg.get(class_id, ())

    def all_fg(self):
        return [entry for class_id in range(self.num_classes) for entry in self.fg[class_id]]

    def all_entries(self):
        return self.all_fg() + list(self.bg)

    def fg_count(self):
        return sum(len(entries) for entries in self.fg.values())

    def counts(self):
        return {'fg': self.fg_count(), 'bg': len(self.bg),
                'per_class': {class_id: len(self.fg[class_id]) for class_id in range(self.num_classes)}}

    def fg_by_uid(self, object_uid):
        return self._fg_by_uid.get(object_uid)

    def uids(self):
        return sorted(e.uid for e in self.all_fg()), sorted(e.uid for e in self.bg)

    def normalized_matrix(self, key):
        '''
        key is a class id or 'bg'; returns (entries, unit rows (n, D) float64, nonzero row flags)
        '''
        if key not in self._matrices:
            entries = self.bg if key == 'bg' else self.fg_entries(key)
            if entries:
                matrix = np.stack([e.vector for e in entries]).astype(np.float64)
            else:
                matrix = np.zeros((0, self.dim))
            norms = np.linalg.norm(matrix, axis=1)
            valid = norms > 0.0
            unit = np.divide(matrix, norms[:, None], out=np.zeros_like(matrix), where=valid[:, None])
            self._matrices[key] = (entries, unit, valid)
        return self._matrices[key]

    def __repr__(self):
        return f'MemoryBank(fg={self.fg_count()}, bg={len(self.bg)}, built_at={self.built_at}, extractor={self.extractor_hash[:12]})'

def scene_features(scene, detector):
    '''
    per scene foreground features of its non degenerate boxes and its masked background feature
    '''
    fmap = extract_features(scene.image, detector)
    valid = [box for box in scene.boxes if poolable(fmap, box)]
    g = np.zeros((0, detector.embed_dim), dtype=fmap.tensor.dtype)
    if valid:
        g, _ = det_head(box_pool_many(fmap, valid, detector.geometry.pool_size), detector)
    size = detector.geometry.pool_size
    bg, _ = det_head(adaptive_pool(mask_background(fmap, scene.boxes), (size, size)), detector)
    return valid, g, bg

def build_foreground_memory(scenes, detector):
    '''
    one entry per poolable labelled box, g = det_head(box_pool(extract_features(x), b))
    all-zero embeddings are kept, retrieval never selects them
    '''
    assert isinstance(detector, DetectorParams)
    entries = {class_id: [] for class_id in range(detector.num_classes)}
    n_boxes = degenerate = 0
    for scene in scenes:
        n_boxes += len(scene.boxes)
        valid, g, _ = scene_features(scene, detector)
        degenerate += len(scene.boxes) - len(valid)
        for box, vector in zip(valid, g):
            entries[box.class_id].append(ForegroundEntry(np.array(vector), int(box.class_id), scene.scene_uid, box.object_uid))
    if degenerate:
        logger.warning(f'foreground memory: skipped {degenerate} degenerate boxes out of {n_boxes}')
    logger.info(f'foreground memory: {sum(len(e) for e in entries.values())} entries '
                f'({", ".join(f"class {c}: {len(e)}" for c, e in entries.items())})')
    return entries

def build_background_memory(scenes, detector):
    '''
    one entry per scene, bg = det_head(adaptive_pool(mask_background(fmap, boxes)))
    '''
    assert isinstance(detector, DetectorParams)
    entries = []
    for scene in scenes:
        _, _, bg = scene_features(scene, detector)
        entries.append(BackgroundEntry(np.array(bg), scene.scene_uid))
    logger.info(f'background memory: {len(entries)} entries')
    return entries

def build_memory(scenes, detector, current_step=0, background_scenes=None):
    '''
    background_scenes defaults to the foreground scenes
    '''
    scenes = list(scenes)
    background_scenes = scenes if background_scenes is None else list(background_scenes)
    return MemoryBank(build_foreground_memory(scenes, detector), build_background_memory(background_scenes, detector),
                      detector.num_classes, built_at=current_step, extractor_hash=detector.content_hash())

def refresh(bank, scenes, detector, current_step, interval):
    '''
    recompute every retained entry with the current weights (uids preserved), returns (bank, refreshed)
    the old bank is returned untouched when fewer than `interval` steps passed since it was built
    '''
    if current_step - bank.built_at < interval:
        logger.debug(f'memory refresh skipped at step {current_step}, built at {bank.built_at}, interval {interval}')
        return bank, False
    fg_uids, bg_uids = bank.uids()
    fg_uids, bg_uids = set(fg_uids), set(bg_uids)
    fg = {class_id: [] for class_id in range(bank.num_classes)}
    bg = []
    for scene in scenes:
        valid, g, bg_vector = scene_features(scene, detector)
        for box, vector in zip(valid, g):
            if box.object_uid in fg_uids:
                fg[box.class_id].append(ForegroundEntry(np.array(vector), int(box.class_id), scene.scene_uid, box.object_uid))
        if scene.scene_uid in bg_uids:
            bg.append(BackgroundEntry(np.array(bg_vector), scene.scene_uid))
    refreshed = MemoryBank(fg, bg, bank.num_classes, built_at=current_step, extractor_hash=detector.content_hash())
    if refreshed.uids() != bank.uids():
        missing = (len(fg_uids) + len(bg_uids)) - (refreshed.fg_count() + len(refreshed.bg))
        raise IntegrityError(f'memory refresh lost {missing} entries, the scenes do not cover the bank')
    logger.info(f'memory refreshed at step {current_step}: {refreshed.fg_count()} fg, {len(refreshed.bg)} bg entries')
    return refreshed, True

# subsampling

def keep_count(n, keep_ratio):
    if not 0.0 < keep_ratio <= 1.0:
        raise ArgumentError(f'keep_ratio must be in (0, 1], got {keep_ratio}')
    # tolerance so that e.g. 0.7 * 10 keeps 7, not 8
    return max(1, min(n, int(np.ceil(keep_ratio * n - 1e-9))))

def _vectors(entries, normalize):
    matrix = np.stack([np.asarray(e.vector if hasattr(e, 'vector') else e, dtype=np.float64).reshape(-1) for e in entries])
    if normalize:
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        matrix = np.divide(matrix, norms, out=np.zeros_like(matrix), where=norms > 0.0)
    return matrix

def coreset_indices(vectors, n_keep):
    '''
    k-center greedy: start at the point nearest the mean, then repeatedly add the point farthest
    from the selected set (ties to the lowest index)
    '''
    mean = vectors.mean(axis=0, keepdims=True)
    seed = int(np.argmin(pairwise_distances(vectors, mean).ravel()))
    selected = [seed]
    min_dist = pairwise_distances(vectors, vectors[[seed]]).ravel()
    min_dist[seed] = -1.0
    while len(selected) < n_keep:
        chosen = int(np.argmax(min_dist))
        selected.append(chosen)
        min_dist = np.minimum(min_dist, pairwise_distances(vectors, vectors[[chosen]]).ravel())
        min_dist[selected] = -1.0
    return selected

def subsample_coreset(entries, keep_ratio, normalize=True):
    '''
    returns the ceil(keep_ratio * n) entries chosen by k-center greedy, in selection order
    distances are Euclidean on L2-normalized vectors unless normalize is False
    '''
    entries = list(entries)
    if not entries:
        raise ArgumentError('cannot subsample an empty entry list')
    n_keep = keep_count(len(entries), keep_ratio)
    if n_keep == len(entries):
        return entries
    return [entries[i] for i in coreset_indices(_vectors(entries, normalize), n_keep)]

def subsample_random(entries, keep_ratio, rng):
    entries = list(entries)
    if not entries:
        raise ArgumentError('cannot subsample an empty entry list')
    n_keep = keep_count(len(entries), keep_ratio)
    indices = np.sort(rng.choice(len(entries), size=n_keep, replace=False))
    return [entries[int(i)] for i in indices]

def covering_radius(parent, subset, normalize=True):
    '''
    max over parent entries of the distance to the nearest subset entry
    '''
    if len(subset) == 0:
        raise ArgumentError('covering radius of an empty subset is undefined')
    distances = pairwise_distances(_vectors(parent, normalize), _vectors(subset, normalize))
    return float(distances.min(axis=1).max())

def subsample_bank(bank, method, keep_fg, keep_bg, rng=None):
    '''
    per class for the foreground, global for the background
    '''
    if method not in SUBSAMPLE_METHODS:
        raise ArgumentError(f'unknown subsampling method "{method}", expected one of {SUBSAMPLE_METHODS}')
    if method == 'none':
        return bank
    if method == 'random' and rng is None:
        raise ArgumentError('random subsampling needs an rng stream')

    def pick(entries, keep_ratio):
        if not entries:
            return []
        if method == 'coreset':
            return subsample_coreset(entries, keep_ratio)
        return subsample_random(entries, keep_ratio, rng)

    fg = {class_id: pick(bank.fg_entries(class_id), keep_fg) for class_id in range(bank.num_classes)}
    subset = MemoryBank(fg, pick(bank.bg, keep_bg), bank.num_classes, bank.built_at, bank.extractor_hash)
    logger.info(f'{method} subsampling kept {subset.fg_count()}/{bank.fg_count()} fg and {len(subset.bg)}/{len(bank.bg)} bg entries')
    return subset

# snapshot: memory.json (sealed header, entries in blob order) + memory.f32 (fg vectors then bg vectors)

def save_memory(bank, out_dir):
    out_dir = Path(out_dir)
    fg = bank.all_fg()
    vectors = [e.vector for e in fg] + [e.vector for e in bank.bg]
    blob = artifact_io.encode_vectors(np.stack(vectors) if vectors else np.zeros((0, bank.dim)))
    artifact_io.write_bytes(out_dir / 'memory.f32', blob)
    header = {'schema_version': SCHEMA_VERSION, 'dim': bank.dim, 'num_classes': bank.num_classes,
              'built_at': bank.built_at, 'extractor_hash': bank.extractor_hash,
              'counts': {'fg': len(fg), 'bg': len(bank.bg)},
              'class_index': {str(c): len(bank.fg[c]) for c in range(bank.num_classes)},
              'fg': [{'class_id': e.class_id, 'scene_uid': e.scene_uid, 'object_uid': e.object_uid} for e in fg],
              'bg': [{'scene_uid': e.scene_uid} for e in bank.bg],
              'blob_sha256': sha256_of_bytes(blob)}
    artifact_io.write_json(out_dir / 'memory.json', header, sealed=True)
    logger.info(f'saved {bank} to {out_dir}')
    return header

def load_memory(in_dir):
    in_dir = Path(in_dir)
    header_path = in_dir / 'memory.json'
    if not header_path.is_file():
        raise DatasetIOError('memory header not found', header_path)
    header = artifact_io.read_json(header_path, sealed=True)
    if header.get('schema_version') != SCHEMA_VERSION:
        raise IntegrityError(f'unsupported memory schema {header.get("schema_version")}', header_path)
    blob = artifact_io.verify_file_hash(in_dir / 'memory.f32', header['blob_sha256'])
    n_fg, n_bg = header['counts']['fg'], header['counts']['bg']
    matrix = artifact_io.decode_vectors(blob, n_fg + n_bg, header['dim'], in_dir / 'memory.f32')
    fg = {}
    for row, record in enumerate(header['fg']):
        fg.setdefault(record['class_id'], []).append(
            ForegroundEntry(matrix[row].copy(), int(record['class_id']), record['scene_uid'], record['object_uid']))
    bg = [BackgroundEntry(matrix[n_fg + row].copy(), record['scene_uid']) for row, record in enumerate(header['bg'])]
    return MemoryBank(fg, bg, header['num_classes'], header['built_at'], header['extractor_hash'])
