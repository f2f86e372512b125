#!/usr/bin/env python3

'''
alignment partners from memory: most similar same-class positive, most similar background,
random other-class negatives, top-K positives and provenance driven partners
retrieval is an exact scan, ties resolve to the lowest entry uid
'''

import dataclasses

import numpy as np

from memalign.memory import MemoryBank
from memalign.numerics import cosine_similarity, l2_norm
from memalign.tools.errors import (ArgumentError, DimensionError, DegenerateInputError, ClassUnavailableError,
                                   NegativeUnavailableError, ProvenanceError)

@dataclasses.dataclass(eq=False)
class AlignmentPair:
    target_feature: np.ndarray
    positive: object
    negatives: list
    similarity: float
    strategy_tag: str = 'memory_similar'
    # (scene graph index, head handle, row) of the target feature inside the trainer's graphs
    target_ref: tuple = None

    @property
    def negative(self):
        return self.negatives[0] if self.negatives else None

def make_pair(target_feature, positive, negatives=(), strategy_tag='memory_similar', target_ref=None):
    '''
    w = cosine(target, positive)
    '''
    return AlignmentPair(target_feature, positive, list(negatives), cosine_similarity(target_feature, positive.vector),
                         strategy_tag, target_ref)

def similarities(query, bank, key):
    '''
    cosine of the query against every entry of a partition, -inf for all-zero entries
    '''
    assert isinstance(bank, MemoryBank)
    norm = l2_norm(query)
    if norm == 0.0 or not np.isfinite(norm):
        raise DegenerateInputError('cannot retrieve with a zero query vector')
    entries, unit, valid = bank.normalized_matrix(key)
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if not entries:
        return entries, np.zeros(0), valid
    if unit.shape[1] != query.size:
        raise DimensionError(f'query has {query.size} dims, the memory holds {unit.shape[1]} dim entries')
    sims = unit @ (query / norm)
    sims[~valid] = -np.inf
    return entries, sims, valid

def retrieve_fg_positive(g_t, class_id, bank):
    entries, sims, valid = similarities(g_t, bank, class_id)
    if not np.any(valid):
        raise ClassUnavailableError(f'no foreground memory entry of class {class_id}')
    # argmax keeps the first maximum, entries are uid sorted
    return entries[int(np.argmax(sims))]

def retrieve_bg_positive(bg_t, bank):
    entries, sims, valid = similarities(bg_t, bank, 'bg')
    if not np.any(valid):
        raise ClassUnavailableError('background memory is empty')
    return entries[int(np.argmax(sims))]

def retrieve_topk(g_t, class_id, bank, k):
    '''
    the k most similar entries of the class, descending (fewer if the partition is smaller)
    '''
    if k < 1:
        raise ArgumentError(f'K must be >= 1, got {k}')
    entries, sims, valid = similarities(g_t, bank, class_id)
    if not np.any(valid):
        raise ClassUnavailableError(f'no foreground memory entry of class {class_id}')
    order = np.argsort(-sims, kind='stable')
    return [entries[int(i)] for i in order[:min(k, int(valid.sum()))]]

def _other_class_entries(class_id, bank):
    return [entry for c in range(bank.num_classes) if c != class_id for entry in bank.fg_entries(c)]

def sample_negative(class_id, bank, rng):
    '''
    uniform over every entry whose class differs from class_id
    '''
    candidates = _other_class_entries(class_id, bank)
    if not candidates:
        raise NegativeUnavailableError(f'no memory entry outside class {class_id}')
    return candidates[int(rng.integers(0, len(candidates)))]

def sample_negatives(class_id, bank, rng, m):
    '''
    m distinct other-class entries (all of them if fewer exist), [] for m = 0
    '''
    if m < 0:
        raise ArgumentError(f'negative set size must be >= 0, got {m}')
    if m == 0:
        return []
    if m == 1:
        return [sample_negative(class_id, bank, rng)]
    candidates = _other_class_entries(class_id, bank)
    if not candidates:
        raise NegativeUnavailableError(f'no memory entry outside class {class_id}')
    picks = rng.choice(len(candidates), size=min(m, len(candidates)), replace=False)
    return [candidates[int(i)] for i in picks]

def retrieve_bg_negative(scene_uid, bank, rng):
    '''
    random background entry of another scene
    '''
    candidates = [entry for entry in bank.bg if entry.scene_uid != scene_uid]
    if not candidates:
        raise NegativeUnavailableError(f'no background entry outside scene {scene_uid}')
    return candidates[int(rng.integers(0, len(candidates)))]

def retrieve_by_strategy(target_object_uid, provenance_index, bank, mode):
    '''
    the bank entry of the exact source counterpart (domain_only) or of its colour / rotation /
    colour + rotation sibling
    '''
    sibling_uid = provenance_index.counterpart_for(target_object_uid, mode)
    if sibling_uid is None:
        raise ProvenanceError(f'cannot resolve a {mode} partner for {target_object_uid}')
    entry = bank.fg_by_uid(sibling_uid)
    if entry is None:
        raise ProvenanceError(f'{mode} partner {sibling_uid} of {target_object_uid} is not in the memory bank')
    return entry
