#!/usr/bin/env python3

'''
visually similar pair alignment: each target instance is aligned with the K most similar
same-class entries of the source foreground memory
'''

from memalign.aligners.alignment_strategy_core import AlignmentStrategyCore
from memalign.retrieval import retrieve_fg_positive, retrieve_topk

class MemorySimilarAligner(AlignmentStrategyCore):
    def __init__(self, config, num_classes, variant=None, provenance=None):
        super().__init__(config, num_classes, variant=variant, provenance=provenance)

    def fg_positives(self, g_t, class_id, target_object_uid, bank):
        if self.top_k == 1:
            return [retrieve_fg_positive(g_t, class_id, bank)]
        return retrieve_topk(g_t, class_id, bank, self.top_k)
