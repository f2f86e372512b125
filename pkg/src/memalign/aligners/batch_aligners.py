#!/usr/bin/env python3

'''
non-memory baselines: partners come from the source instances of the current mini-batch only
'''

import numpy as np

from memalign.aligners.alignment_strategy_core import AlignmentStrategyCore
from memalign.retrieval import retrieve_fg_positive, similarities
from memalign.tools.errors import ClassUnavailableError

class BatchCategoryAligner(AlignmentStrategyCore):
    '''
    category to category: most similar same-class source instance of the batch
    '''
    uses_memory = False

    def fg_positives(self, g_t, class_id, target_object_uid, bank):
        return [retrieve_fg_positive(g_t, class_id, self.batch_bank)]

class BatchAgnosticAligner(AlignmentStrategyCore):
    '''
    category agnostic: most similar source instance of the batch whatever its class
    '''
    uses_memory = False

    def fg_positives(self, g_t, class_id, target_object_uid, bank):
        best, best_key = None, None
        for c in range(self.num_classes):
            entries, sims, valid = similarities(g_t, self.batch_bank, c)
            if not np.any(valid):
                continue
            i = int(np.argmax(sims))
            # highest similarity, then lowest uid
            key = (-float(sims[i]), entries[i].uid)
            if best_key is None or key < best_key:
                best, best_key = entries[i], key
        if best is None:
            raise ClassUnavailableError('the mini-batch holds no source instance')
        return [best]
