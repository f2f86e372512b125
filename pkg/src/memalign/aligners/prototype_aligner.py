#!/usr/bin/env python3

import logging

import numpy as np

from memalign.aligners.alignment_strategy_core import AlignmentStrategyCore
from memalign.memory import ForegroundEntry
from memalign.tools.errors import ClassUnavailableError

logger = logging.getLogger(__name__)

class PrototypeAligner(AlignmentStrategyCore):
    '''
    aligns every target instance with a running (exponential moving average) mean of the source
    features of its class; negatives are the prototypes of the other classes
    '''
    uses_memory = False

    def __init__(self, config, num_classes, variant=None, provenance=None):
        super().__init__(config, num_classes, variant=variant, provenance=provenance)

        # parameters
        self.decay = config.prototype_decay

        self.prototypes = {}

    def begin_step(self, source_instances, source_backgrounds):
        super().begin_step(source_instances, source_backgrounds)
        for class_id in range(self.num_classes):
            entries = self.batch_bank.fg_entries(class_id)
            if not entries:
                continue
            batch_mean = np.mean(np.stack([e.g for e in entries]).astype(np.float64), axis=0)
            if class_id in self.prototypes:
                self.prototypes[class_id] = self.decay * self.prototypes[class_id] + (1.0 - self.decay) * batch_mean
            else:
                self.prototypes[class_id] = batch_mean

    def prototype_entry(self, class_id):
        return ForegroundEntry(self.prototypes[class_id].astype(np.float32), class_id, 'prototype', f'prototype_{class_id}')

    def fg_positives(self, g_t, class_id, target_object_uid, bank):
        if class_id not in self.prototypes or not np.any(self.prototypes[class_id]):
            raise ClassUnavailableError(f'no prototype for class {class_id} yet')
        return [self.prototype_entry(class_id)]

    def fg_negatives(self, positives, bank, rng):
        others = [c for c in sorted(self.prototypes) if c != positives[0].class_id]
        if not others or self.num_negatives == 0:
            return []
        picks = rng.choice(len(others), size=min(self.num_negatives, len(others)), replace=False)
        return [self.prototype_entry(others[int(i)]) for i in picks]
