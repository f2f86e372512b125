#!/usr/bin/env python3

'''
controlled pairing for the hypothesis experiment: every target instance is aligned with its exact
source counterpart (domain_only) or with the colour / rotation / colour + rotation sibling of it
'''

from memalign.aligners.alignment_strategy_core import AlignmentStrategyCore
from memalign.retrieval import retrieve_by_strategy
from memalign.synthgen import ProvenanceIndex
from memalign.tools.errors import ArgumentError, ProvenanceError

class ProvenanceAligner(AlignmentStrategyCore):
    needs_target_uids = True

    def __init__(self, config, num_classes, variant=None, provenance=None):
        super().__init__(config, num_classes, variant=variant or 'domain_only', provenance=provenance)
        if self.variant not in ProvenanceIndex.STRATEGIES:
            raise ArgumentError(f'unknown provenance strategy "{self.variant}", expected one of {ProvenanceIndex.STRATEGIES}')
        if provenance is None:
            raise ArgumentError('provenance alignment needs the dataset provenance index')

    def fg_positives(self, g_t, class_id, target_object_uid, bank):
        if target_object_uid is None:
            raise ProvenanceError('detection does not overlap a labelled target object')
        return [retrieve_by_strategy(target_object_uid, self.provenance, bank, self.variant)]
