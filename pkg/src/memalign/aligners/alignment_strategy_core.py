#!/usr/bin/env python3

import logging
import importlib

from memalign.memory import MemoryBank
from memalign.retrieval import make_pair, retrieve_bg_positive, sample_negatives
from memalign.tools.params import get_params
from memalign.tools.errors import ArgumentError, DegenerateInputError, RetrievalError, NegativeUnavailableError

logger = logging.getLogger(__name__)

# used when config/trainer/alignment_strategies.yaml is not installed
BUILTIN_STRATEGIES = {
    'memory_similar': {'import_file': 'memalign.aligners.memory_similar_aligner', 'import_class': 'MemorySimilarAligner'},
    'batch_c2c': {'import_file': 'memalign.aligners.batch_aligners', 'import_class': 'BatchCategoryAligner'},
    'category_agnostic': {'import_file': 'memalign.aligners.batch_aligners', 'import_class': 'BatchAgnosticAligner'},
    'prototype': {'import_file': 'memalign.aligners.prototype_aligner', 'import_class': 'PrototypeAligner'},
    'provenance': {'import_file': 'memalign.aligners.provenance_aligner', 'import_class': 'ProvenanceAligner'},
}

class AlignmentStrategyCore:
    '''
    Abstract class that defines how a target instance finds its source alignment partners
    It cannot be used by itself, you need to inherit from it and implement virtual methods
    '''
    # strategies that align against the current mini-batch do not need a memory bank
    uses_memory = True
    # strategies that need the uid of the ground truth object behind each detection
    needs_target_uids = False

    def __init__(self, config, num_classes, variant=None, provenance=None):

        # parameters
        self.top_k = config.top_k
        self.num_negatives = config.num_negatives
        self.num_classes = num_classes
        self.variant = variant
        self.provenance = provenance
        self.tag = self.__class__.__name__ if variant is None else f'{self.__class__.__name__}:{variant}'

        # mini-batch bank, rebuilt by begin_step
        self.batch_bank = MemoryBank({}, [], num_classes)

    def begin_step(self, source_instances, source_backgrounds):
        '''
        receive the current mini-batch source features
        source_instances: list of ForegroundEntry, source_backgrounds: list of BackgroundEntry
        '''
        fg = {}
        for entry in source_instances:
            if entry.g.any():
                fg.setdefault(entry.class_id, []).append(entry)
        self.batch_bank = MemoryBank(fg, source_backgrounds, self.num_classes)

    def end_epoch(self, epoch):
        pass

    def reference_bank(self, bank):
        '''
        bank that positives, negatives and background partners are drawn from
        '''
        return bank if self.uses_memory else self.batch_bank

    def fg_positives(self, g_t, class_id, target_object_uid, bank):
        '''
        virtual method, derive from this class and implement
        returns a list of positive ForegroundEntry for one target instance
        '''
        raise NotImplementedError()

    def fg_negatives(self, positives, bank, rng):
        '''
        M entries from classes other than the positive's, [] if the bank has a single class
        '''
        try:
            return sample_negatives(positives[0].class_id, bank, rng, self.num_negatives)
        except NegativeUnavailableError:
            return []

    def bg_partner(self, bg_t, bank):
        return retrieve_bg_positive(bg_t, self.reference_bank(bank))

    def make_fg_pairs(self, targets, bank, rng):
        '''
        targets: iterable of (g_t, predicted class, target object uid or None, target_ref)
        returns (pairs, skipped instance count)
        '''
        pairs = []
        skipped = 0
        for g_t, class_id, target_object_uid, target_ref in targets:
            try:
                positives = self.fg_positives(g_t, class_id, target_object_uid, bank)
                negatives = self.fg_negatives(positives, self.reference_bank(bank), rng)
                for positive in positives:
                    pairs.append(make_pair(g_t, positive, negatives, self.tag, target_ref))
            except (RetrievalError, DegenerateInputError) as e:
                logger.debug(f'{self.tag}: alignment skipped for {target_object_uid or target_ref}: {e}')
                skipped += 1
        return pairs, skipped

    def make_bg_partners(self, targets, bank):
        '''
        targets: iterable of (bg_t, target_ref); returns ([(bg_t, source BackgroundEntry, target_ref)], skipped)
        '''
        partners = []
        skipped = 0
        for bg_t, target_ref in targets:
            try:
                partners.append((bg_t, self.bg_partner(bg_t, bank), target_ref))
            except (RetrievalError, DegenerateInputError) as e:
                logger.debug(f'{self.tag}: background alignment skipped for {target_ref}: {e}')
                skipped += 1
        return partners, skipped

def parse_mode(mode):
    '''
    e.g. input  : provenance:color
            output : provenance, color
    '''
    if ':' in mode:
        name, variant = mode.split(':', 1)
        return name, variant
    return mode, None

def load_strategy(mode, config, num_classes, provenance=None):
    '''
    instantiate the strategy registered for `mode` in config/trainer/alignment_strategies.yaml
    '''
    name, variant = parse_mode(mode)
    registry = get_params('trainer/alignment_strategies.yaml', default=BUILTIN_STRATEGIES)
    if name not in registry:
        raise ArgumentError(f'unknown alignment mode "{mode}", available: {sorted(registry)}')
    import_file = registry[name]['import_file']
    import_class = registry[name]['import_class']
    strategy = getattr(importlib.import_module(import_file), import_class)(config, num_classes, variant=variant, provenance=provenance)
    logger.info(f'alignment mode {mode}: {import_file}.{import_class}')
    return strategy

