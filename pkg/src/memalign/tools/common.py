#!/usr/bin/env python3

import json
import zlib
import hashlib

from concurrent.futures import ThreadPoolExecutor

import numpy as np

def separate_uid_prefix_from_index(uid_as_string):
    '''
    e.g. input  : src_00012_obj_1
            output : src_00012_obj, 1
    '''
    if '_' not in uid_as_string:
        return uid_as_string, None
    count = 0
    for char in reversed(uid_as_string):
        count += 1
        if char == '_':
            break
    chars_before_number = uid_as_string[:-count]
    try:
        index = int(uid_as_string[-count+1:])
        return chars_before_number, index
    except ValueError:
        return uid_as_string, None

def make_scene_uid(prefix, index, variant_tag=None):
    '''
    e.g. make_scene_uid('src', 12) -> src_00012
         make_scene_uid('src', 12, 'color') -> src_00012_color
    '''
    uid = f'{prefix}_{index:05d}'
    if variant_tag:
        uid += f'_{variant_tag}'
    return uid

def make_object_uid(scene_uid, object_index):
    return f'{scene_uid}_obj_{object_index}'

def scene_uid_from_object_uid(object_uid):
    prefix, index = separate_uid_prefix_from_index(object_uid)
    if index is None or not prefix.endswith('_obj'):
        return None
    return prefix[:-len('_obj')]

def stable_hash_int(text, modulo=2**32):
    '''
    process independent hash of a string (python's hash() is salted per run)
    '''
    return zlib.crc32(text.encode('utf-8')) % modulo

def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(',', ':'))

def sha256_of_json(obj):
    return hashlib.sha256(canonical_json(obj).encode('utf-8')).hexdigest()

def sha256_of_bytes(data):
    return hashlib.sha256(data).hexdigest()

class RngStream():
    '''
    seeded pseudorandom stream with a fixed algorithm (PCG64) and a draw counter

    child streams are derived from (seed, keys) so that every concern (data, init,
    negative sampling, one stream per scene ...) gets an independent sequence and
    ablations differ only in the factor under study
    '''
    ALGORITHM = 'PCG64'

    def __init__(self, seed, keys=()):
        assert isinstance(seed, (int, np.integer))
        self.seed = int(seed) % 2**64
        self.keys = tuple(keys)
        entropy = [self.seed] + [self._key_to_int(k) for k in self.keys]
        self._generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
        self.draws = 0

    @staticmethod
    def _key_to_int(key):
        if isinstance(key, (int, np.integer)):
            return int(key) % 2**32
        return stable_hash_int(str(key))

    def spawn(self, *keys):
        return RngStream(self.seed, self.keys + tuple(keys))

    def random(self, size=None):
        self.draws += 1
        return self._generator.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        self.draws += 1
        return self._generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        self.draws += 1
        return self._generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        '''
        high is exclusive
        '''
        self.draws += 1
        return self._generator.integers(low, high, size)

    def choice(self, a, size=None, replace=True):
        self.draws += 1
        return self._generator.choice(a, size=size, replace=replace)

    def permutation(self, n):
        self.draws += 1
        return self._generator.permutation(n)

    def __repr__(self):
        return f'RngStream(seed={self.seed}, keys={self.keys}, algorithm={self.ALGORITHM}, draws={self.draws})'

def parallel_map(function, items, threads=1):
    '''
    order preserving map, runs in a thread pool when threads > 1
    '''
    items = list(items)
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            return list(executor.map(function, items))
    return [function(item) for item in items]
