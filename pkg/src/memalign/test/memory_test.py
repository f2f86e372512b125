#!/usr/bin/env python3

import itertools
import shutil
import tempfile
import unittest

from pathlib import Path

import numpy as np

from memalign.detector import DetectorParams
from memalign.memory import (ForegroundEntry, BackgroundEntry, MemoryBank, build_memory, refresh, keep_count,
                             coreset_indices, subsample_coreset, subsample_random, covering_radius, subsample_bank,
                             save_memory, load_memory)
from memalign.synthgen import BenchmarkConfig, generate_benchmark
from memalign.tools.common import RngStream
from memalign.tools.errors import ArgumentError, DimensionError, IntegrityError

def fg_entry(vector, class_id=0, scene='src_00000', index=0):
    return ForegroundEntry(np.asarray(vector, dtype=np.float32), class_id, scene, f'{scene}_obj_{index}')

def random_entries(n, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    return [fg_entry(rng.normal(size=dim), scene=f'src_{k:05d}') for k in range(n)]

def reference_k_center(vectors, n_keep):
    '''
    plain loop version of the greedy k-center selection
    '''
    n = len(vectors)
    mean = vectors.mean(axis=0)
    selected = [int(np.argmin([np.linalg.norm(v - mean) for v in vectors]))]
    while len(selected) < n_keep:
        best, best_dist = None, -1.0
        for i in range(n):
            if i in selected:
                continue
            dist = min(np.linalg.norm(vectors[i] - vectors[j]) for j in selected)
            if dist > best_dist:
                best, best_dist = i, dist
        selected.append(best)
    return selected

class TestKeepCount(unittest.TestCase):

    def test_rounding(self):
        self.assertEqual(keep_count(10, 0.7), 7)
        self.assertEqual(keep_count(10, 0.3), 3)
        self.assertEqual(keep_count(3, 0.5), 2)
        self.assertEqual(keep_count(5, 0.01), 1)
        self.assertEqual(keep_count(5, 1.0), 5)

    def test_invalid_ratio(self):
        for ratio in (0.0, -0.2, 1.5):
            with self.assertRaises(ArgumentError):
                keep_count(10, ratio)

class TestCoreset(unittest.TestCase):

    def test_against_reference(self):
        rng = np.random.default_rng(7)
        for trial in range(10):
            vectors = rng.normal(size=(12, 3))
            self.assertEqual(coreset_indices(vectors, 5), reference_k_center(vectors, 5), trial)

    def test_two_approximation(self):
        # greedy k-center never exceeds twice the optimal covering radius
        for seed in range(5):
            entries = random_entries(8, dim=3, seed=seed)
            chosen = subsample_coreset(entries, 3 / 8)
            self.assertEqual(len(chosen), 3)
            optimum = min(covering_radius(entries, list(subset)) for subset in itertools.combinations(entries, 3))
            self.assertLessEqual(covering_radius(entries, chosen), 2.0 * optimum + 1e-9)

    def test_coreset_covers_better_than_random(self):
        coreset_radii, random_radii = [], []
        for seed in range(20):
            entries = random_entries(50, dim=8, seed=seed)
            coreset_radii.append(covering_radius(entries, subsample_coreset(entries, 0.3)))
            random_radii.append(covering_radius(entries, subsample_random(entries, 0.3, RngStream(seed))))
        self.assertLessEqual(np.mean(coreset_radii), np.mean(random_radii))

    def test_keep_everything(self):
        entries = random_entries(4)
        self.assertEqual(subsample_coreset(entries, 1.0), entries)

    def test_distinct_selection(self):
        entries = random_entries(20)
        chosen = subsample_coreset(entries, 0.5)
        self.assertEqual(len({e.uid for e in chosen}), 10)

    def test_empty(self):
        with self.assertRaises(ArgumentError):
            subsample_coreset([], 0.5)

    def test_random_subsample(self):
        entries = random_entries(10)
        a = subsample_random(entries, 0.3, RngStream(1))
        b = subsample_random(entries, 0.3, RngStream(1))
        self.assertEqual([e.uid for e in a], [e.uid for e in b])
        self.assertEqual(len(a), 3)
        positions = [entries.index(e) for e in a]
        self.assertEqual(positions, sorted(positions))

class TestMemoryBank(unittest.TestCase):

    def test_entries_sorted_by_uid(self):
        bank = MemoryBank({0: [fg_entry([1, 0], scene='src_00002'), fg_entry([0, 1], scene='src_00001')]},
                          [BackgroundEntry(np.ones(2), 'src_00001')], num_classes=2)
        self.assertEqual([e.scene_uid for e in bank.fg_entries(0)], ['src_00001', 'src_00002'])
        self.assertEqual(bank.fg_entries(1), ())
        self.assertEqual(bank.counts(), {'fg': 2, 'bg': 1, 'per_class': {0: 2, 1: 0}})
        self.assertEqual(bank.dim, 2)
        self.assertIs(bank.fg_by_uid('src_00002_obj_0'), bank.fg_entries(0)[1])

    def test_duplicated_entry(self):
        with self.assertRaises(ArgumentError):
            MemoryBank({0: [fg_entry([1, 0]), fg_entry([0, 1])]}, [], num_classes=1)

    def test_class_mismatch(self):
        with self.assertRaises(ArgumentError):
            MemoryBank({0: [fg_entry([1, 0], class_id=1)]}, [], num_classes=2)

    def test_class_out_of_range(self):
        with self.assertRaises(ArgumentError):
            MemoryBank({3: [fg_entry([1, 0], class_id=3)]}, [], num_classes=2)

    def test_mixed_dimensions(self):
        with self.assertRaises(DimensionError):
            MemoryBank({0: [fg_entry([1, 0])]}, [BackgroundEntry(np.ones(3), 'src_00000')], num_classes=1)

    def test_zero_rows_flagged(self):
        bank = MemoryBank({0: [fg_entry([3, 4], index=0), fg_entry([0, 0], index=1)]}, [], num_classes=1)
        entries, unit, valid = bank.normalized_matrix(0)
        np.testing.assert_allclose(unit[0], [0.6, 0.8])
        self.assertEqual(valid.tolist(), [True, False])

class TestBuildAndRefresh(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.source, _, _ = generate_benchmark(BenchmarkConfig(num_scenes=4), seed=0)
        cls.detector = DetectorParams.init(RngStream(0))

    def test_build(self):
        bank = build_memory(self.source, self.detector, current_step=3)
        self.assertEqual(len(bank.bg), len(self.source))
        self.assertLessEqual(bank.fg_count(), self.source.box_count())
        self.assertEqual(bank.dim, 64)
        self.assertEqual(bank.built_at, 3)
        self.assertEqual(bank.extractor_hash, self.detector.content_hash())
        for class_id in range(3):
            for entry in bank.fg_entries(class_id):
                scene = self.source.get(entry.scene_uid)
                self.assertIn(entry.object_uid, [b.object_uid for b in scene.boxes if b.class_id == class_id])

    def test_one_entry_per_box(self):
        bank = build_memory(self.source, self.detector)
        self.assertEqual(bank.fg_count(), self.source.box_count())
        # a dead head gives all-zero embeddings, the entries stay and refresh agrees with the build
        dead = self.detector.copy()
        for name in ('head/fc2/w', 'head/fc2/b'):
            dead.params[name] = np.zeros_like(dead.params[name])
        dead_bank = build_memory(self.source, dead)
        self.assertEqual(dead_bank.fg_count(), self.source.box_count())
        self.assertTrue(all(not np.any(e.vector) for e in dead_bank.all_fg()))
        refreshed, _ = refresh(dead_bank, self.source, self.detector, current_step=1, interval=1)
        self.assertEqual(refreshed.uids(), dead_bank.uids())

    def test_refresh_after_perturbation(self):
        bank = build_memory(self.source, self.detector)
        perturbed = self.detector.copy()
        perturbed.params['extractor/mix/b'] = perturbed.params['extractor/mix/b'] + 0.01
        new_bank, refreshed = refresh(bank, self.source, perturbed, current_step=1, interval=1)
        self.assertTrue(refreshed)
        self.assertNotEqual(new_bank.extractor_hash, bank.extractor_hash)
        self.assertEqual(new_bank.counts(), bank.counts())

    def test_refresh_interval(self):
        bank = build_memory(self.source, self.detector, current_step=0)
        same, refreshed = refresh(bank, self.source, self.detector, current_step=1, interval=2)
        self.assertFalse(refreshed)
        self.assertIs(same, bank)

    def test_refresh_keeps_uids(self):
        bank = subsample_bank(build_memory(self.source, self.detector), 'coreset', keep_fg=0.5, keep_bg=0.5)
        new_detector = DetectorParams.init(RngStream(1))
        new_bank, refreshed = refresh(bank, self.source, new_detector, current_step=2, interval=2)
        self.assertTrue(refreshed)
        self.assertEqual(new_bank.uids(), bank.uids())
        self.assertEqual(new_bank.counts(), bank.counts())
        self.assertEqual(new_bank.built_at, 2)
        self.assertEqual(new_bank.extractor_hash, new_detector.content_hash())
        old = bank.bg[0].bg
        self.assertFalse(np.allclose(old, new_bank.bg[0].bg))

    def test_refresh_needs_every_scene(self):
        bank = build_memory(self.source, self.detector)
        with self.assertRaises(IntegrityError):
            refresh(bank, self.source.scenes[:2], self.detector, current_step=5, interval=1)

    def test_background_scenes(self):
        bank = build_memory(self.source, self.detector, background_scenes=self.source.scenes[:1])
        self.assertEqual([e.scene_uid for e in bank.bg], [self.source[0].scene_uid])

class TestSubsampleBank(unittest.TestCase):

    def setUp(self):
        fg = {0: [fg_entry(v, 0, f'src_{k:05d}') for k, v in enumerate(np.random.default_rng(0).normal(size=(10, 4)))],
              1: [fg_entry(v, 1, f'src_{k:05d}', 1) for k, v in enumerate(np.random.default_rng(1).normal(size=(3, 4)))]}
        bg = [BackgroundEntry(v.astype(np.float32), f'src_{k:05d}') for k, v in enumerate(np.random.default_rng(2).normal(size=(10, 4)))]
        self.bank = MemoryBank(fg, bg, num_classes=3)

    def test_coreset_counts(self):
        subset = subsample_bank(self.bank, 'coreset', keep_fg=0.5, keep_bg=0.3)
        self.assertEqual(subset.counts(), {'fg': 7, 'bg': 3, 'per_class': {0: 5, 1: 2, 2: 0}})
        self.assertTrue(set(subset.uids()[0]) <= set(self.bank.uids()[0]))

    def test_random_counts(self):
        subset = subsample_bank(self.bank, 'random', keep_fg=0.5, keep_bg=0.3, rng=RngStream(0))
        self.assertEqual(subset.counts()['bg'], 3)

    def test_none(self):
        self.assertIs(subsample_bank(self.bank, 'none', 0.5, 0.3), self.bank)

    def test_invalid(self):
        with self.assertRaises(ArgumentError):
            subsample_bank(self.bank, 'kmeans', 0.5, 0.3)
        with self.assertRaises(ArgumentError):
            subsample_bank(self.bank, 'random', 0.5, 0.3)

class TestSnapshot(unittest.TestCase):

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        fg = {0: random_entries(3), 1: [fg_entry([1, 2, 3, 4], 1, 'src_00009')]}
        self.bank = MemoryBank(fg, [BackgroundEntry(np.ones(4, dtype=np.float32), 'src_00000')], num_classes=2,
                               built_at=4, extractor_hash='abc')

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def test_save_and_load(self):
        save_memory(self.bank, self.tmp)
        loaded = load_memory(self.tmp)
        self.assertEqual(loaded.uids(), self.bank.uids())
        self.assertEqual(loaded.counts(), self.bank.counts())
        self.assertEqual((loaded.built_at, loaded.extractor_hash), (4, 'abc'))
        for a, b in zip(loaded.all_entries(), self.bank.all_entries()):
            np.testing.assert_array_equal(a.vector, b.vector)

    def test_tampered_blob(self):
        save_memory(self.bank, self.tmp)
        blob = bytearray((self.tmp / 'memory.f32').read_bytes())
        blob[0] ^= 0xFF
        (self.tmp / 'memory.f32').write_bytes(bytes(blob))
        with self.assertRaises(IntegrityError):
            load_memory(self.tmp)

if __name__ == '__main__':
    unittest.main()
