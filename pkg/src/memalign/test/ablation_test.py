#!/usr/bin/env python3

import shutil
import tempfile
import unittest

from pathlib import Path

from memalign.ablation import (BUILTIN_SUITES, SUMMARY_COLUMNS, PER_SEED_COLUMNS, CellResult, AblationTable,
                               available_suites, suite_cells, run_ablation, write_ablation, read_rows)
from memalign.synthgen import BenchmarkConfig
from memalign.trainer import TrainConfig
from memalign.tools.errors import ArgumentError

TINY_SUITES = {'tiny': [{'name': 'source_only', 'overrides': {}, 'pretrain_only': True},
                        {'name': 'adapted', 'overrides': {'delta': 0.0}},
                        {'name': 'broken', 'overrides': {'alignment_mode': 'provenance:scale'}}]}

class TestSuites(unittest.TestCase):

    def test_installed_suites(self):
        self.assertEqual(sorted(available_suites()), sorted(BUILTIN_SUITES))

    def test_unknown_suite(self):
        with self.assertRaises(ArgumentError):
            suite_cells('nonexistent', BUILTIN_SUITES)

    def test_duplicated_cells(self):
        with self.assertRaises(ArgumentError):
            suite_cells('dup', {'dup': [{'name': 'a', 'overrides': {}}, {'name': 'a', 'overrides': {}}]})

    def test_cells_are_valid_overrides(self):
        config = TrainConfig()
        for suite in BUILTIN_SUITES:
            for cell in suite_cells(suite, BUILTIN_SUITES):
                config.replace(**cell['overrides'])

class TestTable(unittest.TestCase):

    def test_summary(self):
        table = AblationTable('s', ['a', 'b'], [CellResult('a', 0, 0.2, 0.4), CellResult('a', 1, 0.4, 0.6),
                                                 CellResult('b', 0, 0.5, 0.5),
                                                 CellResult('b', 1, status='failed', error='boom')])
        rows = {row['cell']: row for row in table.summary_rows()}
        self.assertAlmostEqual(rows['a']['map_mean'], 0.3)
        self.assertAlmostEqual(rows['a']['map_sd'], 0.1414213562, places=8)
        self.assertEqual((rows['a']['n'], rows['a']['failures']), (2, 0))
        self.assertEqual((rows['b']['map_sd'], rows['b']['n'], rows['b']['failures']), (0.0, 1, 1))
        self.assertEqual(len(table.per_seed_rows()), 4)

    def test_all_failed(self):
        table = AblationTable('s', ['a'], [CellResult('a', 0, status='failed')])
        row = table.summary_rows()[0]
        self.assertIsNone(row['map_mean'])
        self.assertIsNone(row['map_sd'])

class TestRunAblation(unittest.TestCase):

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def test_run_and_write(self):
        config = TrainConfig(pretrain_epochs=1, adapt_epochs=1, pretrain_batch=2, eval_every=0)
        table = run_ablation('tiny', config, [0, 1], BenchmarkConfig(num_scenes=3), suites=TINY_SUITES)
        rows = {row['cell']: row for row in table.summary_rows()}
        self.assertEqual(list(rows), ['source_only', 'adapted', 'broken'])
        for cell in ('source_only', 'adapted'):
            self.assertEqual((rows[cell]['n'], rows[cell]['failures']), (2, 0))
            self.assertTrue(0.0 <= rows[cell]['map_mean'] <= 1.0)
            self.assertGreaterEqual(rows[cell]['map_sd'], 0.0)
        self.assertEqual((rows['broken']['n'], rows['broken']['failures']), (0, 2))

        summary_path = write_ablation(table, self.tmp)
        self.assertEqual(summary_path.name, 'tiny_summary.csv')
        summary = read_rows(summary_path)
        self.assertEqual(list(summary[0]), list(SUMMARY_COLUMNS))
        self.assertEqual([r['cell'] for r in summary], ['source_only', 'adapted', 'broken'])
        self.assertEqual(summary[2]['map_mean'], '')
        per_seed = read_rows(self.tmp / 'tiny_per_seed.csv')
        self.assertEqual(list(per_seed[0]), list(PER_SEED_COLUMNS))
        self.assertEqual(len(per_seed), 6)

    def test_needs_seeds(self):
        with self.assertRaises(ArgumentError):
            run_ablation('tiny', TrainConfig(), [], suites=TINY_SUITES)

if __name__ == '__main__':
    unittest.main()
