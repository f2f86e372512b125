#!/usr/bin/env python3

import shutil
import tempfile
import unittest

from pathlib import Path

from memalign.trainer import MetricsTrace
from memalign.visualisation.report_plots import sweep_value, plot_ablation, plot_training_curves
from memalign.tools.errors import ArgumentError

SWEEP = [{'suite': 'delta_sweep', 'cell': f'delta_{d}', 'map_mean': str(0.1 + d / 2), 'map_sd': '0.02',
          'accuracy_mean': str(0.2 + d / 2), 'accuracy_sd': '', 'n': '5', 'failures': '0'} for d in (0.9, 0.0, 0.4)]
CATEGORIES = [{'suite': 'fg_bg', 'cell': name, 'map_mean': 0.3, 'map_sd': 0.05, 'accuracy_mean': 0.4, 'accuracy_sd': 0.01}
              for name in ('fg_bg', 'fg_only', 'bg_only')]

class TestReportPlots(unittest.TestCase):

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def test_sweep_value(self):
        self.assertEqual(sweep_value('delta_0.4'), 0.4)
        self.assertEqual(sweep_value('lambda_fg_0.05'), 0.05)
        self.assertIsNone(sweep_value('fg_only'))

    def test_charts_are_reproducible(self):
        for rows in (SWEEP, CATEGORIES):
            a = plot_ablation(rows, self.tmp / 'a.svg')
            b = plot_ablation(rows, self.tmp / 'b.svg')
            self.assertTrue(a.read_text().lstrip().startswith('<?xml'))
            self.assertEqual(a.read_bytes(), b.read_bytes())

    def test_empty_table(self):
        with self.assertRaises(ArgumentError):
            plot_ablation([], self.tmp / 'empty.svg')

    def test_training_curves(self):
        trace = MetricsTrace()
        for epoch in (1, 2):
            trace.append(phase='pretrain', epoch=epoch, l_sup=1.0 / epoch, l_unsup=0.0, l_fg=0.0, l_bg=0.0,
                         l_total=1.0 / epoch, map=None if epoch == 1 else 0.4, accuracy=None if epoch == 1 else 0.5)
            trace.append(phase='adapt', epoch=epoch, l_sup=0.5, l_unsup=0.2, l_fg=0.1, l_bg=0.7, l_total=1.5,
                         map=0.5, accuracy=0.6)
        path = plot_training_curves(trace, self.tmp / 'sub' / 'curves.svg')
        self.assertTrue(path.is_file())
        with self.assertRaises(ArgumentError):
            plot_training_curves(MetricsTrace(), self.tmp / 'none.svg')

if __name__ == '__main__':
    unittest.main()
