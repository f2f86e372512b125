#!/usr/bin/env python3

import csv
import shutil
import tempfile
import unittest

from contextlib import redirect_stdout, redirect_stderr
from io import StringIO
from pathlib import Path

from memalign.cli import main
from memalign.tools.artifact_io import read_json
from memalign.tools.errors import EXIT_SUCCESS, EXIT_VALIDATION, EXIT_RUNTIME

def run_cli(*argv):
    with redirect_stdout(StringIO()), redirect_stderr(StringIO()):
        return main([str(a) for a in argv] + ['--log-level', 'WARNING'])

class TestCli(unittest.TestCase):
    '''
    gen-data, pretrain, build-memory, subsample, adapt, eval and report on a three scene benchmark
    '''
    @classmethod
    def setUpClass(cls):
        cls.tmp = Path(tempfile.mkdtemp())
        cls.data = cls.tmp / 'data'
        cls.detector = cls.tmp / 'detector'
        assert run_cli('gen-data', '--out', cls.data, '--scenes', 3) == EXIT_SUCCESS
        assert run_cli('pretrain', '--out', cls.detector, '--data', cls.data, '--epochs', 1) == EXIT_SUCCESS

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp)

    def test_gen_data_outputs(self):
        for name in ('manifest.json', 'provenance.json', 'scenes', 'experiment.json'):
            self.assertTrue((self.data / name).exists(), name)
        record = read_json(self.data / 'experiment.json', sealed=True)
        self.assertEqual(record['command'], 'gen-data')
        self.assertEqual(record['config']['num_scenes'], 3)

    def test_refuses_non_empty_output(self):
        self.assertEqual(run_cli('gen-data', '--out', self.data, '--scenes', 3), EXIT_VALIDATION)
        forced = self.tmp / 'forced'
        self.assertEqual(run_cli('gen-data', '--out', forced, '--scenes', 2), EXIT_SUCCESS)
        self.assertEqual(run_cli('gen-data', '--out', forced, '--scenes', 2, '--force'), EXIT_SUCCESS)

    def test_pretrain_outputs(self):
        for name in ('detector.npz', 'detector.json', 'trace.csv', 'experiment.json'):
            self.assertTrue((self.detector / name).is_file(), name)

    def test_eval(self):
        out = self.tmp / 'eval'
        self.assertEqual(run_cli('eval', '--out', out, '--data', self.data, '--detector', self.detector), EXIT_SUCCESS)
        with open(out / 'eval.csv', newline='') as f:
            rows = list(csv.DictReader(f))
        self.assertEqual(len(rows), 1)
        self.assertEqual(list(rows[0])[:7], ['split', 'map', 'accuracy', 'tp', 'fp', 'fn', 'n_gt'])
        self.assertEqual(rows[0]['split'], 'target')
        self.assertTrue(0.0 <= float(rows[0]['map']) <= 1.0)

    def test_eval_unknown_split(self):
        out = self.tmp / 'eval_bad'
        self.assertEqual(run_cli('eval', '--out', out, '--data', self.data, '--detector', self.detector,
                                 '--split', 'validation'), EXIT_VALIDATION)

    def test_memory_and_adapt(self):
        memory, small, adapted = self.tmp / 'memory', self.tmp / 'memory_small', self.tmp / 'adapted'
        self.assertEqual(run_cli('build-memory', '--out', memory, '--data', self.data, '--detector', self.detector),
                         EXIT_SUCCESS)
        self.assertTrue((memory / 'memory.json').is_file())
        self.assertEqual(run_cli('subsample', '--out', small, '--memory', memory, '--method', 'random'), EXIT_SUCCESS)
        self.assertEqual(run_cli('adapt', '--out', adapted, '--data', self.data, '--detector', self.detector,
                                 '--memory', small, '--epochs', 1), EXIT_SUCCESS)
        self.assertTrue((adapted / 'detector.npz').is_file())
        record = read_json(adapted / 'experiment.json', sealed=True)
        self.assertEqual(record['config']['adapt_epochs'], 1)

        report = self.tmp / 'report'
        self.assertEqual(run_cli('report', '--out', report, '--in', adapted), EXIT_SUCCESS)
        self.assertTrue((report / 'adapted_training.svg').is_file())

    def test_missing_inputs(self):
        self.assertEqual(run_cli('pretrain', '--out', self.tmp / 'nowhere', '--data', self.tmp / 'missing'), EXIT_RUNTIME)
        self.assertEqual(run_cli('report', '--out', self.tmp / 'empty_report', '--in', self.data), EXIT_VALIDATION)

    def test_unknown_suite(self):
        out = self.tmp / 'ablate'
        self.assertEqual(run_cli('ablate', '--out', out, '--suite', 'nonexistent'), EXIT_VALIDATION)
        self.assertFalse(out.exists())

    def test_csv_report(self):
        summary = self.tmp / 'tables' / 'fg_bg_summary.csv'
        summary.parent.mkdir()
        summary.write_text('suite,cell,map_mean,map_sd,accuracy_mean,accuracy_sd,n,failures\n'
                           'fg_bg,fg_bg,0.5,0.1,0.6,0.0,3,0\n'
                           'fg_bg,fg_only,,,,,0,3\n')
        out = self.tmp / 'csv_report'
        self.assertEqual(run_cli('report', '--out', out, '--in', summary, '--format', 'csv'), EXIT_SUCCESS)
        with open(out / 'fg_bg_report.csv', newline='') as f:
            rows = list(csv.DictReader(f))
        self.assertEqual(rows[0]['map'], '0.5000 ± 0.1000')
        self.assertEqual(rows[1]['map'], 'n/a')

if __name__ == '__main__':
    unittest.main()
