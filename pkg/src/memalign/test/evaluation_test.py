#!/usr/bin/env python3

import unittest

import numpy as np

from memalign.detector import Detection
from memalign.evaluation import (iou, iou_matrix, match_detections, average_precision, mean_ap, detection_accuracy,
                                 evaluate)
from memalign.synthgen import AnnotatedBox
from memalign.tools.errors import ArgumentError, EvaluationError

def gt(x0, y0, x1, y1, class_id=0):
    return AnnotatedBox(float(x0), float(y0), float(x1), float(y1), class_id)

def det(x0, y0, x1, y1, class_id=0, score=0.9):
    return Detection(float(x0), float(y0), float(x1), float(y1), class_id, score)

class TestIou(unittest.TestCase):

    def test_half_overlap(self):
        # 2x2 boxes shifted by one: intersection 2, union 6
        self.assertAlmostEqual(iou((0, 0, 2, 2), (1, 0, 3, 2)), 1.0 / 3.0)

    def test_identical_and_disjoint(self):
        self.assertEqual(iou((0, 0, 4, 4), (0, 0, 4, 4)), 1.0)
        self.assertEqual(iou((0, 0, 4, 4), (5, 5, 8, 8)), 0.0)
        self.assertEqual(iou((0, 0, 0, 0), (0, 0, 0, 0)), 0.0)

    def test_objects(self):
        self.assertAlmostEqual(iou(det(0, 0, 2, 2), gt(1, 0, 3, 2)), 1.0 / 3.0)

    def test_matrix(self):
        rng = np.random.default_rng(0)
        a = np.sort(rng.uniform(0, 50, size=(5, 2, 2)), axis=1).transpose(0, 2, 1).reshape(5, 4)[:, [0, 2, 1, 3]]
        b = np.sort(rng.uniform(0, 50, size=(4, 2, 2)), axis=1).transpose(0, 2, 1).reshape(4, 4)[:, [0, 2, 1, 3]]
        matrix = iou_matrix(a, b)
        self.assertEqual(matrix.shape, (5, 4))
        for i in range(5):
            for j in range(4):
                self.assertAlmostEqual(matrix[i, j], iou(a[i], b[j]))

class TestMatching(unittest.TestCase):

    def test_duplicate_detection(self):
        flags = match_detections([det(0, 0, 10, 10, score=0.9), det(0, 0, 10, 10, score=0.8)], [gt(0, 0, 10, 10)])
        self.assertEqual(flags, [True, False])

    def test_class_must_match(self):
        self.assertEqual(match_detections([det(0, 0, 10, 10, class_id=1)], [gt(0, 0, 10, 10)]), [False])

    def test_best_overlap_wins(self):
        gts = [gt(0, 0, 10, 10), gt(2, 0, 12, 10)]
        flags = match_detections([det(2, 0, 12, 10, score=0.9), det(0, 0, 10, 10, score=0.8)], gts)
        self.assertEqual(flags, [True, True])

    def test_threshold(self):
        self.assertEqual(match_detections([det(0, 0, 10, 10)], [gt(5, 0, 15, 10)]), [False])

    def test_unsorted(self):
        with self.assertRaises(ArgumentError):
            match_detections([det(0, 0, 1, 1, score=0.1), det(0, 0, 1, 1, score=0.9)], [])

class TestAveragePrecision(unittest.TestCase):

    def test_tp_then_fp(self):
        self.assertAlmostEqual(average_precision([True, False], [0.9, 0.8], 1), 1.0)

    def test_fp_then_tp(self):
        self.assertAlmostEqual(average_precision([False, True], [0.9, 0.8], 1), 0.5)

    def test_partial_recall(self):
        self.assertAlmostEqual(average_precision([True], [0.9], 2), 0.5)

    def test_no_detection(self):
        self.assertEqual(average_precision([], [], 3), 0.0)

    def test_undefined(self):
        self.assertIsNone(average_precision([True], [0.9], 0))
        with self.assertRaises(ArgumentError):
            average_precision([], [], -1)

    def test_mean_ap(self):
        self.assertAlmostEqual(mean_ap({0: 1.0, 1: 0.5, 2: None}), 0.75)
        with self.assertRaises(EvaluationError):
            mean_ap({0: None})

class TestEvaluate(unittest.TestCase):

    def test_perfect(self):
        gts = [[gt(0, 0, 10, 10, 0), gt(20, 20, 30, 30, 1)], [gt(5, 5, 15, 15, 1)]]
        dets = [[det(0, 0, 10, 10, 0), det(20, 20, 30, 30, 1)], [det(5, 5, 15, 15, 1, 0.7)]]
        report = evaluate(dets, gts, num_classes=3)
        self.assertEqual(report.map, 1.0)
        self.assertEqual(report.accuracy, 1.0)
        self.assertEqual((report.tp, report.fp, report.fn, report.n_gt), (3, 0, 0, 3))
        self.assertEqual(report.undefined_classes, [2])
        self.assertEqual(report.as_row()['ap_2'], '')

    def test_duplicates_count_once(self):
        report = evaluate([[det(0, 0, 10, 10, score=0.9), det(0, 0, 10, 10, score=0.8)]], [[gt(0, 0, 10, 10)]], 1)
        self.assertEqual((report.tp, report.fp), (1, 1))
        self.assertEqual(report.map, 1.0)

    def test_accuracy_threshold(self):
        report = evaluate([[det(0, 0, 10, 10, score=0.3)]], [[gt(0, 0, 10, 10)]], 1)
        self.assertEqual(report.map, 1.0)
        self.assertEqual(report.accuracy, 0.0)
        self.assertEqual(detection_accuracy([[det(0, 0, 10, 10, score=0.3)]], [[gt(0, 0, 10, 10)]]), 1.0)

    def test_missed_object(self):
        report = evaluate([[], [det(0, 0, 10, 10)]], [[gt(0, 0, 10, 10)], [gt(0, 0, 10, 10)]], 1)
        self.assertAlmostEqual(report.map, 0.5)
        self.assertAlmostEqual(report.accuracy, 0.5)
        self.assertEqual(report.fn, 1)

    def test_no_ground_truth(self):
        with self.assertRaises(EvaluationError):
            evaluate([[det(0, 0, 10, 10)]], [[]], 1)

    def test_length_mismatch(self):
        with self.assertRaises(ArgumentError):
            evaluate([[]], [[], []], 1)

if __name__ == '__main__':
    unittest.main()
