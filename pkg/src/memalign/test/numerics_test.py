#!/usr/bin/env python3

import unittest

import numpy as np

from memalign.numerics import (ParamSet, affine_forward, affine_backward, relu_forward, relu_backward, softmax,
                               softmax_cross_entropy, sigmoid, binary_cross_entropy, l2_norm, l2_normalize,
                               cosine_similarity, sgd_step, finite_diff_grad, relative_error, im2col,
                               accumulate_grads, DTYPE)
from memalign.tools.errors import ArgumentError, DimensionError, UsageError, DegenerateInputError

class TestLayers(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(3)

    def test_affine_shapes(self):
        x = np.ones((5, 4))
        y, _ = affine_forward(x, np.ones((4, 3)), np.zeros(3))
        self.assertEqual(y.shape, (5, 3))
        self.assertTrue(np.allclose(y, 4.0))

    def test_affine_width_mismatch(self):
        with self.assertRaises(DimensionError):
            affine_forward(np.ones((2, 5)), np.ones((4, 3)), np.zeros(3))

    def test_affine_backward_without_cache(self):
        with self.assertRaises(UsageError):
            affine_backward(np.ones((2, 3)), None)

    def test_affine_gradient_oracle(self):
        for _ in range(10):
            x = self.rng.normal(size=(3, 4))
            w = self.rng.normal(size=(4, 2))
            b = self.rng.normal(size=2)
            upstream = self.rng.normal(size=(3, 2))
            y, cache = affine_forward(x, w, b)
            grad_x, grad_w, grad_b = affine_backward(upstream, cache)
            self.assertLess(relative_error(grad_x, finite_diff_grad(lambda v: np.sum(affine_forward(v, w, b)[0] * upstream), x)), 1e-6)
            self.assertLess(relative_error(grad_w, finite_diff_grad(lambda v: np.sum(affine_forward(x, v, b)[0] * upstream), w)), 1e-6)
            self.assertLess(relative_error(grad_b, finite_diff_grad(lambda v: np.sum(affine_forward(x, w, v)[0] * upstream), b)), 1e-6)

    def test_relu(self):
        y, cache = relu_forward(np.array([-1.0, 0.0, 2.0]))
        self.assertTrue(np.array_equal(y, [0.0, 0.0, 2.0]))
        self.assertTrue(np.array_equal(relu_backward(np.ones(3), cache), [0.0, 0.0, 1.0]))

    def test_softmax_sums_to_one(self):
        p = softmax(self.rng.normal(size=(4, 6)) * 30.0)
        self.assertTrue(np.allclose(p.sum(axis=1), 1.0))

    def test_cross_entropy_uniform(self):
        loss, grad = softmax_cross_entropy(np.zeros(4), 2)
        self.assertAlmostEqual(loss, np.log(4.0), places=6)
        self.assertTrue(np.allclose(grad, [0.25, 0.25, -0.75, 0.25]))

    def test_cross_entropy_confident(self):
        loss, _ = softmax_cross_entropy(np.array([100.0, 0.0, 0.0]), 0)
        self.assertGreaterEqual(loss, 0.0)
        self.assertLess(loss, 1e-10)

    def test_cross_entropy_label_out_of_range(self):
        with self.assertRaises(ArgumentError):
            softmax_cross_entropy(np.zeros(3), 3)

    def test_cross_entropy_gradient_oracle(self):
        for _ in range(10):
            logits = self.rng.normal(size=(4, 5))
            labels = self.rng.integers(0, 5, size=4)
            _, grad = softmax_cross_entropy(logits, labels)
            numeric = finite_diff_grad(lambda v: softmax_cross_entropy(v, labels)[0], logits)
            self.assertLess(relative_error(grad, numeric), 1e-4)

    def test_sigmoid_clamped(self):
        p = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        self.assertGreater(p[0], 0.0)
        self.assertAlmostEqual(float(p[1]), 0.5)
        self.assertLess(p[2], 1.0)

    def test_binary_cross_entropy_gradient(self):
        z = self.rng.normal(size=6)
        target = np.array([1.0, 0.0, 1.0, 0.0, 1.0, 1.0])
        _, grad = binary_cross_entropy(sigmoid(z), target)
        numeric = finite_diff_grad(lambda v: binary_cross_entropy(sigmoid(v), target)[0], z)
        self.assertLess(relative_error(grad, numeric), 1e-4)

class TestVectors(unittest.TestCase):

    def test_norm(self):
        self.assertAlmostEqual(l2_norm([3.0, 4.0]), 5.0)

    def test_normalize_zero(self):
        with self.assertRaises(DegenerateInputError):
            l2_normalize(np.zeros(3))

    def test_cosine(self):
        self.assertAlmostEqual(cosine_similarity([1.0, 0.0], [1.0, 0.0]), 1.0)
        self.assertAlmostEqual(cosine_similarity([1.0, 0.0], [0.0, 2.0]), 0.0)
        self.assertAlmostEqual(cosine_similarity([1.0, 1.0], [-2.0, -2.0]), -1.0)

    def test_cosine_zero(self):
        with self.assertRaises(DegenerateInputError):
            cosine_similarity([0.0, 0.0], [1.0, 0.0])

class TestParamSet(unittest.TestCase):

    def get_param_set(self):
        params = ParamSet()
        params.add('layer/w', np.ones((2, 2), dtype=DTYPE))
        params.add('layer/b', np.zeros(2, dtype=DTYPE))
        return params

    def test_duplicate(self):
        params = self.get_param_set()
        with self.assertRaises(UsageError):
            params.add('layer/w', np.ones(2))

    def test_copy_is_independent(self):
        params = self.get_param_set()
        other = params.copy()
        other['layer/w'] = np.full((2, 2), 5.0)
        self.assertTrue(np.all(params['layer/w'] == 1.0))
        self.assertNotEqual(params.content_hash(), other.content_hash())

    def test_npz_round_trip_keeps_hash(self):
        import io
        params = self.get_param_set()
        loaded = ParamSet.from_npz(io.BytesIO(params.to_npz_bytes()))
        self.assertEqual(params.content_hash(), loaded.content_hash())

    def test_sgd_zero_lr_keeps_params(self):
        params = self.get_param_set()
        before = params.content_hash()
        sgd_step(params, {'layer/w': np.ones((2, 2)), 'layer/b': np.ones(2)}, 0.0, 0.9)
        self.assertEqual(params.content_hash(), before)
        self.assertTrue(np.allclose(params.momentum['layer/b'], 1.0))

    def test_sgd_momentum(self):
        params = self.get_param_set()
        grads = {'layer/w': np.zeros((2, 2)), 'layer/b': np.ones(2)}
        sgd_step(params, grads, 0.1, 0.5)
        self.assertTrue(np.allclose(params['layer/b'], -0.1))
        sgd_step(params, grads, 0.1, 0.5)
        # v = 0.5 * 1 + 1 = 1.5
        self.assertTrue(np.allclose(params['layer/b'], -0.1 - 0.15))

    def test_sgd_missing_gradient(self):
        params = self.get_param_set()
        with self.assertRaises(UsageError):
            sgd_step(params, {'layer/w': np.zeros((2, 2))}, 0.1, 0.9)

    def test_reset_momentum(self):
        params = self.get_param_set()
        sgd_step(params, {'layer/w': np.ones((2, 2)), 'layer/b': np.ones(2)}, 0.1, 0.9)
        params.reset_momentum()
        self.assertFalse(np.any(params.momentum['layer/w']))

    def test_accumulate(self):
        total = {'a': np.ones(2)}
        accumulate_grads(total, {'a': np.ones(2), 'b': np.ones(3)}, scale=2.0)
        self.assertTrue(np.allclose(total['a'], 3.0))
        self.assertTrue(np.allclose(total['b'], 2.0))

class TestIm2col(unittest.TestCase):

    def test_shape(self):
        image = np.zeros((64, 64, 3), dtype=DTYPE)
        self.assertEqual(im2col(image, 8, 4).shape, (15, 15, 192))

    def test_patch_content(self):
        image = np.arange(16 * 16 * 3, dtype=np.float64).reshape(16, 16, 3)
        cols = im2col(image, 8, 4)
        self.assertTrue(np.array_equal(cols[1, 2], image[4:12, 8:16].reshape(-1)))

    def test_finite_diff_eps(self):
        with self.assertRaises(ArgumentError):
            finite_diff_grad(lambda v: 0.0, np.zeros(2), eps=0.0)

if __name__ == '__main__':
    unittest.main()
