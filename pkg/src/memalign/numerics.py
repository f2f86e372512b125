#!/usr/bin/env python3

'''
minimal dense tensor math on numpy arrays: affine / relu / softmax cross entropy layers with
analytic gradients, cosine helpers, SGD with heavy-ball momentum and a finite difference oracle

tensors are float32 numpy arrays, layers keep the dtype they are given so that
gradient checks can run in 64-bit
'''

import io
import hashlib

import numpy as np

from memalign.tools.errors import ArgumentError, DimensionError, UsageError, DegenerateInputError, NumericalError

DTYPE = np.float32
# clamp used inside logs and logistic outputs
PROB_EPS = 1e-6

def as_tensor(x, dtype=DTYPE):
    return np.ascontiguousarray(np.asarray(x, dtype=dtype))

def check_finite(x, what='tensor'):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f'non-finite values in {what}')
    return x

class ParamSet():
    '''
    named parameter tensors with one momentum buffer per parameter
    '''
    def __init__(self):
        self.params = {}
        self.momentum = {}

    def add(self, name, value):
        if name in self.params:
            raise UsageError(f'parameter "{name}" already exists')
        value = np.array(value)
        if value.dtype != np.float64:
            value = value.astype(DTYPE)
        self.params[name] = value
        self.momentum[name] = np.zeros_like(value)

    def __getitem__(self, name):
        return self.params[name]

    def __setitem__(self, name, value):
        if name not in self.params:
            raise UsageError(f'unknown parameter "{name}"')
        if np.shape(value) != self.params[name].shape:
            raise DimensionError(f'parameter "{name}" has shape {self.params[name].shape}, got {np.shape(value)}')
        self.params[name][...] = value

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return sorted(self.params.keys())

    def items(self):
        return [(name, self.params[name]) for name in self.names()]

    def subset(self, prefix):
        return {name: p for name, p in self.items() if name.startswith(prefix)}

    def zeros_like(self):
        return {name: np.zeros_like(p) for name, p in self.items()}

    def reset_momentum(self):
        for buffer in self.momentum.values():
            buffer[...] = 0.0

    def copy(self):
        other = ParamSet()
        for name in self.names():
            other.params[name] = self.params[name].copy()
            other.momentum[name] = self.momentum[name].copy()
        return other

    def astype(self, dtype):
        other = ParamSet()
        for name in self.names():
            other.params[name] = self.params[name].astype(dtype)
            other.momentum[name] = self.momentum[name].astype(dtype)
        return other

    def content_hash(self, prefix=''):
        h = hashlib.sha256()
        for name, p in self.items():
            if name.startswith(prefix):
                h.update(name.encode('utf-8'))
                h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()

    def to_npz_bytes(self):
        buffer = io.BytesIO()
        np.savez(buffer, **{name: p for name, p in self.items()})
        return buffer.getvalue()

    @classmethod
    def from_npz(cls, file_or_path):
        param_set = cls()
        with np.load(file_or_path) as data:
            for name in sorted(data.files):
                param_set.add(name, data[name])
        return param_set

    def __len__(self):
        return len(self.params)

class AffineCache():
    def __init__(self, x, w):
        self.x = x
        self.w = w

def affine_forward(x, w, b):
    '''
    y = xW + b, x is (in,) or (N, in), W is (in, out), b is (out,)
    returns y and the cache needed by affine_backward
    '''
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f'affine: input width {x.shape[-1]} does not match weight rows {w.shape[0]}')
    if b.shape != (w.shape[1],):
        raise DimensionError(f'affine: bias shape {b.shape} does not match weight columns {w.shape[1]}')
    y = x @ w + b
    return y, AffineCache(x, w)

def affine_backward(grad_y, cache):
    '''
    returns grad_x, grad_w, grad_b
    '''
    if cache is None or not isinstance(cache, AffineCache):
        raise UsageError('affine_backward called without the cache of a matching forward pass')
    x, w = cache.x, cache.w
    if grad_y.shape[-1] != w.shape[1] or grad_y.shape[:-1] != x.shape[:-1]:
        raise UsageError(f'affine_backward: gradient shape {grad_y.shape} does not match the cached forward pass')
    grad_x = grad_y @ w.T
    if x.ndim == 1:
        grad_w = np.outer(x, grad_y)
        grad_b = grad_y.copy()
    else:
        grad_w = x.T @ grad_y
        grad_b = grad_y.sum(axis=0)
    return grad_x, grad_w, grad_b

def relu_forward(x):
    return np.maximum(x, 0), x

def relu_backward(grad_y, cache):
    if cache is None:
        raise UsageError('relu_backward called without cache')
    return grad_y * (cache > 0)

def relu(x):
    return relu_forward(x)[0]

def sigmoid(z):
    '''
    logistic clamped to (eps, 1 - eps)
    '''
    z = np.clip(z, -50.0, 50.0)
    p = 1.0 / (1.0 + np.exp(-z))
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)

def softmax(logits):
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)

def softmax_cross_entropy(logits, label):
    '''
    loss = -log softmax(logits)[label], grad = softmax(logits) - onehot(label)
    logits (C,) with an int label, or (N, C) with N labels; the batch version returns the mean
    '''
    logits = np.asarray(logits)
    num_classes = logits.shape[-1]
    labels = np.atleast_1d(np.asarray(label))
    if labels.dtype.kind not in 'iu':
        raise ArgumentError(f'labels must be integers, got {labels.dtype}')
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise ArgumentError(f'label out of range for {num_classes} classes: {labels.tolist()}')
    batched = logits.ndim == 2
    logits_2d = logits if batched else logits[None, :]
    if logits_2d.shape[0] != labels.shape[0]:
        raise DimensionError(f'{logits_2d.shape[0]} logit rows for {labels.shape[0]} labels')
    shifted = logits_2d - np.max(logits_2d, axis=1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted.astype(np.float64)), axis=1))
    rows = np.arange(labels.shape[0])
    losses = log_z - shifted[rows, labels]
    grad = softmax(logits_2d)
    grad[rows, labels] -= 1.0
    n = labels.shape[0]
    loss = float(np.sum(losses) / n)
    grad = (grad / n).astype(logits.dtype)
    if not batched:
        grad = grad[0]
    return max(loss, 0.0), grad

def binary_cross_entropy(p, target):
    '''
    mean of -[t log p + (1 - t) log(1 - p)], returns (loss, grad wrt the logit that produced p)
    '''
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    loss = -np.mean(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))
    grad_logit = (p - target) / p.size
    return float(loss), grad_logit

def l2_norm(v):
    return float(np.sqrt(np.sum(np.square(np.asarray(v, dtype=np.float64)))))

def l2_normalize(v):
    norm = l2_norm(v)
    if norm == 0.0 or not np.isfinite(norm):
        raise DegenerateInputError('cannot normalize a zero (or non-finite) vector')
    return (np.asarray(v, dtype=np.float64) / norm).astype(np.asarray(v).dtype)

def l2_normalize_rows(m):
    m64 = np.asarray(m, dtype=np.float64)
    norms = np.sqrt(np.sum(np.square(m64), axis=1, keepdims=True))
    if np.any(norms == 0.0):
        raise DegenerateInputError('cannot normalize a zero row')
    return m64 / norms

def cosine_similarity(a, b):
    norm_a, norm_b = l2_norm(a), l2_norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise DegenerateInputError('cosine similarity of a zero vector is undefined')
    dot = float(np.dot(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)))
    return float(np.clip(dot / (norm_a * norm_b), -1.0, 1.0))

def sgd_step(params, grads, lr, momentum):
    '''
    heavy-ball momentum: v <- momentum * v + grad ; p <- p - lr * v (buffers updated in place)
    '''
    assert isinstance(params, ParamSet)
    if set(grads.keys()) != set(params.names()):
        missing = set(params.names()) - set(grads.keys())
        extra = set(grads.keys()) - set(params.names())
        raise UsageError(f'gradient names do not match parameters, missing: {sorted(missing)}, unknown: {sorted(extra)}')
    for name in params.names():
        grad = grads[name]
        if grad.shape != params.params[name].shape:
            raise DimensionError(f'gradient for "{name}" has shape {grad.shape}, expected {params.params[name].shape}')
        velocity = params.momentum[name]
        velocity *= momentum
        velocity += grad
        if lr != 0.0:
            params.params[name] -= lr * velocity

def finite_diff_grad(f, x, eps=1e-3):
    '''
    central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per coordinate, evaluated in 64-bit
    '''
    if eps <= 0:
        raise ArgumentError(f'eps must be positive, got {eps}')
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_grad = grad.reshape(-1)
    for i in range(flat_x.size):
        original = flat_x[i]
        flat_x[i] = original + eps
        f_plus = float(f(x))
        flat_x[i] = original - eps
        f_minus = float(f(x))
        flat_x[i] = original
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericalError(f'non-finite function value while differentiating coordinate {i}')
        flat_grad[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad

def relative_error(a, b):
    '''
    norm based relative error used by the gradient oracle
    '''
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denominator = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denominator)

def im2col(image, patch, stride):
    '''
    (H, W, C) image -> (H', W', patch * patch * C) patches taken every `stride` pixels
    '''
    windows = np.lib.stride_tricks.sliding_window_view(image, (patch, patch), axis=(0, 1))
    # windows: (H - patch + 1, W - patch + 1, C, patch, patch)
    windows = windows[::stride, ::stride]
    windows = np.transpose(windows, (0, 1, 3, 4, 2))
    h_out, w_out = windows.shape[:2]
    return np.ascontiguousarray(windows.reshape(h_out, w_out, -1))

def accumulate_grads(total, grads, scale=1.0):
    '''
    total[name] += scale * grads[name], missing names in total are created
    '''
    for name, grad in grads.items():
        if name in total:
            total[name] += scale * grad
        else:
            total[name] = scale * grad
    return total
