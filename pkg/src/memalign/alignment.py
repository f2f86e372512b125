#!/usr/bin/env python3

'''
alignment losses: similarity weighted triplet loss on foreground pairs and the adversarial
background loss, a D -> 32 -> 1 domain discriminator behind a gradient reversal
'''

import dataclasses

import numpy as np

from memalign.numerics import ParamSet, affine_forward, affine_backward, relu_forward, relu_backward, sigmoid, DTYPE
from memalign.tools.errors import ArgumentError, DimensionError

STATUS_OK = 'ok'
STATUS_EMPTY = 'empty'
STATUS_SKIPPED = 'skipped'

class DiscriminatorParams():
    def __init__(self, params, dim, hidden=32):
        assert isinstance(params, ParamSet)
        if params['disc/fc1/w'].shape != (dim, hidden) or params['disc/out/w'].shape != (hidden, 1):
            raise DimensionError(f'discriminator weights do not match a {dim} -> {hidden} -> 1 network')
        self.params = params
        self.dim = dim
        self.hidden = hidden

    @classmethod
    def init(cls, rng, dim, hidden=32):
        params = ParamSet()
        params.add('disc/fc1/w', rng.normal(0.0, np.sqrt(2.0 / dim), size=(dim, hidden)).astype(DTYPE))
        params.add('disc/fc1/b', np.zeros(hidden, dtype=DTYPE))
        params.add('disc/out/w', rng.normal(0.0, np.sqrt(1.0 / hidden), size=(hidden, 1)).astype(DTYPE))
        params.add('disc/out/b', np.zeros(1, dtype=DTYPE))
        return cls(params, dim, hidden)

    @classmethod
    def zeros(cls, dim, hidden=32):
        params = ParamSet()
        params.add('disc/fc1/w', np.zeros((dim, hidden), dtype=DTYPE))
        params.add('disc/fc1/b', np.zeros(hidden, dtype=DTYPE))
        params.add('disc/out/w', np.zeros((hidden, 1), dtype=DTYPE))
        params.add('disc/out/b', np.zeros(1, dtype=DTYPE))
        return cls(params, dim, hidden)

    def copy(self):
        return DiscriminatorParams(self.params.copy(), self.dim, self.hidden)

@dataclasses.dataclass
class LossReport:
    value: float
    # 'target': gradient per target feature (rows follow the inputs), plus parameter gradients by name
    grads: dict
    n: int
    status: str = STATUS_OK

def grad_reverse(grad, grl_lambda):
    '''
    backward of the gradient reversal layer, the forward pass is the identity
    '''
    return -grl_lambda * np.asarray(grad)

def loss_fg(pairs, alpha):
    '''
    (1/N) sum_j w_j [ |t - p|^2 - min_n |t - n|^2 + alpha ]_+
    w = cosine(t, p) clamped to [0, 1] and held constant; pairs without negatives use the
    positive-only hinge w |t - p|^2
    '''
    if alpha < 0:
        raise ArgumentError(f'margin must be >= 0, got {alpha}')
    if not pairs:
        return LossReport(0.0, {'target': np.zeros((0, 0))}, 0, STATUS_EMPTY)
    n = len(pairs)
    dim = np.asarray(pairs[0].target_feature).size
    value = 0.0
    grad_targets = np.zeros((n, dim), dtype=np.float64)
    for j, pair in enumerate(pairs):
        t = np.asarray(pair.target_feature, dtype=np.float64).reshape(-1)
        p = np.asarray(pair.positive.vector, dtype=np.float64).reshape(-1)
        w = float(np.clip(pair.similarity, 0.0, 1.0))
        d_pos = float(np.sum((t - p) ** 2))
        if pair.negatives:
            negatives = np.stack([np.asarray(e.vector, dtype=np.float64).reshape(-1) for e in pair.negatives])
            d_negs = np.sum((t[None, :] - negatives) ** 2, axis=1)
            nearest = int(np.argmin(d_negs))
            hinge = d_pos - float(d_negs[nearest]) + alpha
            if hinge > 0.0 and w > 0.0:
                value += w * hinge
                grad_targets[j] = w * (2.0 * (t - p) - 2.0 * (t - negatives[nearest])) / n
        else:
            if d_pos > 0.0 and w > 0.0:
                value += w * d_pos
                grad_targets[j] = w * 2.0 * (t - p) / n
    return LossReport(value / n, {'target': grad_targets}, n, STATUS_OK)

def discriminator_forward_with_cache(v, disc):
    v = np.atleast_2d(np.asarray(v))
    if v.shape[1] != disc.dim:
        raise DimensionError(f'discriminator expects {disc.dim} dim features, got {v.shape[1]}')
    params = disc.params
    h, fc1_cache = affine_forward(v.astype(params['disc/fc1/w'].dtype), params['disc/fc1/w'], params['disc/fc1/b'])
    h, relu_cache = relu_forward(h)
    logit, out_cache = affine_forward(h, params['disc/out/w'], params['disc/out/b'])
    return logit[:, 0], (fc1_cache, relu_cache, out_cache)

def discriminator_forward(v, disc):
    '''
    probability that v comes from the source domain, clamped to (eps, 1 - eps)
    '''
    logit, _ = discriminator_forward_with_cache(v, disc)
    p = sigmoid(logit)
    return float(p[0]) if np.asarray(v).ndim == 1 else p

def discriminator_backward(grad_logit, cache):
    fc1_cache, relu_cache, out_cache = cache
    grad_h, gw_out, gb_out = affine_backward(grad_logit[:, None], out_cache)
    grad_h = relu_backward(grad_h, relu_cache)
    grad_v, gw_fc1, gb_fc1 = affine_backward(grad_h, fc1_cache)
    return grad_v, {'disc/fc1/w': gw_fc1, 'disc/fc1/b': gb_fc1, 'disc/out/w': gw_out, 'disc/out/b': gb_out}

def loss_bg(source_bgs, target_bgs, disc, grl_lambda=1.0):
    '''
    -mean log d(source) - mean log(1 - d(target)), source labelled 1 and target 0
    grads: discriminator parameters (descent direction) and 'target', the feature gradient after
    gradient reversal; source features come from memory and get no gradient
    '''
    if len(source_bgs) == 0 or len(target_bgs) == 0:
        return LossReport(0.0, {'target': np.zeros((len(target_bgs), disc.dim)), **disc.params.zeros_like()}, 0, STATUS_SKIPPED)
    source = np.stack([np.asarray(v, dtype=np.float64).reshape(-1) for v in source_bgs])
    target = np.stack([np.asarray(v, dtype=np.float64).reshape(-1) for v in target_bgs])
    n_s, n_t = source.shape[0], target.shape[0]
    logit, cache = discriminator_forward_with_cache(np.concatenate([source, target]), disc)
    p = sigmoid(logit)
    p_s, p_t = p[:n_s], p[n_s:]
    value = float(-np.mean(np.log(p_s)) - np.mean(np.log(1.0 - p_t)))
    grad_logit = np.concatenate([(p_s - 1.0) / n_s, p_t / n_t])
    grad_v, grads = discriminator_backward(grad_logit, cache)
    grads['target'] = grad_reverse(grad_v[n_s:], grl_lambda)
    return LossReport(max(value, 0.0), grads, n_s + n_t, STATUS_OK)

def discriminator_accuracy(source_bgs, target_bgs, disc):
    p_s = np.atleast_1d(discriminator_forward(np.atleast_2d(np.asarray(source_bgs)), disc))
    p_t = np.atleast_1d(discriminator_forward(np.atleast_2d(np.asarray(target_bgs)), disc))
    correct = int(np.sum(p_s >= 0.5)) + int(np.sum(p_t < 0.5))
    return correct / (p_s.size + p_t.size)
