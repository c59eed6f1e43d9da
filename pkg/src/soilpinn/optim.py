"""First-order optimizers and the batching scheme.

All three optimizers update a flat list of parameter arrays in place from a
matching list of gradient arrays:

    GD:       p <- p - lr * g
    RMSProp:  E <- beta * E + (1 - beta) * g^2
              p <- p - lr * g / max(sqrt(E), eps)
    Adam:     m <- b1 * m + (1 - b1) * g
              v <- b2 * v + (1 - b2) * g^2
              mhat = m / (1 - b1^t);  vhat = v / (1 - b2^t)
              p <- p - lr * mhat / (sqrt(vhat) + eps)

RMSProp floors its denominator with max() so a zero-gradient cold start
steps by exactly zero and the first step equals -lr * sign(g) / sqrt(1-beta)
exactly; Adam keeps the conventional additive eps inside the denominator.
A non-finite gradient raises before any state is touched.

Defaults: lr 1e-2 for GD, 1e-3 for RMSProp and Adam; beta 0.9; Adam
betas (0.9, 0.999); eps 1e-8.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["GradientDescent", "RMSProp", "Adam", "make_optimizer",
           "make_batches"]


def _check_finite(grads):
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")


class GradientDescent:
    def __init__(self, lr=1e-2):
        self.lr = lr

    def step(self, params, grads):
        _check_finite(grads)
        for p, g in zip(params, grads):
            p -= self.lr * g


class RMSProp:
    def __init__(self, lr=1e-3, beta=0.9, eps=1e-8):
        self.lr = lr
        self.beta = beta
        self.eps = eps
        self.sq_avg = None

    def step(self, params, grads):
        _check_finite(grads)
        if self.sq_avg is None:
            self.sq_avg = [np.zeros_like(p) for p in params]
        for p, g, e in zip(params, grads, self.sq_avg):
            e *= self.beta
            e += (1.0 - self.beta) * g * g
            p -= self.lr * g / np.maximum(np.sqrt(e), self.eps)


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        _check_finite(grads)
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


_DEFAULT_LR = {"gd": 1e-2, "rmsprop": 1e-3, "adam": 1e-3}


def make_optimizer(name, lr=None, **hyper):
    """Optimizer by name ('gd' | 'rmsprop' | 'adam') with default rates."""
    key = name.lower()
    if key not in _DEFAULT_LR:
        raise ValueError(f"unknown optimizer {name!r}")
    rate = _DEFAULT_LR[key] if lr is None else lr
    if key == "gd":
        return GradientDescent(lr=rate)
    if key == "rmsprop":
        return RMSProp(lr=rate, **hyper)
    return Adam(lr=rate, **hyper)


def make_batches(n_sensors, n_coll, batch_size, seed, epoch,
                 full_batch=False, all_collocation=False):
    """Index batches for one epoch.

    Full-batch: a single batch holding every sensor and collocation index.
    Mini-batch: a seeded permutation of the sensor indices split into
    ``batch_size`` chunks (the last one may be short), each paired with a
    without-replacement collocation sample of size
    ceil(n_coll * len(chunk) / n_sensors), so the sensor/collocation
    proportion is preserved per batch. The permutation and the samples are
    determined by (seed, epoch); a different epoch reshuffles.

    Returns a list of (sensor_indices, collocation_indices) pairs.
    """
    if full_batch:
        return [(np.arange(n_sensors), np.arange(n_coll))]
    rng = np.random.default_rng([seed, epoch])
    perm = rng.permutation(n_sensors)
    batches = []
    for start in range(0, n_sensors, batch_size):
        chunk = perm[start:start + batch_size]
        if all_collocation:
            coll = np.arange(n_coll)
        else:
            take = math.ceil(n_coll * len(chunk) / n_sensors)
            coll = rng.choice(n_coll, size=take, replace=False)
        batches.append((chunk, coll))
    return batches
