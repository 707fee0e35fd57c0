"""Functional optimizers over ``{name: ndarray}`` parameter dicts.

``step`` returns fresh arrays and keeps moment estimates on the optimizer
object, so a client's optimizer can be stored between rounds and copied.
"""

import copy

import numpy as np


class SGD:
    def __init__(self, lr, weight_decay=0.0):
        self.lr = lr
        self.weight_decay = weight_decay

    def step(self, params, grads):
        out = {}
        for name, p in params.items():
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * p
            out[name] = p - self.lr * g
        return out

    def clone(self):
        return copy.deepcopy(self)


class Adam:
    """Adam; ``decoupled=True`` gives AdamW-style weight decay."""

    def __init__(self, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0, decoupled=False):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decoupled = decoupled
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        out = {}
        for name, p in params.items():
            g = grads[name]
            if self.weight_decay and not self.decoupled:
                g = g + self.weight_decay * p
            m = self.m.get(name)
            v = self.v.get(name)
            m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
            v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
            self.m[name], self.v[name] = m, v
            if self.weight_decay and self.decoupled:
                p = p * (1 - self.lr * self.weight_decay)
            upd = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            out[name] = (p - upd).astype(p.dtype, copy=False)
        return out

    def clone(self):
        return copy.deepcopy(self)


def make_optimizer(kind, lr, weight_decay=0.0):
    if kind == "sgd":
        return SGD(lr, weight_decay)
    if kind == "adam":
        return Adam(lr, weight_decay=weight_decay)
    if kind == "adamw":
        return Adam(lr, weight_decay=weight_decay, decoupled=True)
    raise ValueError(f"unknown optimizer {kind!r}")
