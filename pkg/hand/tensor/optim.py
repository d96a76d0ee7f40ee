#!/usr/bin/env python3
"""
Adam with optional linear warmup and per-epoch multiplicative decay.
"""
import numpy as np

from ..lib.errors import ParameterError


class Adam:

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 warmup_steps=0, decay=1.0):
        if lr < 0:
            raise ParameterError("learning rate must be >= 0")
        if not 0.0 < decay <= 1.0:
            raise ParameterError("lr decay must be in (0, 1]")
        self.params = list(params)
        self.base_lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.warmup_steps = int(warmup_steps)
        self.decay = decay
        self.epoch = 0
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    @property
    def lr(self):
        lr = self.base_lr * self.decay ** self.epoch
        if self.warmup_steps and self.t < self.warmup_steps:
            lr *= (self.t + 1) / self.warmup_steps
        return lr

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def end_epoch(self):
        self.epoch += 1

    def step(self):
        lr = self.lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            if lr == 0.0:
                continue
            m_hat = self.m[i] / (1 - b1 ** self.t)
            v_hat = self.v[i] / (1 - b2 ** self.t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)
