"""Adam and Adamax."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)  # adam: squared moment, adamax: infinity norm
    step: int = 0


class Optimizer:
    kind = ""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params: list[Tensor] = [p for p in params if p.requires_grad]
        self.state = OptimizerState(
            self.kind, lr, beta1, beta2, eps,
            m=[np.zeros_like(p.data) for p in self.params],
            v=[np.zeros_like(p.data) for p in self.params],
        )
        self._scratch = [np.empty_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        if not any(p._has_grad for p in self.params):
            raise RuntimeError("optimizer step before any backward pass")
        s = self.state
        s.step += 1
        for i, p in enumerate(self.params):
            if p._has_grad:
                self._update(p, p.grad, i, s)

    def _update(self, p: Tensor, g: np.ndarray, i: int, s: OptimizerState) -> None:
        raise NotImplementedError


class Adam(Optimizer):
    kind = "adam"

    def _update(self, p, g, i, s):
        m, v, tmp = s.m[i], s.v[i], self._scratch[i]
        m *= s.beta1
        np.multiply(g, 1 - s.beta1, out=tmp)
        m += tmp
        v *= s.beta2
        np.multiply(g, g, out=tmp)
        tmp *= 1 - s.beta2
        v += tmp
        # tmp <- lr * mhat / (sqrt(vhat) + eps)
        np.sqrt(v, out=tmp)
        tmp /= np.sqrt(1 - s.beta2**s.step)
        tmp += s.epsilon
        np.divide(m, tmp, out=tmp)
        tmp *= s.learning_rate / (1 - s.beta1**s.step)
        p.data -= tmp


class Adamax(Optimizer):
    kind = "adamax"

    def _update(self, p, g, i, s):
        m, u, tmp = s.m[i], s.v[i], self._scratch[i]
        m *= s.beta1
        np.multiply(g, 1 - s.beta1, out=tmp)
        m += tmp
        u *= s.beta2
        np.abs(g, out=tmp)
        tmp += s.epsilon
        np.maximum(u, tmp, out=u)
        np.divide(m, u, out=tmp)
        tmp *= s.learning_rate / (1 - s.beta1**s.step)
        p.data -= tmp


def make_optimizer(kind: str, params, **kwargs) -> Optimizer:
    kinds = {"adam": Adam, "adamax": Adamax}
    if kind not in kinds:
        raise ValueError(f"unknown optimizer {kind!r}")
    return kinds[kind](params, **kwargs)
