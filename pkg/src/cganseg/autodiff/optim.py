from __future__ import annotations

import weakref
from typing import Iterable, Sequence

import numpy as np

from .tensor import Tensor


class MissingGradError(RuntimeError):
    pass


class _Moments:
    __slots__ = ("m", "v", "t")

    def __init__(self, like: np.ndarray):
        self.m = np.zeros_like(like)
        self.v = np.zeros_like(like)
        self.t = 0


def _update(p: Tensor, state: _Moments, lr: float, beta1: float, beta2: float, eps: float) -> None:
    g = p._grad
    state.t += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * g
    state.v *= beta2
    state.v += (1.0 - beta2) * (g * g)
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def _check(params: Sequence[Tensor]) -> None:
    for i, p in enumerate(params):
        if not p.requires_grad or p._grad is None:
            raise MissingGradError(f"parameter {i} {p.shape} has no gradient")


class Adam:
    """Adam with bias-corrected moments, one state slot per parameter."""

    def __init__(self, params: Iterable[Tensor], lr: float = 2e-4, beta1: float = 0.5,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = [_Moments(p.data) for p in self.params]

    def step(self) -> None:
        _check(self.params)
        for p, s in zip(self.params, self.state):
            _update(p, s, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


_free_state: "weakref.WeakKeyDictionary[Tensor, _Moments]" = weakref.WeakKeyDictionary()


def adam_step(params: Sequence[Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Functional Adam update; moment state is kept per tensor across calls."""
    _check(params)
    for p in params:
        state = _free_state.get(p)
        if state is None:
            state = _free_state[p] = _Moments(p.data)
        _update(p, state, lr, beta1, beta2, eps)


def moments_of(p: Tensor) -> tuple[np.ndarray, np.ndarray, int] | None:
    state = _free_state.get(p)
    return None if state is None else (state.m.copy(), state.v.copy(), state.t)
