import sys

import numpy as np
import pytest

from cganseg.autodiff import Tensor

FD_STEP = 1e-5
FD_RTOL = 1e-4


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def numeric_grad(f, t: Tensor, h: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to the entries of ``t``."""
    out = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f().item()
        flat[i] = old - h
        down = f().item()
        flat[i] = old
        out.reshape(-1)[i] = (up - down) / (2 * h)
    return out


def grad_errors(f, tensors) -> list[float]:
    """Relative error between backprop and central differences, one per tensor."""
    for t in tensors:
        t.zero_grad()
    f().backward()
    analytic = [t.grad.copy() for t in tensors]
    return [relative_error(a, numeric_grad(f, t)) for a, t in zip(analytic, tensors)]


def naive_conv2d(x, k, stride, pad):
    n, c, h, w = x.shape
    f, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for b in range(n):
        for o in range(f):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ch in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[b, ch, i * stride + u, j * stride + v] * k[o, ch, u, v]
                    out[b, o, i, j] = acc
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
