"""Dense float64 numerics shared by every learned model.

Matrices are plain 2-D ``numpy.float64`` arrays. Random draws come from
``numpy.random.Generator`` over the PCG64 bit generator; a seed fully
determines the stream, and every stochastic routine takes its generator as
an explicit argument.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import DegenerateMaskError, DimensionError, NumericDivergenceError

SQRT_2PI = np.sqrt(2.0 * np.pi)


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator for a 64-bit unsigned seed."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def derive_seed(seed: int, stage: str) -> int:
    """Stable sub-seed: SHA-256 of ``"<seed>:<stage>"`` truncated to 64 bits."""
    digest = hashlib.sha256(f"{int(seed)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def as_matrix(values, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    m = np.array(values, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1) if rows is None else m.reshape(rows, cols)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product accumulated in index order ``k = 0, 1, ...``.

    The summation order equals the textbook triple loop, so results are
    bit-identical to it. Hot paths inside the models use ``@`` instead.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def masked_softmax(scores: np.ndarray, mask: np.ndarray | None = None, allow_empty: bool = False) -> np.ndarray:
    """Softmax over the last axis; ``mask`` is True where an entry is excluded.

    Fully masked rows raise unless ``allow_empty``, in which case they come back
    as all zeros.
    """
    if mask is None:
        shifted = scores - scores.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)
    mask = np.broadcast_to(mask, scores.shape)
    empty = mask.all(axis=-1, keepdims=True)
    if empty.any() and not allow_empty:
        raise DegenerateMaskError("softmax row has every entry masked")
    s = np.where(mask, -np.inf, scores)
    row_max = np.where(empty, 0.0, s.max(axis=-1, keepdims=True, initial=-np.inf))
    e = np.exp(s - row_max)
    denom = e.sum(axis=-1, keepdims=True)
    return np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)


def softmax_rows(m, mask=None) -> np.ndarray:
    m = as_matrix(m)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != m.shape:
            raise DimensionError(f"mask shape {mask.shape} does not match matrix shape {m.shape}")
    return masked_softmax(m, mask)


def softmax_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True))


def layer_norm(x, gain, bias, eps: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if not (x.shape[-1] == gain.shape[-1] == bias.shape[-1]):
        raise DimensionError(f"layer_norm lengths differ: x={x.shape[-1]}, gain={gain.shape[-1]}, bias={bias.shape[-1]}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    y, _ = layer_norm_forward(x, gain, bias, eps)
    return y


def layer_norm_forward(x, gain, bias, eps=1e-6):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return gain * xhat + bias, (xhat, inv)


def layer_norm_backward(dy, gain, cache):
    """Returns (dx, dgain, dbias) with gain/bias grads summed over leading axes."""
    xhat, inv = cache
    axes = tuple(range(dy.ndim - 1))
    dgain = (dy * xhat).sum(axis=axes)
    dbias = dy.sum(axis=axes)
    dxhat = dy * gain
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgain, dbias


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x):
    return (np.asarray(x) > 0).astype(np.float64)


def gelu(x):
    # x * Phi(x), Phi(x) = 0.5 * (1 + erf(x / sqrt(2)))
    return x * ndtr(x)


def gelu_grad(x):
    return ndtr(x) + x * np.exp(-0.5 * np.square(x)) / SQRT_2PI


@dataclass
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    adam_m: np.ndarray = field(init=False)
    adam_v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = as_matrix(self.value)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("Adam epsilon must be positive")


def adam_step(params: Iterable[Parameter], state: AdamState) -> None:
    """Bias-corrected Adam update in place, then zero the gradients."""
    params = list(params)
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericDivergenceError(p.name)
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p in params:
        g = p.grad
        p.adam_m *= state.beta1
        p.adam_m += (1.0 - state.beta1) * g
        p.adam_v *= state.beta2
        p.adam_v += (1.0 - state.beta2) * g * g
        m_hat = p.adam_m / c1
        v_hat = p.adam_v / c2
        p.value -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        p.zero_grad()


def finite_diff_gradient(loss_fn: Callable[[], float], params: Sequence[Parameter], eps: float = 1e-5) -> list[np.ndarray]:
    """Central differences of ``loss_fn`` w.r.t. every entry of every parameter.

    ``loss_fn`` reads the parameter values in place and must be deterministic.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-6, 1e-4]")
    grads = []
    for p in params:
        g = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = loss_fn()
            flat[i] = old - eps
            down = loss_fn()
            flat[i] = old
            gflat[i] = (up - down) / (2.0 * eps)
        grads.append(g)
    return grads


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
