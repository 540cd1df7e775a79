"""Dense tanh networks with hand-written reverse mode, and the Adam optimizer.

Weights are stored as (out, in) matrices and applied to row-batched inputs as
``x @ W.T + b``.  Flattening is layer-major: ``W1, b1, W2, b2, ...`` with each
matrix in row-major order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import NumericalError, ShapeError

FLAT_LAYOUT_VERSION = 1


@dataclass(frozen=True, eq=False)
class MlpParams:
    sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    final_tanh: bool = False

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        object.__setattr__(self, "sizes", sizes)
        if len(sizes) < 2 or min(sizes) < 0:
            raise ShapeError(f"invalid layer sizes {sizes}")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ShapeError("one weight matrix and bias per layer required")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise ShapeError(f"layer {i}: got W{w.shape}, b{b.shape} for sizes {sizes}")

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.reshape(-1), b]
        return np.concatenate(parts) if parts else np.zeros(0)

    def unflatten(self, flat) -> "MlpParams":
        """Same architecture with parameters read from ``flat``."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ShapeError(f"expected {self.n_params} parameters, got {flat.size}")
        ws, bs, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(flat[pos : pos + w.size].reshape(w.shape))
            pos += w.size
            bs.append(flat[pos : pos + b.size].copy())
            pos += b.size
        return replace(self, weights=tuple(ws), biases=tuple(bs))


def init_params(sizes: Sequence[int], seed, final_tanh: bool = False) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in) if fan_in > 0 else 0.0
        ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return MlpParams(tuple(sizes), tuple(ws), tuple(bs), final_tanh)


@dataclass(eq=False)
class Tape:
    """Per-layer inputs and pre-activations of one forward call."""

    params: MlpParams
    inputs: list
    preacts: list

    @property
    def nbytes(self) -> int:
        return sum(a.nbytes for a in self.inputs) + sum(a.nbytes for a in self.preacts)


def mlp_forward(p: MlpParams, x) -> tuple[np.ndarray, Tape]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.n_in:
        raise ShapeError(f"input has {x.shape[-1]} features, network expects {p.n_in}")
    inputs, preacts = [], []
    h = x
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        inputs.append(h)
        a = h @ w.T + b
        preacts.append(a)
        h = np.tanh(a) if (i < last or p.final_tanh) else a
    return h, Tape(p, inputs, preacts)


def mlp_apply(p: MlpParams, x) -> np.ndarray:
    return mlp_forward(p, x)[0]


def mlp_backward(p: MlpParams, tape: Tape, cot) -> tuple[np.ndarray, np.ndarray]:
    """Reverse mode: returns (input cotangent, flat parameter gradient).

    Batched inputs have their parameter gradients summed over the batch.
    """
    if tape.params is not p:
        raise ShapeError("tape was recorded with a different parameter set")
    g = np.asarray(cot, dtype=np.float64)
    if g.shape != tape.preacts[-1].shape:
        raise ShapeError(f"cotangent shape {g.shape} != output shape {tape.preacts[-1].shape}")
    last = len(p.weights) - 1
    grads: list[np.ndarray] = [None] * (2 * len(p.weights))
    for i in range(last, -1, -1):
        if i < last or p.final_tanh:
            g = g * (1.0 - np.tanh(tape.preacts[i]) ** 2)
        h = tape.inputs[i]
        rows = math.prod(g.shape[:-1])      # explicit so zero-width layers reshape too
        g2 = g.reshape(rows, g.shape[-1])
        h2 = h.reshape(rows, h.shape[-1])
        grads[2 * i] = (g2.T @ h2).reshape(-1)
        grads[2 * i + 1] = g2.sum(axis=0)
        g = g @ p.weights[i]
    return g, np.concatenate(grads)


@dataclass(frozen=True, eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, n: int, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr, **kw)


def adam_step(state: AdamState, params, grad) -> tuple[np.ndarray, AdamState]:
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ShapeError(
            f"length mismatch: params {params.shape}, grad {grad.shape}, state {state.m.shape}"
        )
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite gradient passed to adam_step")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, m=m, v=v, t=t)
