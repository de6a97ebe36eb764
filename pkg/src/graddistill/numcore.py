"""Core numerics: stable softmax/cross-entropy and the Adam optimizer.

All arrays are float64. Public operations validate finiteness and shapes up
front and raise typed errors instead of propagating NaN/Inf.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import LabelError, NonFiniteError, ShapeError


def require_finite(arr: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return arr


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; last axis is the class axis."""
    logits = require_finite(logits, "logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = require_finite(logits, "logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels) -> float:
    """Mean over rows of -log softmax(logits_i)[labels_i]."""
    logits = require_finite(logits, "logits")
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects N x c logits, got {logits.shape}")
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"labels shape {labels.shape} does not match batch size {logits.shape[0]}"
        )
    c = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise LabelError(f"labels must lie in [0, {c})")
    logp = log_softmax(logits)
    return float(-logp[np.arange(len(labels)), labels.astype(np.int64)].mean())


@dataclass(frozen=True)
class AdamState:
    """First/second moment estimates plus step counter and hyperparameters."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, shape, lr: float = 0.002, beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        zeros = np.zeros(shape, dtype=np.float64)
        return cls(m=zeros, v=zeros.copy(), t=0, lr=lr, beta1=beta1,
                   beta2=beta2, eps=eps)


def adam_step(state: AdamState, param: np.ndarray,
              grad: np.ndarray) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update; returns the new state and parameter."""
    param = require_finite(param, "param")
    grad = require_finite(grad, "grad")
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ShapeError(
            f"adam_step shape mismatch: param {param.shape}, grad {grad.shape}, "
            f"moments {state.m.shape}"
        )
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_param = param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, t=t), new_param
