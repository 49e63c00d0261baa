"""Numeric primitives for the CNN: convolution, dense layers, softmax,
cross-entropy, ReLU, inverted dropout and Adam.

Tensors are plain numpy arrays. Images use height x width x channels
layout; every op also accepts a leading batch axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ParameterError, ShapeError

PROB_FLOOR = 1e-12


@dataclass
class ConvFilterBank:
    """3-D filters stacked as ``h x w x in_channels x num_filters`` plus bias."""

    filters: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.filters.ndim != 4:
            raise ShapeError(f"filters must be rank 4, got shape {self.filters.shape}")
        if self.bias.shape != (self.filters.shape[3],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match {self.filters.shape[3]} filters"
            )

    @property
    def kernel_shape(self) -> tuple[int, int]:
        return self.filters.shape[0], self.filters.shape[1]

    @property
    def in_channels(self) -> int:
        return self.filters.shape[2]

    @property
    def num_filters(self) -> int:
        return self.filters.shape[3]


@dataclass
class FcWeights:
    weights: np.ndarray  # inputs x outputs
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeError(
                f"fc weights {self.weights.shape} and bias {self.bias.shape} are inconsistent"
            )

    @property
    def inputs(self) -> int:
        return self.weights.shape[0]

    @property
    def outputs(self) -> int:
        return self.weights.shape[1]


def conv2d_forward(x: np.ndarray, bank: ConvFilterBank) -> np.ndarray:
    """Valid, stride-1 convolution. ``x`` is HxWxC or NxHxWxC."""
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise ShapeError(f"conv input must be HxWxC or NxHxWxC, got shape {x.shape}")
    h, w = bank.kernel_shape
    if h > x.shape[1] or w > x.shape[2]:
        raise ShapeError(
            f"filter {h}x{w} larger than input {x.shape[1]}x{x.shape[2]}"
        )
    if bank.in_channels != x.shape[3]:
        raise ShapeError(
            f"input has {x.shape[3]} channels but filters expect {bank.in_channels}"
        )
    dtype = np.result_type(x, bank.filters)
    out = kernels.conv2d_forward(
        np.ascontiguousarray(x, dtype=dtype),
        np.ascontiguousarray(bank.filters, dtype=dtype),
        np.ascontiguousarray(bank.bias, dtype=dtype),
    )
    return out[0] if single else out


def conv2d_backward(x, bank: ConvFilterBank, grad_out, need_input_grad=True):
    """Gradients of a valid convolution: ``(grad_x, grad_filters, grad_bias)``."""
    dtype = np.result_type(x, bank.filters)
    return kernels.conv2d_backward(
        np.ascontiguousarray(x, dtype=dtype),
        np.ascontiguousarray(bank.filters, dtype=dtype),
        np.ascontiguousarray(grad_out, dtype=dtype),
        need_input_grad,
    )


def fc_forward(x: np.ndarray, fc: FcWeights) -> np.ndarray:
    """``x @ weights + bias`` for a flat vector or a batch of flat vectors."""
    if x.shape[-1] != fc.inputs:
        raise ShapeError(f"fc expects {fc.inputs} inputs, got {x.shape[-1]}")
    return x @ fc.weights + fc.bias


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    logits = np.asarray(logits)
    if np.isnan(logits).any():
        raise FloatingPointError("softmax received NaN logits")
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy_loss(probs: np.ndarray, label) -> float:
    """Negative log-likelihood of ``label``; batches return the mean."""
    probs = np.asarray(probs)
    labels = np.asarray(label)
    k = probs.shape[-1]
    if np.any(labels < 0) or np.any(labels >= k):
        raise IndexError(f"label {label} out of range for {k} classes")
    if probs.ndim == 1:
        return float(-np.log(max(probs[int(labels)], PROB_FLOOR)))
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def dropout_mask(shape, keep_prob: float, rng: np.random.Generator,
                 dtype=np.float32) -> np.ndarray:
    """Inverted-dropout mask: entries are 0 or ``1/keep_prob`` with mean 1."""
    if not 0.0 < keep_prob <= 1.0:
        raise ParameterError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    if keep_prob == 1.0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) < keep_prob
    return keep.astype(dtype) * np.asarray(1.0 / keep_prob, dtype=dtype)


@dataclass
class AdamState:
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float = 1e-3, beta_m: float = 0.9,
              beta_v: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam update applied in place to every array in ``grads``.

    Parameters without a gradient entry are left alone. Returns
    ``(params, state)`` for convenience.
    """
    state.step += 1
    t = state.step
    corr_m = 1.0 - beta_m ** t
    corr_v = 1.0 - beta_v ** t
    for name, g in grads.items():
        p = params[name]
        m = state.first_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros_like(p)
            state.second_moment[name] = np.zeros_like(p)
        v = state.second_moment[name]
        m *= beta_m
        m += (1.0 - beta_m) * g
        v *= beta_v
        v += (1.0 - beta_v) * (g * g)
        p -= (lr * (m / corr_m) / (np.sqrt(v / corr_v) + eps)).astype(p.dtype, copy=False)
    return params, state
