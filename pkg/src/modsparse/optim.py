"""Adam and SGD over named tensor dicts, with global-norm clipping and masks.

Masked entries are pinned to exactly zero after every step and their Adam
moments are zeroed, so pruned weights can never be resurrected by momentum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ADAM = "adam"
SGD = "sgd"


@dataclass
class OptimizerState:
    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float | None = None
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_optimizer(tensors: dict, kind: str = ADAM, lr: float = 1e-3,
                   grad_clip: float | None = None, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    if kind not in (ADAM, SGD):
        raise ValueError(f"unknown optimizer kind {kind!r}")
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    if grad_clip is not None and not grad_clip > 0:
        raise ValueError("gradient clip threshold must be positive")
    state = OptimizerState(kind, lr, beta1, beta2, eps, grad_clip)
    if kind == ADAM:
        state.m = {k: np.zeros_like(a) for k, a in tensors.items()}
        state.v = {k: np.zeros_like(a) for k, a in tensors.items()}
    return state


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def optimizer_step(state: OptimizerState, tensors: dict, grads: dict,
                   masks: dict | None = None) -> None:
    """Apply one update in place.

    Clipping (when configured) rescales the whole gradient by its global
    norm before the update rule. Raises on non-finite gradients rather than
    silently corrupting the parameters.
    """
    for name in grads:
        if name not in tensors:
            raise KeyError(f"gradient for unknown tensor {name!r}")
        if not np.all(np.isfinite(grads[name])):
            raise FloatingPointError(
                f"non-finite gradient in {name!r} at step {state.step_count + 1}")
        if grads[name].shape != tensors[name].shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")

    scale = 1.0
    if state.grad_clip is not None:
        norm = global_norm(grads)
        if norm > state.grad_clip:
            scale = state.grad_clip / norm

    state.step_count += 1
    if state.kind == ADAM:
        bc1 = 1.0 - state.beta1 ** state.step_count
        bc2 = 1.0 - state.beta2 ** state.step_count
        for name in sorted(grads):
            g = grads[name] * scale
            m, v = state.m[name], state.v[name]
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            tensors[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    else:
        for name in sorted(grads):
            tensors[name] -= state.lr * scale * grads[name]

    if masks:
        for name, mask in masks.items():
            if name not in tensors:
                continue
            tensors[name] *= mask
            if state.kind == ADAM:
                state.m[name] *= mask
                state.v[name] *= mask
