"""Scheduled magnitude pruning and lottery-ticket reinitialization.

At the start of epoch k of n the lowest-magnitude (k-1)*p/(n-1) percent of
each pruned tensor's entries are thresholded to zero; the mask is recomputed
from current magnitudes at every scheduled prune, and only the final mask
defines the sparse architecture handed to lottery retraining.
"""

from __future__ import annotations

import numpy as np

from .rnn import RnnParams, init_rnn_params


def scheduled_sparsity(k: int, n: int, p: float) -> float:
    """Sparsity percent scheduled for the start of epoch k out of n."""
    if n < 2:
        raise ValueError("schedule needs at least 2 epochs")
    if not 1 <= k <= n:
        raise ValueError(f"epoch index {k} outside 1..{n}")
    if not 0 <= p < 100:
        raise ValueError("target percent must be in [0, 100)")
    return (k - 1) * p / (n - 1)


def magnitude_prune(W: np.ndarray, percent: float) -> np.ndarray:
    """Zero the floor(percent/100 * count) smallest-|w| entries of W in place.

    Ties in magnitude are broken by flat row-major position (lower (row, col)
    pruned first). Returns the 0/1 mask as uint8.
    """
    if not 0 <= percent < 100:
        raise ValueError("percent must be in [0, 100)")
    count = W.size
    # epsilon guards float dust on exact-integer products like 30% of 10
    n_prune = int(np.floor(percent * count / 100.0 + 1e-9))
    flat_mag = np.abs(W).ravel()
    order = np.argsort(flat_mag, kind="stable")
    mask = np.ones(count, dtype=np.uint8)
    mask[order[:n_prune]] = 0
    mask = mask.reshape(W.shape)
    W *= mask
    return mask


def lottery_reinit(params: RnnParams, masks: dict, seed) -> RnnParams:
    """Fresh parameters from the init distribution, with masks applied.

    Every tensor is redrawn under the new seed; masked entries start (and
    stay, via the optimizer's mask contract) at exactly zero. The masks are
    meant to be held frozen for the whole retraining run.
    """
    hidden = params.hidden_dims
    has_bias = params.layers[0].b is not None
    fresh = init_rnn_params(
        params.input_dim, hidden, params.output_dim,
        nonlinearity=params.nonlinearity, bias=has_bias,
        decoder_bias=params.decoder.b_d is not None,
        decoder_activation=params.decoder_activation, seed=seed)
    tensors = fresh.tensors()
    for name, mask in masks.items():
        if name not in tensors:
            raise ValueError(f"mask for unknown tensor {name!r}")
        if mask.shape != tensors[name].shape:
            raise ValueError(f"mask shape mismatch for {name!r}")
        tensors[name] *= mask
    return fresh
