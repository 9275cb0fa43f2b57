"""Elman RNN forward pass, full-sequence backpropagation through time, losses.

All math is float64 numpy. The hidden update is
H_t = s(W_hh @ H_{t-1} + W_ih @ x_t + b) per layer; stacked layers feed the
lower layer's hidden state at the same time step upward, and the decoder
reads the final hidden state of the top layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RELU = "relu"
TANH = "tanh"
SOFTMAX = "softmax"
IDENTITY = "identity"


@dataclass
class RnnLayer:
    W_ih: np.ndarray          # (hidden, input_dim)
    W_hh: np.ndarray          # (hidden, hidden)
    b: np.ndarray | None = None


@dataclass
class DecoderParams:
    D: np.ndarray             # (output_dim, hidden)
    b_d: np.ndarray | None = None


@dataclass
class RnnParams:
    layers: list
    decoder: DecoderParams
    nonlinearity: str = RELU
    decoder_activation: str = IDENTITY

    def __post_init__(self):
        if self.nonlinearity not in (RELU, TANH):
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.decoder_activation not in (SOFTMAX, IDENTITY):
            raise ValueError(
                f"unknown decoder activation {self.decoder_activation!r}")
        for k, layer in enumerate(self.layers):
            if k > 0 and layer.W_ih.shape[1] != self.layers[k - 1].W_hh.shape[0]:
                raise ValueError(f"layer {k} input dim does not match layer "
                                 f"{k - 1} hidden dim")
        for name, arr in self.tensors().items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")

    @property
    def hidden_dims(self) -> list:
        return [layer.W_hh.shape[0] for layer in self.layers]

    @property
    def input_dim(self) -> int:
        return self.layers[0].W_ih.shape[1]

    @property
    def output_dim(self) -> int:
        return self.decoder.D.shape[0]

    def tensors(self) -> dict:
        """Named live views of every trainable array."""
        out = {}
        for k, layer in enumerate(self.layers):
            out[f"layers.{k}.W_ih"] = layer.W_ih
            out[f"layers.{k}.W_hh"] = layer.W_hh
            if layer.b is not None:
                out[f"layers.{k}.b"] = layer.b
        out["decoder.D"] = self.decoder.D
        if self.decoder.b_d is not None:
            out["decoder.b_d"] = self.decoder.b_d
        return out


def init_rnn_params(input_dim: int, hidden_dims, output_dim: int,
                    nonlinearity: str = RELU, bias: bool = True,
                    decoder_bias: bool = True,
                    decoder_activation: str = IDENTITY,
                    seed=0) -> RnnParams:
    """Draw every tensor from U(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
    rng = np.random.default_rng(seed)
    if isinstance(hidden_dims, int):
        hidden_dims = [hidden_dims]
    layers = []
    in_dim = input_dim
    for h in hidden_dims:
        layers.append(RnnLayer(
            W_ih=rng.uniform(-1, 1, (h, in_dim)) / np.sqrt(in_dim),
            W_hh=rng.uniform(-1, 1, (h, h)) / np.sqrt(h),
            b=rng.uniform(-1, 1, h) / np.sqrt(h) if bias else None,
        ))
        in_dim = h
    decoder = DecoderParams(
        D=rng.uniform(-1, 1, (output_dim, in_dim)) / np.sqrt(in_dim),
        b_d=rng.uniform(-1, 1, output_dim) / np.sqrt(in_dim) if decoder_bias else None,
    )
    return RnnParams(layers, decoder, nonlinearity, decoder_activation)


@dataclass
class RnnCache:
    """Everything the backward pass needs, kept from the forward pass."""

    inputs: np.ndarray         # (T, B, input_dim)
    hidden: list               # per layer: (T+1, B, hidden), index 0 = h_init
    preact: list               # per layer: (T, B, hidden)
    logits: np.ndarray         # (B, output_dim), pre decoder activation
    output: np.ndarray         # (B, output_dim), post decoder activation
    squeeze: bool = False      # inputs arrived unbatched

    @property
    def final_hidden(self) -> np.ndarray:
        return self.hidden[-1][-1]


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if name == RELU else np.tanh(z)


def forward(params: RnnParams, inputs, h_init=None) -> RnnCache:
    """Run the recurrence over a (T, B, input_dim) or (T, input_dim) sequence.

    h_init may be None (zeros) or a list of per-layer states, each of shape
    (hidden,) or (B, hidden). The output is the decoder activation of the
    top layer's final hidden state.
    """
    X = np.asarray(inputs, dtype=np.float64)
    squeeze = X.ndim == 2
    if squeeze:
        X = X[:, None, :]
    if X.ndim != 3:
        raise ValueError("inputs must be (T, B, input_dim) or (T, input_dim)")
    T, B, d = X.shape
    if T < 1:
        raise ValueError("sequence length must be >= 1")
    if d != params.input_dim:
        raise ValueError(f"input dim {d}, model expects {params.input_dim}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input")

    hidden, preact = [], []
    seq = X
    for k, layer in enumerate(params.layers):
        n = layer.W_hh.shape[0]
        H = np.empty((T + 1, B, n))
        if h_init is None:
            H[0] = 0.0
        else:
            h0 = np.asarray(h_init[k], dtype=np.float64)
            H[0] = h0 if h0.ndim == 2 else np.broadcast_to(h0, (B, n))
        Z = np.empty((T, B, n))
        Wih_T, Whh_T = layer.W_ih.T, layer.W_hh.T
        for t in range(T):
            z = H[t] @ Whh_T + seq[t] @ Wih_T
            if layer.b is not None:
                z = z + layer.b
            Z[t] = z
            H[t + 1] = _activate(params.nonlinearity, z)
        hidden.append(H)
        preact.append(Z)
        seq = H[1:]

    logits = hidden[-1][-1] @ params.decoder.D.T
    if params.decoder.b_d is not None:
        logits = logits + params.decoder.b_d
    output = softmax(logits) if params.decoder_activation == SOFTMAX else logits
    if squeeze:
        output = output[0]
    return RnnCache(X, hidden, preact, logits, output, squeeze)


def backward(params: RnnParams, cache: RnnCache, output_grad):
    """Exact gradients of a scalar loss given d loss / d output.

    Returns (grads, h_init_grads): a dict matching params.tensors() keys and
    one (B, hidden) array per layer for the initial hidden states. ReLU uses
    subgradient 0 at 0.
    """
    g = np.asarray(output_grad, dtype=np.float64)
    output = cache.output
    if cache.squeeze:
        g, output = np.atleast_2d(g), np.atleast_2d(output)
    if g.shape != output.shape:
        raise ValueError(f"output_grad shape {g.shape} vs {output.shape}")

    if params.decoder_activation == SOFTMAX:
        dlogits = output * (g - np.sum(g * output, axis=-1, keepdims=True))
    else:
        dlogits = g

    grads = {"decoder.D": dlogits.T @ cache.final_hidden}
    if params.decoder.b_d is not None:
        grads["decoder.b_d"] = dlogits.sum(axis=0)

    T = cache.inputs.shape[0]
    n_layers = len(params.layers)
    # Upstream gradient hitting H_t of the current layer from above;
    # for the top layer only the decoder touches it, at t = T.
    upstream = None
    h_init_grads = [None] * n_layers
    for k in range(n_layers - 1, -1, -1):
        layer = params.layers[k]
        H, Z = cache.hidden[k], cache.preact[k]
        seq_in = cache.inputs if k == 0 else cache.hidden[k - 1][1:]
        dW_hh = np.zeros_like(layer.W_hh)
        dW_ih = np.zeros_like(layer.W_ih)
        db = np.zeros_like(layer.b) if layer.b is not None else None
        lower = np.zeros((T,) + cache.hidden[k - 1][0].shape) if k > 0 else None
        dh_next = np.zeros_like(H[0])
        for t in range(T - 1, -1, -1):
            dh = dh_next.copy()
            if k == n_layers - 1 and t == T - 1:
                dh += dlogits @ params.decoder.D
            if upstream is not None:
                dh += upstream[t]
            if params.nonlinearity == RELU:
                dz = dh * (Z[t] > 0.0)
            else:
                dz = dh * (1.0 - H[t + 1] ** 2)
            dW_hh += dz.T @ H[t]
            dW_ih += dz.T @ seq_in[t]
            if db is not None:
                db += dz.sum(axis=0)
            dh_next = dz @ layer.W_hh
            if lower is not None:
                lower[t] = dz @ layer.W_ih
        grads[f"layers.{k}.W_hh"] = dW_hh
        grads[f"layers.{k}.W_ih"] = dW_ih
        if db is not None:
            grads[f"layers.{k}.b"] = db
        h_init_grads[k] = dh_next
        upstream = lower
    return grads, h_init_grads


# ---------------------------------------------------------------------------
# Losses

def softmax(v) -> np.ndarray:
    """Max-subtracted softmax over the last axis."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(v - np.max(v, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def cross_entropy(target, pred) -> float:
    """-sum(target * log(pred)); log applies to the prediction."""
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if t.shape != p.shape:
        raise ValueError("target and prediction must have equal length")
    weighted = t > 0
    if np.any(p[weighted] <= 0.0):
        raise ValueError("prediction is zero where the target has mass")
    out = np.zeros_like(p)
    out[weighted] = t[weighted] * np.log(p[weighted])
    return float(-np.sum(out))


def mse(pred, target) -> float:
    """Mean of squared differences."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError("shape mismatch")
    if p.size == 0:
        raise ValueError("mse of empty vectors")
    return float(np.mean((p - t) ** 2))
