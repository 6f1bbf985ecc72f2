"""Feed-forward per-event output head used as a structural baseline.

Each event gets a one-hidden-layer MLP from ``concat(h_T, mean(H))`` to all
horizon bins at once; there is no coupling between neighbouring bins.  The
output goes through relu and the same joint softmax as the recurrent decoder.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .decoder import decoder_param_count


def mlp_param_count(n_events: int, hidden: int, width: int, horizon: int) -> int:
    return n_events * (2 * hidden * width + width + width * horizon + horizon)


def matched_width(n_events: int, hidden: int, horizon: int, decoder_layers: int = 1) -> int:
    """Hidden width whose parameter count is closest to the recurrent decoder's."""
    target = decoder_param_count(n_events, hidden, decoder_layers)
    per_unit = n_events * (2 * hidden + 1 + horizon)
    return max(1, int(round((target - n_events * horizon) / per_unit)))


def mean_pool(H, valid: np.ndarray):
    w = valid / np.maximum(valid.sum(axis=1, keepdims=True), 1)
    w = w.astype(H.dtype)[:, None, :]  # (B, 1, S)
    pooled = ad.matmul(w, H)
    return ad.reshape(pooled, (H.shape[0], H.shape[2]))


def mlp_decode(h_T, H, valid, p: dict) -> Tensor:
    """Pre-activations (B, K, T) from a single feed-forward pass per event."""
    feat = ad.concat([h_T, mean_pool(H, valid)], axis=-1)  # (B, 2H)
    feat = ad.reshape(feat, (1,) + feat.shape)
    hidden = ad.relu(ad.matmul(feat, p["mlp.W1"]) + p["mlp.b1"])  # (K, B, width)
    out = ad.relu(ad.matmul(hidden, p["mlp.W2"]) + p["mlp.b2"])  # (K, B, T)
    return ad.transpose(out, (1, 0, 2))


def init_mlp(rng: np.random.Generator, n_events: int, hidden: int, width: int, horizon: int, dtype) -> dict:
    k1 = 1.0 / np.sqrt(2 * hidden)
    k2 = 1.0 / np.sqrt(width)
    return {
        "mlp.W1": rng.uniform(-k1, k1, (n_events, 2 * hidden, width)).astype(dtype),
        "mlp.b1": np.zeros((n_events, 1, width), dtype=dtype),
        "mlp.W2": rng.uniform(-k2, k2, (n_events, width, horizon)).astype(dtype),
        "mlp.b2": np.zeros((n_events, 1, horizon), dtype=dtype),
    }
