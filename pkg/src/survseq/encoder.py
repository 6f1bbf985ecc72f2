"""GRU-D input layer plus optional stacked GRU layers.

Shapes (batched over subjects): inputs are ``(B, S, D)`` with ``S`` padded
steps; per-step arrays are ``(B, D)``; hidden states are ``(B, H)``.  Padded
steps carry ``valid == 0`` and leave the hidden state untouched, so the last
column of the hidden sequence is every subject's final state.

Gates follow the classic GRU ordering (update ``z``, reset ``r``, candidate
``n``) with the reset gate applied to the hidden state before its matmul.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class EncoderOutput:
    hidden: Tensor  # (B, S, H) top-layer sequence
    final: Tensor  # (B, H)


def input_decay(delta, w, b) -> Tensor:
    """gamma_x = exp(-max(0, w * delta + b)), elementwise per covariate."""
    return ad.exp(-ad.relu(ad.mul(delta, w) + b))


def hidden_decay(delta, W, b) -> Tensor:
    """gamma_h = exp(-max(0, delta @ W + b))."""
    return ad.exp(-ad.relu(ad.matmul(delta, W) + b))


def impute(x, m, gamma_x, x_last, x_mean) -> Tensor:
    """Observed entries pass through; missing ones decay from the last value toward the mean.

    ``x_last`` must already hold the most recent observation at or before
    this step (``x_mean`` before any observation).
    """
    x, m, x_last = (np.asarray(v) for v in (x, m, x_last))
    x_mean = np.asarray(x_mean, dtype=x.dtype)
    base = m * x + (1 - m) * x_mean
    spread = (1 - m) * (x_last - x_mean)
    return ad.add(base, ad.mul(spread, gamma_x))


def _gru_update(inp: Tensor, h: Tensor, U_zr: Tensor, U_n: Tensor) -> Tensor:
    H = h.shape[-1]
    zr = ad.sigmoid(inp[..., : 2 * H] + ad.matmul(h, U_zr))
    z, r = zr[..., :H], zr[..., H:]
    n = ad.tanh(inp[..., 2 * H :] + ad.matmul(r * h, U_n))
    return h + z * (n - h)


def grud_step(x, m, delta, x_last, h_prev, p: dict, prefix: str, x_mean=0.0) -> Tensor:
    """One GRU-D transition: decay the state, impute the input, run the gates over (x_hat, h_hat, m)."""
    gx = input_decay(delta, p[f"{prefix}.decay_x_w"], p[f"{prefix}.decay_x_b"])
    x_hat = impute(x, m, gx, x_last, x_mean)
    h_hat = hidden_decay(delta, p[f"{prefix}.decay_h_W"], p[f"{prefix}.decay_h_b"]) * h_prev
    inp = ad.matmul(x_hat, p[f"{prefix}.W"]) + ad.matmul(np.asarray(m), p[f"{prefix}.V"]) + p[f"{prefix}.b"]
    return _gru_update(inp, h_hat, p[f"{prefix}.U_zr"], p[f"{prefix}.U_n"])


def gru_step(x, h_prev, p: dict, prefix: str) -> Tensor:
    inp = ad.matmul(x, p[f"{prefix}.W"]) + p[f"{prefix}.b"]
    return _gru_update(inp, h_prev, p[f"{prefix}.U_zr"], p[f"{prefix}.U_n"])


def encode_batch(values, mask, delta, x_last, valid, p: dict, n_layers: int = 1, x_mean=0.0) -> EncoderOutput:
    """Run the encoder over padded ``(B, S, D)`` arrays.

    ``valid`` is ``(B, S)`` with ones on real steps.
    """
    B, S, _ = values.shape
    if S == 0:
        raise ValueError("cannot encode a sequence with zero steps")
    H = p["encoder.l0.U_n"].shape[0]
    dtype = p["encoder.l0.U_n"].dtype
    keep = valid[..., None].astype(dtype)

    h = Tensor(np.zeros((B, H), dtype=dtype))
    states = []
    for t in range(S):
        h_new = grud_step(values[:, t], mask[:, t], delta[:, t], x_last[:, t], h, p, "encoder.l0", x_mean)
        h = h + keep[:, t] * (h_new - h)
        states.append(h)

    for layer in range(1, n_layers):
        prefix = f"encoder.l{layer}"
        h = Tensor(np.zeros((B, H), dtype=dtype))
        below, states = states, []
        for t in range(S):
            h_new = gru_step(below[t], h, p, prefix)
            h = h + keep[:, t] * (h_new - h)
            states.append(h)

    return EncoderOutput(ad.stack(states, axis=1), states[-1])


def init_encoder(rng: np.random.Generator, n_covariates: int, hidden: int, n_layers: int, dtype) -> dict:
    D, H = n_covariates, hidden
    k = 1.0 / np.sqrt(H)

    def u(*shape, scale=k):
        return rng.uniform(-scale, scale, shape).astype(dtype)

    p = {
        "encoder.l0.W": u(D, 3 * H),
        "encoder.l0.V": u(D, 3 * H),
        "encoder.l0.U_zr": u(H, 2 * H),
        "encoder.l0.U_n": u(H, H),
        "encoder.l0.b": np.zeros(3 * H, dtype=dtype),
        # small positive decay rates so missing inputs start drifting toward the mean
        "encoder.l0.decay_x_w": rng.uniform(0.0, 0.1, D).astype(dtype),
        "encoder.l0.decay_x_b": np.zeros(D, dtype=dtype),
        "encoder.l0.decay_h_W": rng.uniform(0.0, 0.1, (D, H)).astype(dtype),
        "encoder.l0.decay_h_b": np.zeros(H, dtype=dtype),
    }
    for layer in range(1, n_layers):
        p[f"encoder.l{layer}.W"] = u(H, 3 * H)
        p[f"encoder.l{layer}.U_zr"] = u(H, 2 * H)
        p[f"encoder.l{layer}.U_n"] = u(H, H)
        p[f"encoder.l{layer}.b"] = np.zeros(3 * H, dtype=dtype)
    return p
