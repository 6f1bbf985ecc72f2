"""Per-event recurrent decoder blocks and the joint softmax head.

All K event blocks run together: their weights are stacked along a leading
event axis, so one batched matmul advances every block.  Blocks never share
weights, so they stay mathematically independent.

Each block starts from the encoder's final state and, at step ``t``, feeds
back its own previous pre-activation ``a[k][t-1]`` (0 at ``t = 0``), updates
its GRU state, attends over the encoder sequence, and maps
``concat(state, context)`` through a shared-in-time dense layer + relu.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import _gru_update

MASKED_SCORE = -1e9


def attention_mask(valid: np.ndarray, dtype) -> np.ndarray:
    """Additive score mask: 0 on real steps, a large negative number on padding."""
    return np.where(valid > 0, 0.0, MASKED_SCORE).astype(dtype)


def attend(query, H, W, mask_add=None) -> tuple[Tensor, np.ndarray]:
    """Multiplicative attention; returns (context, weights).

    query: (B, Hd) or (K, B, Hd); H: (B, S, Hd); W: (Hd, Hd) or (K, Hd, Hd).
    score[s] = H[s] . (W @ query), weights = softmax over valid steps.
    """
    query, W = ad.as_tensor(query), ad.as_tensor(W)
    squeeze = query.ndim == 2
    if squeeze:
        query = ad.reshape(query, (1,) + query.shape)
    if W.ndim == 2:
        W = ad.reshape(W, (1,) + W.shape)
    memory = ad.AttentionMemory(H, mask_add)
    ctx, weights = memory.attend(_project(query, W))
    if squeeze:
        return ad.reshape(ctx, ctx.shape[1:]), weights[0]
    return ctx, weights


def _project(query, W) -> Tensor:
    # q @ W^T == (W q)^T, so H[s] . projected == H[s] . (W q)
    return ad.matmul(query, ad.transpose(W, (0, 2, 1)))


def decode(h_T, H, valid, p: dict, horizon: int, n_layers: int = 1, a0_offset=None) -> Tensor:
    """Pre-activation rows for every event, shape (B, K, horizon), all >= 0.

    ``a0_offset`` (broadcastable to (K, B, 1)) is added to the step-0 output
    before it is fed back; it exists to probe the autoregressive path.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    W_att = p["decoder.attn.W"]
    K = W_att.shape[0]
    B = h_T.shape[0]
    dtype = W_att.dtype
    mask_add = attention_mask(valid, dtype) if valid is not None else None

    memory = ad.AttentionMemory(H, mask_add)
    W_t = ad.transpose(W_att, (0, 2, 1))
    h0 = ad.reshape(h_T, (1,) + h_T.shape)
    states = [ad.mul(np.ones((K, 1, 1), dtype=dtype), h0) for _ in range(n_layers)]
    a_prev = Tensor(np.zeros((K, B, 1), dtype=dtype))
    outs = []
    for t in range(horizon):
        x = a_prev
        for layer in range(n_layers):
            prefix = f"decoder.l{layer}"
            inp = ad.matmul(x, p[f"{prefix}.W"]) + p[f"{prefix}.b"]
            states[layer] = _gru_update(inp, states[layer], p[f"{prefix}.U_zr"], p[f"{prefix}.U_n"])
            x = states[layer]
        ctx, _ = memory.attend(ad.matmul(x, W_t))
        feat = ad.concat([x, ctx], axis=-1)
        a = ad.relu(ad.matmul(feat, p["decoder.out.W"]) + p["decoder.out.b"])
        if t == 0 and a0_offset is not None:
            a = a + a0_offset
        outs.append(a)
        a_prev = a
    A = ad.concat(outs, axis=-1)  # (K, B, T)
    return ad.transpose(A, (1, 0, 2))


def joint_head(a) -> Tensor:
    """Softmax over the flattened (K * T) pre-activations of each subject."""
    a = ad.as_tensor(a)
    B, K, T = a.shape
    flat = ad.softmax(ad.reshape(a, (B, K * T)), axis=-1)
    return ad.reshape(flat, (B, K, T))


def init_decoder(rng: np.random.Generator, n_events: int, hidden: int, n_layers: int, dtype) -> dict:
    K, H = n_events, hidden
    k = 1.0 / np.sqrt(H)

    def u(*shape, scale=k):
        return rng.uniform(-scale, scale, shape).astype(dtype)

    p = {}
    for layer in range(n_layers):
        d_in = 1 if layer == 0 else H
        p[f"decoder.l{layer}.W"] = u(K, d_in, 3 * H)
        p[f"decoder.l{layer}.U_zr"] = u(K, H, 2 * H)
        p[f"decoder.l{layer}.U_n"] = u(K, H, H)
        p[f"decoder.l{layer}.b"] = np.zeros((K, 1, 3 * H), dtype=dtype)
    p["decoder.attn.W"] = u(K, H, H)
    p["decoder.out.W"] = u(K, 2 * H, 1, scale=1.0 / np.sqrt(2 * H))
    p["decoder.out.b"] = np.zeros((K, 1, 1), dtype=dtype)
    return p


def decoder_param_count(n_events: int, hidden: int, n_layers: int = 1) -> int:
    H = hidden
    per_layer = lambda d_in: d_in * 3 * H + H * 2 * H + H * H + 3 * H  # noqa: E731
    total = per_layer(1) + sum(per_layer(H) for _ in range(1, n_layers))
    return n_events * (total + H * H + 2 * H + 1)


# --- readouts on numpy PDF matrices ------------------------------------------


def cdf(pdf: np.ndarray, event: int, tau: int) -> float:
    """Cumulative incidence of ``event`` (1-based) through bin ``tau`` inclusive."""
    pdf = np.asarray(pdf)
    K, T = pdf.shape
    if not 1 <= event <= K:
        raise IndexError(f"event {event} out of range 1..{K}")
    if not 0 <= tau < T:
        raise IndexError(f"bin {tau} out of range 0..{T - 1}")
    return float(np.sum(pdf[event - 1, : tau + 1]))


def cdf_curves(pdf: np.ndarray) -> np.ndarray:
    return np.cumsum(pdf, axis=-1)


def predicted_time(pdf: np.ndarray, event: int) -> float:
    """Expected bin index of ``event``'s row, normalized by the row mass."""
    row = np.asarray(pdf)[event - 1]
    mass = row.sum()
    if not mass > 0:
        raise ValueError(f"event {event} has zero probability mass")
    return float(np.dot(np.arange(len(row)), row) / mass)


def predicted_times(pdfs: np.ndarray) -> np.ndarray:
    """Vectorized :func:`predicted_time` over (B, K, T) -> (B, K)."""
    pdfs = np.asarray(pdfs, dtype=np.float64)
    mass = pdfs.sum(axis=-1)
    if np.any(mass <= 0):
        raise ValueError("zero probability mass in at least one event row")
    return (pdfs @ np.arange(pdfs.shape[-1], dtype=np.float64)) / mass


def smoothness(pdfs: np.ndarray) -> float:
    """Mean absolute step-to-step change of the PDF rows."""
    pdfs = np.asarray(pdfs, dtype=np.float64)
    return float(np.mean(np.abs(np.diff(pdfs, axis=-1))))


def write_pdf(path: str | Path, pdf: np.ndarray, bin_width: float, subject_id: str | None = None) -> None:
    pdf = np.asarray(pdf)
    K, T = pdf.shape
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if subject_id is not None:
            fh.write(f"# subject_id={subject_id}\n")
        fh.write(f"# bin_width={bin_width!r}\n# T_h={T}\n# n_events={K}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["event", "bin", "probability"])
        for k in range(K):
            for t in range(T):
                w.writerow([k + 1, t, repr(float(pdf[k, t]))])


def read_pdf(path: str | Path) -> tuple[np.ndarray, dict]:
    meta, rows = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key] = value
            else:
                rows.append(line)
    reader = csv.DictReader(rows)
    K, T = int(meta["n_events"]), int(meta["T_h"])
    pdf = np.zeros((K, T))
    for r in reader:
        pdf[int(r["event"]) - 1, int(r["bin"])] = float(r["probability"])
    return pdf, meta
