"""Full encoder/decoder model: parameters, batching and the forward pass."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .ablation import init_mlp, matched_width, mlp_decode
from .autodiff import Tensor
from .data import DatasetStats, DiscretizationSpec, LongitudinalSample, discretize_labels, normalize
from .decoder import decode, init_decoder, joint_head
from .encoder import encode_batch, init_encoder


@dataclass
class ModelConfig:
    n_covariates: int
    n_events: int
    horizon: int
    hidden_dim: int = 64
    encoder_layers: int = 1
    decoder_layers: int = 1
    decoder_kind: str = "recurrent"
    mlp_width: int | None = None

    def __post_init__(self):
        if self.decoder_kind not in ("recurrent", "mlp"):
            raise ValueError(f"decoder_kind must be 'recurrent' or 'mlp', got {self.decoder_kind!r}")
        if min(self.n_covariates, self.n_events, self.horizon, self.hidden_dim) < 1:
            raise ValueError("model dimensions must be positive")
        if self.encoder_layers < 1 or self.decoder_layers < 1:
            raise ValueError("layer counts must be at least 1")

    @property
    def width(self) -> int:
        if self.mlp_width is not None:
            return self.mlp_width
        return matched_width(self.n_events, self.hidden_dim, self.horizon, self.decoder_layers)


class ModelParams:
    """Ordered name -> Tensor table for every trainable weight."""

    def __init__(self, tensors: dict[str, np.ndarray | Tensor]):
        self.tensors = {k: v if isinstance(v, Tensor) else Tensor(v, name=k) for k, v in tensors.items()}

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self.tensors.items()}

    @property
    def n_values(self) -> int:
        return int(sum(v.data.size for v in self.tensors.values()))

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({k: v.data.astype(dtype) for k, v in self.tensors.items()})

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.data.copy() for k, v in self.tensors.items()})

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.tensors.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, v in arrays.items():
            self.tensors[k].data[...] = v


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> ModelParams:
    rng = np.random.default_rng(seed)
    p = init_encoder(rng, config.n_covariates, config.hidden_dim, config.encoder_layers, dtype)
    if config.decoder_kind == "recurrent":
        p.update(init_decoder(rng, config.n_events, config.hidden_dim, config.decoder_layers, dtype))
    else:
        p.update(init_mlp(rng, config.n_events, config.hidden_dim, config.width, config.horizon, dtype))
    return ModelParams(p)


def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    return init_params(config, seed=0, dtype=np.float32).shapes()


@dataclass
class Batch:
    values: np.ndarray  # (B, S, D) z-scored, 0 where unobserved
    mask: np.ndarray  # (B, S, D)
    delta: np.ndarray  # (B, S, D) scaled
    x_last: np.ndarray  # (B, S, D) last observation at or before each step
    valid: np.ndarray  # (B, S)
    event_type: np.ndarray  # (B,) 0 = censored
    event_bin: np.ndarray  # (B,)
    event_time: np.ndarray  # (B,)
    subject_ids: list[str]

    def __len__(self) -> int:
        return len(self.event_type)

    def take(self, rows) -> "Batch":
        """Row subset, trimmed to the longest selected sequence."""
        rows = np.asarray(rows, dtype=np.int64)
        valid = self.valid[rows]
        S = int(valid.any(axis=0).nonzero()[0].max()) + 1 if valid.size and valid.any() else 0
        return Batch(
            self.values[rows, :S], self.mask[rows, :S], self.delta[rows, :S], self.x_last[rows, :S],
            valid[:, :S], self.event_type[rows], self.event_bin[rows], self.event_time[rows],
            [self.subject_ids[i] for i in rows],
        )


def make_batch(
    samples: Sequence[LongitudinalSample],
    stats: DatasetStats,
    spec: DiscretizationSpec,
    dtype=np.float32,
) -> Batch:
    B = len(samples)
    D = len(stats.covariates)
    S = max((s.n_steps for s in samples), default=0)
    values = np.zeros((B, S, D))
    mask = np.zeros((B, S, D))
    delta = np.zeros((B, S, D))
    x_last = np.zeros((B, S, D))
    valid = np.zeros((B, S))
    for i, s in enumerate(samples):
        if s.n_covariates != D:
            raise ValueError(f"subject {s.subject_id}: {s.n_covariates} covariates, model expects {D}")
        z, d = normalize(s, stats)
        n = s.n_steps
        values[i, :n], mask[i, :n], delta[i, :n], valid[i, :n] = z, s.mask, d, 1.0
        last = np.zeros(D)  # the covariate mean in z-space
        for t in range(n):
            last = np.where(s.mask[t] > 0, z[t], last)
            x_last[i, t] = last
    bins, _ = discretize_labels(samples, spec) if B else (np.zeros(0, np.int64), None)
    return Batch(
        values.astype(dtype), mask.astype(dtype), delta.astype(dtype), x_last.astype(dtype),
        valid.astype(dtype),
        np.array([s.event_type for s in samples], dtype=np.int64),
        np.asarray(bins, dtype=np.int64),
        np.array([s.event_time for s in samples], dtype=np.float64),
        [s.subject_id for s in samples],
    )


@dataclass
class ForwardOutput:
    pdf: Tensor  # (B, K, T)
    preact: Tensor  # (B, K, T)


def forward(params: ModelParams, batch: Batch, config: ModelConfig, a0_offset=None) -> ForwardOutput:
    p = params.tensors
    enc = encode_batch(
        batch.values, batch.mask, batch.delta, batch.x_last, batch.valid, p, config.encoder_layers
    )
    if config.decoder_kind == "recurrent":
        a = decode(enc.final, enc.hidden, batch.valid, p, config.horizon, config.decoder_layers, a0_offset)
    else:
        a = mlp_decode(enc.final, enc.hidden, batch.valid, p)
    return ForwardOutput(joint_head(a), a)


def predict_pdfs(params: ModelParams, batch: Batch, config: ModelConfig, chunk: int = 256) -> np.ndarray:
    """Inference-only forward pass (no tape) returning float64 PDFs (B, K, T)."""
    out = []
    for start in range(0, len(batch), chunk):
        sub = batch.take(np.arange(start, min(start + chunk, len(batch))))
        out.append(forward(params, sub, config).pdf.data.astype(np.float64))
    return np.concatenate(out) if out else np.zeros((0, config.n_events, config.horizon))
