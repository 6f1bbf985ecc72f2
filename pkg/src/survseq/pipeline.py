"""Training loop, cross-validation and prediction on top of the model modules."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import __version__
from .autodiff import Tensor, forward_backward
from .checkpoint import Checkpoint, CheckpointError
from .config import RunConfig
from .data import Dataset, DatasetStats, DiscretizationSpec, compute_stats, ingest_long_format, preprocess
from .losses import LossWeights, total_loss
from .metrics import Fragment, FoldReport, aggregate_folds, quantile_report
from .model import Batch, ModelConfig, ModelParams, expected_shapes, forward, init_params, make_batch, predict_pdfs
from .optim import Adam, NonFiniteGradientError, clip_by_global_norm
from .synth import generate

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Loss or gradient went non-finite; ``checkpoint`` holds the last good state."""

    def __init__(self, message: str, checkpoint: Checkpoint, epoch: int):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.epoch = epoch


# --- data plumbing ------------------------------------------------------------


def load_dataset(cfg: RunConfig) -> Dataset:
    """Raw dataset from the configured files, or a freshly generated synthetic cohort."""
    if cfg.uses_synthetic:
        return generate(cfg.synthetic).dataset
    return ingest_long_format(cfg.data.observations, cfg.data.labels, time_unit=cfg.data.time_unit)


def prepare(cfg: RunConfig, dataset: Dataset) -> Dataset:
    return preprocess(dataset, cfg.merge_threshold, cfg.data.max_steps, cfg.seed)


def resolve_spec(cfg: RunConfig, train: Dataset) -> DiscretizationSpec:
    max_t = cfg.data.max_event_time
    if max_t is None:
        if cfg.uses_synthetic:
            max_t = cfg.synthetic.max_event_time
        else:
            max_t = max((s.event_time for s in train.samples), default=0.0)
    if not max_t > 0:
        raise ValueError("cannot infer max_event_time from an empty training split")
    return DiscretizationSpec(cfg.data.bin_width, float(max_t))


def model_config(cfg: RunConfig, n_covariates: int, n_events: int, horizon: int) -> ModelConfig:
    m = cfg.model
    return ModelConfig(
        n_covariates, max(n_events, 1), horizon, m.hidden_dim, m.encoder_layers, m.decoder_layers,
        m.decoder_kind, m.mlp_width,
    )


def loss_weights(cfg: RunConfig, horizon: int) -> LossWeights:
    w_r = 0.1 / horizon if cfg.loss.w_r is None else cfg.loss.w_r
    return LossWeights(cfg.loss.w_l, w_r)


def _dtype(cfg: RunConfig):
    return np.float64 if cfg.train.dtype == "float64" else np.float32


# --- checkpoints --------------------------------------------------------------


def make_checkpoint(
    cfg: RunConfig, mcfg: ModelConfig, spec: DiscretizationSpec, stats: DatasetStats,
    params: ModelParams, optimizer: Adam | None = None, history: dict | None = None,
) -> Checkpoint:
    opt, step = {}, 0
    if optimizer is not None:
        st = optimizer.state
        opt = {f"adam.m.{k}": v for k, v in st.m.items()} | {f"adam.v.{k}": v for k, v in st.v.items()}
        step = st.step
    model = dataclasses.asdict(mcfg) | {
        "bin_width": spec.bin_width,
        "max_event_time": spec.max_event_time,
        "horizon_factor": spec.horizon_factor,
        "code_version": __version__,
    }
    return Checkpoint(
        config=cfg.to_dict(), stats=stats.to_dict(), model=model,
        tensors={k: v.copy() for k, v in params.arrays().items()},
        optimizer=opt, optimizer_step=step, history=history or {},
    )


@dataclass
class LoadedModel:
    params: ModelParams
    config: ModelConfig
    spec: DiscretizationSpec
    stats: DatasetStats
    run: RunConfig


def restore(ckpt: Checkpoint, dtype=np.float32) -> LoadedModel:
    m = dict(ckpt.model)
    spec = DiscretizationSpec(m.pop("bin_width"), m.pop("max_event_time"), m.pop("horizon_factor"))
    m.pop("code_version", None)
    mcfg = ModelConfig(**m)
    ckpt.validate_shapes(expected_shapes(mcfg))
    if mcfg.horizon != spec.horizon:
        raise CheckpointError(f"horizon {mcfg.horizon} disagrees with discretization ({spec.horizon})")
    params = ModelParams({k: v.astype(dtype) for k, v in ckpt.tensors.items()})
    return LoadedModel(params, mcfg, spec, DatasetStats.from_dict(ckpt.stats), RunConfig.from_dict(ckpt.config))


# --- training -----------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    params: ModelParams  # best-validation parameters
    model_config: ModelConfig
    spec: DiscretizationSpec
    stats: DatasetStats
    history: list[EpochRecord]
    best_epoch: int
    seconds: float = 0.0

    def history_dict(self) -> dict:
        return {
            "epochs": [dataclasses.asdict(r) for r in self.history],
            "best_epoch": self.best_epoch,
        }


def evaluate_loss(params: ModelParams, batch: Batch, mcfg: ModelConfig, weights: LossWeights, variant: str) -> float:
    """Per-subject total loss over a whole split (no tape)."""
    if len(batch) == 0:
        return float("nan")
    pdf = predict_pdfs(params, batch, mcfg).astype(params.dtype)
    parts = total_loss(Tensor(pdf), batch.event_type, batch.event_bin, weights, variant)
    return float(parts.total.data) / len(batch)


def train(
    cfg: RunConfig,
    train_set: Dataset,
    val_set: Dataset,
    spec: DiscretizationSpec | None = None,
    n_events: int | None = None,
    on_epoch: Callable[[int, ModelParams], None] | None = None,
) -> TrainResult:
    """Minibatch Adam on the total loss with early stopping on validation loss.

    ``on_epoch(epoch, params)`` is called with epoch 0 before any update and
    after every epoch.  Raises :class:`TrainingDiverged` on a non-finite loss
    or gradient.
    """
    t0 = time.perf_counter()
    ids = {s.subject_id for s in train_set.samples}
    overlap = ids.intersection(s.subject_id for s in val_set.samples)
    if overlap:
        raise ValueError(f"train and validation splits share {len(overlap)} subjects")
    if len(train_set) == 0:
        raise ValueError("empty training split")
    dtype = _dtype(cfg)
    stats = compute_stats(train_set)
    spec = spec or resolve_spec(cfg, train_set)
    K = n_events if n_events is not None else max(train_set.n_events, val_set.n_events, 1)
    mcfg = model_config(cfg, len(train_set.covariates), K, spec.horizon)
    weights = loss_weights(cfg, spec.horizon)
    variant = cfg.loss.ranking_variant
    params = init_params(mcfg, seed=cfg.seed, dtype=dtype)
    o = cfg.optim
    opt = Adam(params.tensors, lr=o.lr, betas=(o.beta1, o.beta2), eps=o.eps)

    full = make_batch(train_set.samples, stats, spec, dtype)
    val = make_batch(val_set.samples, stats, spec, dtype)
    rng = np.random.default_rng([cfg.seed, 1])
    bs = cfg.train.batch_size

    best = params.copy()
    best_loss = evaluate_loss(params, val, mcfg, weights, variant) if len(val) else math.inf
    best_epoch = 0
    history: list[EpochRecord] = []
    if on_epoch:
        on_epoch(0, params)

    def snapshot(epoch: int) -> Checkpoint:
        hist = {"epochs": [dataclasses.asdict(r) for r in history], "best_epoch": best_epoch}
        return make_checkpoint(cfg, mcfg, spec, stats, best, None, hist)

    bad = 0
    for epoch in range(1, cfg.train.max_epochs + 1):
        order = rng.permutation(len(full))
        total = 0.0
        for start in range(0, len(order), bs):
            sub = full.take(order[start : start + bs])

            def fn(sub=sub):
                pdf = forward(params, sub, mcfg).pdf
                return total_loss(pdf, sub.event_type, sub.event_bin, weights, variant).total

            out, grads = forward_backward(fn, params.tensors)
            loss = float(out.data)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", snapshot(epoch), epoch)
            if o.clip_norm is not None:
                clip_by_global_norm(grads, o.clip_norm)
            try:
                opt.step(grads)
            except NonFiniteGradientError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", snapshot(epoch), epoch) from None
            total += loss
        train_loss = total / len(full)
        val_loss = evaluate_loss(params, val, mcfg, weights, variant) if len(val) else train_loss
        history.append(EpochRecord(epoch, train_loss, val_loss))
        log.info("epoch %d train_loss=%.6g val_loss=%.6g", epoch, train_loss, val_loss)
        if on_epoch:
            on_epoch(epoch, params)
        if val_loss < best_loss:
            best_loss, best_epoch, bad = val_loss, epoch, 0
            best = params.copy()
        else:
            bad += 1
            if bad > cfg.train.patience:
                break

    result = TrainResult(None, best, mcfg, spec, stats, history, best_epoch, time.perf_counter() - t0)
    result.checkpoint = make_checkpoint(cfg, mcfg, spec, stats, best, opt, result.history_dict())
    return result


# --- cross-validation -----------------------------------------------------------


def fold_assignment(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Seeded subject-level partition into ``folds`` test index sets."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if n < folds:
        raise ValueError(f"{n} subjects cannot fill {folds} folds")
    perm = np.random.default_rng([seed, 7]).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def split_validation(indices: np.ndarray, fraction: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """(fit, validation) split of ``indices``; validation gets ceil(fraction * n), at least 1 when n > 1."""
    idx = np.random.default_rng(seed).permutation(indices)
    n_val = min(max(int(math.ceil(fraction * len(idx))), 1), len(idx) - 1) if len(idx) > 1 else 0
    return np.sort(idx[n_val:]), np.sort(idx[:n_val])


def evaluate(params: ModelParams, mcfg: ModelConfig, spec: DiscretizationSpec, stats: DatasetStats,
             dataset: Dataset) -> Fragment:
    batch = make_batch(dataset.samples, stats, spec, params.dtype)
    pdfs = predict_pdfs(params, batch, mcfg)
    return quantile_report(pdfs, batch.event_type, batch.event_time, spec.bin_width)


@dataclass
class CrossValidation:
    report: FoldReport
    results: list[TrainResult] = field(default_factory=list)
    folds: list[np.ndarray] = field(default_factory=list)


def crossvalidate(cfg: RunConfig, dataset: Dataset, model_name: str | None = None) -> CrossValidation:
    folds = fold_assignment(len(dataset), cfg.train.folds, cfg.seed)
    K = max(dataset.n_events, 1)
    all_idx = np.arange(len(dataset))
    fragments, results = [], []
    for f, test_idx in enumerate(folds):
        rest = np.setdiff1d(all_idx, test_idx)
        fit_idx, val_idx = split_validation(rest, cfg.train.val_fraction, [cfg.seed, 8, f])
        fit, val, test = dataset.subset(fit_idx), dataset.subset(val_idx), dataset.subset(test_idx)
        res = train(cfg, fit, val, n_events=K)
        if not any(s.event_type > 0 for s in test.samples):
            log.warning("fold %d: no uncensored test subjects; metrics absent", f)
        frag = evaluate(res.params, res.model_config, res.spec, res.stats, test)
        log.info("fold %d done in %.1fs (best epoch %d)", f, res.seconds, res.best_epoch)
        fragments.append(frag)
        results.append(res)
    name = model_name or ("seq2seq" if cfg.model.decoder_kind == "recurrent" else "mlp")
    return CrossValidation(aggregate_folds(fragments, name), results, folds)


# --- prediction -------------------------------------------------------------------


@dataclass
class Prediction:
    subject_ids: list[str]
    pdfs: np.ndarray  # (n, K, T)
    times: np.ndarray  # (n, K) expected time per event, in time units
    cdfs: np.ndarray  # (n, K, T)
    bin_width: float


def check_covariates(expected: list[str], got: list[str]) -> None:
    if list(expected) == list(got):
        return
    missing = sorted(set(expected) - set(got))
    extra = sorted(set(got) - set(expected))
    if missing or extra:
        raise ValueError(f"covariate mismatch: missing={missing} extra={extra}")
    raise ValueError("covariate order differs from the checkpoint")


def predict(model: LoadedModel, dataset: Dataset) -> Prediction:
    from .decoder import predicted_times

    check_covariates(model.stats.covariates, dataset.covariates)
    batch = make_batch(dataset.samples, model.stats, model.spec, model.params.dtype)
    pdfs = predict_pdfs(model.params, batch, model.config)
    times = predicted_times(pdfs) * model.spec.bin_width if len(pdfs) else np.zeros((0, model.config.n_events))
    return Prediction(batch.subject_ids, pdfs, times, np.cumsum(pdfs, axis=-1), model.spec.bin_width)
