"""Longitudinal samples, preprocessing and long-format file I/O."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

OBS_HEADER = ["subject_id", "time", "covariate", "value"]
LABEL_HEADER = ["subject_id", "event_time", "event_type"]


class IngestError(ValueError):
    pass


@dataclass
class LongitudinalSample:
    """One subject: aligned (steps x covariates) values, mask and deltas.

    ``values`` holds raw (unnormalized) measurements with 0.0 wherever
    ``mask`` is 0.  ``event_type`` 0 means censored at ``event_time``.
    """

    subject_id: str
    timestamps: np.ndarray
    values: np.ndarray
    mask: np.ndarray
    delta: np.ndarray
    event_type: int
    event_time: float

    @property
    def n_steps(self) -> int:
        return len(self.timestamps)

    @property
    def n_covariates(self) -> int:
        return self.values.shape[1]

    @property
    def censored(self) -> bool:
        return self.event_type == 0

    def equals(self, other: "LongitudinalSample") -> bool:
        return (
            self.subject_id == other.subject_id
            and self.event_type == other.event_type
            and self.event_time == other.event_time
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.delta, other.delta)
        )


@dataclass
class Dataset:
    covariates: list[str]
    samples: list[LongitudinalSample]
    time_unit: str = "unit"

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def n_events(self) -> int:
        return max((s.event_type for s in self.samples), default=0)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(self.covariates, [self.samples[i] for i in indices], self.time_unit)


@dataclass
class DatasetStats:
    """Per-covariate mean/std over observed training entries.

    ``delta_scale`` is the mean positive time gap in the training split; the
    encoder sees deltas divided by it.
    """

    covariates: list[str]
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray
    delta_scale: float = 1.0

    def to_dict(self) -> dict:
        return {
            "covariates": list(self.covariates),
            "mean": [float(x) for x in self.mean],
            "std": [float(x) for x in self.std],
            "constant": [bool(x) for x in self.constant],
            "delta_scale": float(self.delta_scale),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetStats":
        return cls(
            covariates=list(d["covariates"]),
            mean=np.asarray(d["mean"], dtype=np.float64),
            std=np.asarray(d["std"], dtype=np.float64),
            constant=np.asarray(d["constant"], dtype=bool),
            delta_scale=float(d["delta_scale"]),
        )


@dataclass(frozen=True)
class DiscretizationSpec:
    bin_width: float
    max_event_time: float
    horizon_factor: float = 1.25

    def __post_init__(self):
        if self.bin_width <= 0 or self.max_event_time <= 0:
            raise ValueError("bin_width and max_event_time must be positive")

    @property
    def horizon(self) -> int:
        # round first so 1.25 * 200 / 2 does not become 125.00000000000001
        return int(math.ceil(round(self.horizon_factor * self.max_event_time / self.bin_width, 9)))

    def beyond_horizon(self, tau: float) -> bool:
        return tau >= self.horizon * self.bin_width


def discretize_event_time(tau: float, spec: DiscretizationSpec) -> int:
    if tau < 0:
        raise ValueError(f"event time must be nonnegative, got {tau}")
    return min(int(math.floor(tau / spec.bin_width)), spec.horizon - 1)


def discretize_labels(samples: Sequence[LongitudinalSample], spec: DiscretizationSpec):
    """Return (bin index, beyond-horizon flag) arrays for a list of samples."""
    taus = np.array([s.event_time for s in samples], dtype=np.float64)
    bins = np.minimum(np.floor(taus / spec.bin_width).astype(np.int64), spec.horizon - 1)
    flags = taus >= spec.horizon * spec.bin_width
    if flags.any():
        logger.warning("%d event times lie beyond the horizon and were clamped", int(flags.sum()))
    return bins, flags


# --- delta / merging / capping -----------------------------------------------


def compute_delta(timestamps: np.ndarray, mask: np.ndarray) -> np.ndarray:
    timestamps = np.asarray(timestamps, dtype=np.float64)
    mask = np.asarray(mask)
    delta = np.zeros(mask.shape, dtype=np.float64)
    for t in range(1, len(timestamps)):
        gap = timestamps[t] - timestamps[t - 1]
        delta[t] = gap + np.where(mask[t - 1] == 0, delta[t - 1], 0.0)
    return delta


def merge_close_timestamps(sample: LongitudinalSample, threshold: float) -> LongitudinalSample:
    """Greedy left-to-right merge of steps within ``threshold`` of the running cluster mean."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    times = sample.timestamps
    if len(times) <= 1 or threshold == 0:
        return sample

    clusters: list[list[int]] = [[0]]
    centre = times[0]
    for t in range(1, len(times)):
        if times[t] - centre <= threshold:
            clusters[-1].append(t)
            centre = float(np.mean(times[clusters[-1]]))
        else:
            clusters.append([t])
            centre = times[t]
    if len(clusters) == len(times):
        return sample

    D = sample.n_covariates
    new_t = np.empty(len(clusters))
    new_v = np.zeros((len(clusters), D))
    new_m = np.zeros((len(clusters), D), dtype=sample.mask.dtype)
    for c, idx in enumerate(clusters):
        new_t[c] = np.mean(times[idx])
        m = sample.mask[idx].astype(np.float64)
        counts = m.sum(axis=0)
        seen = counts > 0
        new_v[c, seen] = (sample.values[idx] * m).sum(axis=0)[seen] / counts[seen]
        new_m[c] = seen
    return replace(sample, timestamps=new_t, values=new_v, mask=new_m, delta=compute_delta(new_t, new_m))


def cap_length(sample: LongitudinalSample, max_steps: int, seed) -> LongitudinalSample:
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    if sample.n_steps <= max_steps:
        return sample
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(sample.n_steps, size=max_steps, replace=False))
    t, m = sample.timestamps[keep], sample.mask[keep]
    return replace(sample, timestamps=t, values=sample.values[keep], mask=m, delta=compute_delta(t, m))


def preprocess(dataset: Dataset, merge_threshold: float, max_steps: int, seed: int) -> Dataset:
    out = []
    for i, s in enumerate(dataset.samples):
        s = merge_close_timestamps(s, merge_threshold)
        s = cap_length(s, max_steps, seed=[seed, i])
        out.append(s)
    return Dataset(dataset.covariates, out, dataset.time_unit)


# --- statistics ---------------------------------------------------------------


def compute_stats(dataset: Dataset) -> DatasetStats:
    D = len(dataset.covariates)
    total = np.zeros(D)
    total_sq = np.zeros(D)
    count = np.zeros(D)
    gaps = []
    for s in dataset.samples:
        m = s.mask.astype(np.float64)
        total += (s.values * m).sum(axis=0)
        total_sq += (s.values**2 * m).sum(axis=0)
        count += m.sum(axis=0)
        if s.n_steps > 1:
            gaps.append(np.diff(s.timestamps))
    safe = np.maximum(count, 1)
    mean = np.where(count > 0, total / safe, 0.0)
    var = np.where(count > 1, (total_sq - count * mean**2) / np.maximum(count - 1, 1), 0.0)
    std = np.sqrt(np.maximum(var, 0.0))
    constant = ~(std > 1e-12)
    std = np.where(constant, 1.0, std)
    gaps = np.concatenate(gaps) if gaps else np.zeros(0)
    gaps = gaps[gaps > 0]
    delta_scale = float(gaps.mean()) if gaps.size else 1.0
    return DatasetStats(list(dataset.covariates), mean, std, constant, delta_scale)


def normalize(sample: LongitudinalSample, stats: DatasetStats) -> tuple[np.ndarray, np.ndarray]:
    """Z-scored values (0 where unobserved) and scaled deltas."""
    z = (sample.values - stats.mean) / stats.std
    z = np.where(sample.mask > 0, z, 0.0)
    return z, sample.delta / stats.delta_scale


# --- long-format I/O ----------------------------------------------------------


def _open_rows(path: Path, header: list[str]):
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.reader(fh)
    got = next(reader, None)
    if got is None or [h.strip() for h in got] != header:
        fh.close()
        raise IngestError(f"{path}: expected header {','.join(header)}, got {got}")
    return fh, reader


def _parse_float(text: str, path: Path, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise IngestError(f"{path}: row {row}: non-numeric {column} {text!r}") from None
    if not math.isfinite(value):
        raise IngestError(f"{path}: row {row}: non-finite {column} {text!r}")
    return value


def ingest_long_format(
    observations: str | Path,
    labels: str | Path,
    covariates: Sequence[str] | None = None,
    time_unit: str = "unit",
) -> Dataset:
    """Build one sample per labelled subject from long-format observation rows.

    Repeated (subject, time, covariate) rows are averaged.  Without an explicit
    ``covariates`` list the global ordering is the sorted set of names seen.
    """
    observations, labels = Path(observations), Path(labels)

    label_rows: dict[str, tuple[float, int]] = {}
    fh, reader = _open_rows(labels, LABEL_HEADER)
    with fh:
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise IngestError(f"{labels}: row {row_no}: expected 3 fields, got {len(row)}")
            sid = row[0]
            tau = _parse_float(row[1], labels, row_no, "event_time")
            etype = _parse_float(row[2], labels, row_no, "event_type")
            if etype != int(etype) or etype < 0:
                raise IngestError(f"{labels}: row {row_no}: event_type must be a nonnegative integer")
            if tau <= 0:
                raise IngestError(f"{labels}: row {row_no}: event_time must be positive")
            if sid in label_rows:
                raise IngestError(f"{labels}: row {row_no}: duplicate subject {sid!r}")
            label_rows[sid] = (tau, int(etype))

    known = None if covariates is None else set(covariates)
    obs: dict[str, dict[float, dict[str, list[float]]]] = {}
    seen_names: set[str] = set()
    fh, reader = _open_rows(observations, OBS_HEADER)
    with fh:
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise IngestError(f"{observations}: row {row_no}: expected 4 fields, got {len(row)}")
            sid, t_text, name, v_text = row
            if known is not None and name not in known:
                raise IngestError(f"{observations}: row {row_no}: unknown covariate {name!r}")
            t = _parse_float(t_text, observations, row_no, "time")
            v = _parse_float(v_text, observations, row_no, "value")
            seen_names.add(name)
            obs.setdefault(sid, {}).setdefault(t, {}).setdefault(name, []).append(v)

    unlabelled = sorted(set(obs) - set(label_rows))
    if unlabelled:
        raise IngestError(f"subjects without labels: {', '.join(unlabelled)}")
    empty = [sid for sid in label_rows if sid not in obs]
    if empty:
        raise IngestError(f"no observations for subjects: {', '.join(empty)}")

    names = list(covariates) if covariates is not None else sorted(seen_names)
    col = {n: j for j, n in enumerate(names)}
    samples = []
    for sid, (tau, etype) in label_rows.items():
        by_time = obs[sid]
        times = np.array(sorted(by_time), dtype=np.float64)
        values = np.zeros((len(times), len(names)))
        mask = np.zeros((len(times), len(names)), dtype=np.uint8)
        for i, t in enumerate(times):
            for name, vs in by_time[t].items():
                j = col[name]
                values[i, j] = vs[0] if len(vs) == 1 else float(np.mean(vs))
                mask[i, j] = 1
        samples.append(
            LongitudinalSample(sid, times, values, mask, compute_delta(times, mask), etype, tau)
        )
    return Dataset(names, samples, time_unit)


def write_long_format(dataset: Dataset, observations: str | Path, labels: str | Path) -> int:
    """Write observation and label files; returns the number of observation rows."""
    n_rows = 0
    with open(observations, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBS_HEADER)
        for s in dataset.samples:
            for i, t in enumerate(s.timestamps):
                for j in np.flatnonzero(s.mask[i]):
                    w.writerow([s.subject_id, repr(float(t)), dataset.covariates[j], repr(float(s.values[i, j]))])
                    n_rows += 1
    with open(labels, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_HEADER)
        for s in dataset.samples:
            w.writerow([s.subject_id, repr(float(s.event_time)), s.event_type])
    return n_rows
