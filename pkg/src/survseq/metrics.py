"""MAE, time-dependent concordance, quantile buckets and fold aggregation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .decoder import predicted_times, smoothness

QUANTILE_LEVELS = (0.25, 0.50, 0.75, 1.00)
QUANTILE_METHOD = "linear"
Z_95 = 1.96


def mae(predicted, observed) -> float | None:
    predicted = np.asarray(predicted, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    if predicted.size == 0:
        return None
    return float(np.mean(np.abs(predicted - observed)))


def time_dependent_ci(cdf_at_t, times, events, t: float, event: int, chunk: int = 2048) -> float | None:
    """Fraction of comparable pairs ranked correctly by the CDF truncated at ``t``.

    A pair (i, j) is comparable when i had ``event``, T_i < T_j and T_i <= t.
    It is concordant when F(t | x_i) > F(t | x_j); exact ties count one half.
    Returns None when no pair is comparable.
    """
    if not t > 0:
        raise ValueError("truncation time must be positive")
    F = np.asarray(cdf_at_t, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events)
    anchors = np.flatnonzero((events == event) & (times <= t))
    if anchors.size == 0:
        return None
    # sort once by time so each anchor's partners are a suffix
    order = np.argsort(times, kind="stable")
    ts, Fs = times[order], F[order]
    good = 0.0
    total = 0
    for start in range(0, anchors.size, chunk):
        a = anchors[start : start + chunk]
        first_later = np.searchsorted(ts, times[a], side="right")
        later = np.arange(len(ts))[None, :] >= first_later[:, None]
        fa = F[a][:, None]
        good += np.sum(later & (Fs[None, :] < fa)) + 0.5 * np.sum(later & (Fs[None, :] == fa))
        total += int(later.sum())
    if total == 0:
        return None
    return float(good / total)


def quantile_thresholds(times, levels: Sequence[float] = QUANTILE_LEVELS) -> np.ndarray:
    times = np.asarray(times, dtype=np.float64)
    if times.size == 0:
        return np.full(len(levels), np.nan)
    return np.quantile(times, levels, method=QUANTILE_METHOD)


def bucket_members(times, threshold: float) -> np.ndarray:
    """Cumulative bucket: indices with event/censoring time at or below ``threshold``."""
    return np.flatnonzero(np.asarray(times) <= threshold)


@dataclass
class Fragment:
    """Metrics of one evaluated split, keyed by (event, quantile level)."""

    mae: dict[tuple[int, float], float | None] = field(default_factory=dict)
    ci: dict[tuple[int, float], float | None] = field(default_factory=dict)
    n_mae: dict[tuple[int, float], int] = field(default_factory=dict)
    thresholds: dict[float, float] = field(default_factory=dict)
    smoothness: float | None = None


def quantile_report(
    pdfs: np.ndarray,
    event_type,
    event_time,
    bin_width: float,
    levels: Sequence[float] = QUANTILE_LEVELS,
) -> Fragment:
    """Per (event, cumulative quantile) MAE and CI(t = quantile threshold)."""
    pdfs = np.asarray(pdfs, dtype=np.float64)
    event_type = np.asarray(event_type)
    event_time = np.asarray(event_time, dtype=np.float64)
    n, K, T = pdfs.shape
    frag = Fragment(smoothness=smoothness(pdfs) if n else None)
    pred = predicted_times(pdfs) * bin_width if n else np.zeros((0, K))
    cdfs = np.cumsum(pdfs, axis=-1)
    thresholds = quantile_thresholds(event_time[event_type > 0], levels)
    for level, thr in zip(levels, thresholds):
        frag.thresholds[float(level)] = float(thr)
        for k in range(1, K + 1):
            key = (k, float(level))
            if not np.isfinite(thr):
                frag.mae[key], frag.ci[key], frag.n_mae[key] = None, None, 0
                continue
            members = np.flatnonzero((event_type == k) & (event_time <= thr))
            frag.mae[key] = mae(pred[members, k - 1], event_time[members])
            frag.n_mae[key] = int(members.size)
            tbin = min(int(math.floor(thr / bin_width)), T - 1)
            frag.ci[key] = time_dependent_ci(cdfs[:, k - 1, tbin], event_time, event_type, thr, k) if thr > 0 else None
    return frag


@dataclass
class Summary:
    values: list[float]
    mean: float | None
    std: float | None
    variance: float | None
    lower: float | None
    upper: float | None

    @property
    def half_width(self) -> float | None:
        return None if self.upper is None else self.upper - self.mean


def summarize(values: Sequence[float | None]) -> Summary:
    vals = [float(v) for v in values if v is not None and np.isfinite(v)]
    if not vals:
        return Summary([], None, None, None, None, None)
    mean = float(np.mean(vals))
    if len(vals) < 2:
        return Summary(vals, mean, None, None, None, None)
    std = float(np.std(vals, ddof=1))
    half = Z_95 * std / math.sqrt(len(vals))
    return Summary(vals, mean, std, std * std, mean - half, mean + half)


@dataclass
class FoldReport:
    model: str
    folds: list[Fragment]
    mae: dict[tuple[int, float], Summary]
    ci: dict[tuple[int, float], Summary]
    smoothness: Summary

    @property
    def events(self) -> list[int]:
        return sorted({k for k, _ in self.mae})

    @property
    def levels(self) -> list[float]:
        return sorted({q for _, q in self.mae})

    def to_json(self) -> dict:
        rows = []
        for (k, q), s in sorted(self.mae.items()):
            c = self.ci[(k, q)]
            rows.append(
                {
                    "model": self.model,
                    "event": k,
                    "quantile": q,
                    "MAE": s.mean,
                    "MAE_interval": None if s.lower is None else [s.lower, s.upper],
                    "MAE_folds": s.values,
                    "CI": c.mean,
                    "CI_interval": None if c.lower is None else [c.lower, c.upper],
                    "CI_folds": c.values,
                }
            )
        return {
            "model": self.model,
            "n_folds": len(self.folds),
            "quantile_method": QUANTILE_METHOD,
            "interval": "mean +/- 1.96 * sample_std / sqrt(n_folds)",
            "smoothness": self.smoothness.mean,
            "rows": rows,
        }

    def to_text(self) -> str:
        lines = [f"model={self.model} folds={len(self.folds)} quantile_method={QUANTILE_METHOD}"]
        for (k, q), s in sorted(self.mae.items()):
            c = self.ci[(k, q)]
            lines.append(
                f"event={k} quantile={q:.2f} MAE={_fmt(s.mean)} MAE_pm={_fmt(s.half_width)} "
                f"CI={_fmt(c.mean)} CI_pm={_fmt(c.half_width)}"
            )
        lines.append(f"smoothness={_fmt(self.smoothness.mean)}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir, stem: str = "report") -> None:
        from pathlib import Path

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{stem}.txt").write_text(self.to_text(), encoding="utf-8")
        with open(out_dir / f"{stem}.json", "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")


def _fmt(v) -> str:
    return "NA" if v is None else f"{v:.6g}"


def aggregate_folds(fragments: Sequence[Fragment], model: str = "seq2seq") -> FoldReport:
    keys = sorted({key for f in fragments for key in f.mae})
    mae_s = {key: summarize([f.mae.get(key) for f in fragments]) for key in keys}
    ci_s = {key: summarize([f.ci.get(key) for f in fragments]) for key in keys}
    smooth = summarize([f.smoothness for f in fragments])
    return FoldReport(model, list(fragments), mae_s, ci_s, smooth)
