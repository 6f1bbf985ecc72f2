"""Synthetic competing-risks cohort with sparse, drifting longitudinal covariates.

Generation steps:

1. Baseline covariates ``x`` are i.i.d. Weibull(shape, location, scale).
2. Two event-time scales come from the quadratic/linear scores
   ``s1 = a . x[k1]**2 + b . x[k2]`` and ``s2 = a . x[k2]**2 + b . x[k1]``;
   each score is mapped to a Weibull scale by :meth:`Calibration.scale_of`
   and the event times are drawn from Weibull(event_shape, that scale).
3. The first-hitting event wins; a ``censoring_rate`` fraction of subjects is
   censored uniformly before it, and anything past ``max_event_time`` is
   censored there.
4. Each subject is observed at 2..max_steps random times before its
   event/censoring time; covariate values drift exponentially with a
   per-(subject, covariate) rate, and each entry is recorded with a
   probability that falls with its z-score (not missing at random).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .data import Dataset, LongitudinalSample, compute_delta, write_long_format

REFERENCE_SIZE = 20000


@dataclass
class SyntheticConfig:
    n_covariates: int = 20
    n_samples: int = 20000
    shape: float = 2.0
    location: float = 0.0
    scale: float = 1.0
    event_shape: float = 1.5
    alpha: list[float] | None = None
    beta: list[float] | None = None
    k1: list[int] | None = None
    censoring_rate: float = 0.20
    missing_rate: float = 0.77
    max_event_time: float = 200.0
    max_steps: int = 20
    drift_max: float = 1.0
    nmar_slope: float = -1.0
    score_min: float = 1.0
    score_max: float | None = None
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.n_covariates < 2 or self.n_covariates % 2:
            raise ValueError("n_covariates must be an even number >= 2 (k1 and k2 share coefficient vectors)")
        if self.shape <= 0 or self.scale <= 0 or self.event_shape <= 0:
            raise ValueError("Weibull shape and scale must be positive")
        for name in ("censoring_rate", "missing_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.max_steps < 2:
            raise ValueError("max_steps must be at least 2")
        if self.max_event_time <= 0:
            raise ValueError("max_event_time must be positive")
        half = self.n_covariates // 2
        if self.k1 is not None:
            k1 = set(self.k1)
            if len(k1) != len(self.k1) or len(k1) != half or not k1 <= set(range(self.n_covariates)):
                raise ValueError(f"k1 must be {half} distinct indices in [0, {self.n_covariates})")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if v is not None and len(v) != half:
                raise ValueError(f"{name} must have {half} entries")

    @property
    def upper_score(self) -> float:
        return self.score_max if self.score_max is not None else self.max_event_time / 3

    @property
    def covariate_names(self) -> list[str]:
        width = len(str(self.n_covariates - 1))
        return [f"x{i:0{width}d}" for i in range(self.n_covariates)]


@dataclass
class Calibration:
    """Population-level constants derived from a seeded reference draw."""

    alpha: np.ndarray
    beta: np.ndarray
    k1: np.ndarray
    k2: np.ndarray
    score_lo: float
    score_hi: float
    score_min: float
    score_max: float
    value_mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    value_std: np.ndarray = field(default_factory=lambda: np.ones(0))
    nmar_offset: float = 0.0
    nmar_slope: float = -1.0

    def scores(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_2d(x)
        s1 = x[:, self.k1] ** 2 @ self.alpha + x[:, self.k2] @ self.beta
        s2 = x[:, self.k2] ** 2 @ self.alpha + x[:, self.k1] @ self.beta
        return s1, s2

    def scale_of(self, s: np.ndarray) -> np.ndarray:
        """Affinely map |s| from its reference 1%..99% range onto [score_min, score_max], then clamp."""
        span = max(self.score_hi - self.score_lo, 1e-12)
        g = self.score_min + (np.abs(s) - self.score_lo) / span * (self.score_max - self.score_min)
        return np.clip(g, self.score_min, self.score_max)

    def observe_prob(self, values: np.ndarray) -> np.ndarray:
        z = (values - self.value_mean) / self.value_std
        return expit(self.nmar_offset + self.nmar_slope * z)


def _coefficients(config: SyntheticConfig):
    rng = np.random.default_rng([config.seed, 101])
    half = config.n_covariates // 2
    alpha = np.asarray(config.alpha if config.alpha is not None else rng.uniform(0.0, 1.0, half), float)
    beta = np.asarray(config.beta if config.beta is not None else rng.uniform(0.0, 1.0, half), float)
    if config.k1 is not None:
        k1 = np.asarray(config.k1, dtype=np.int64)
    else:
        k1 = np.sort(rng.permutation(config.n_covariates)[:half])
    k2 = np.setdiff1d(np.arange(config.n_covariates), k1)
    return alpha, beta, k1, k2


def sample_covariates(config: SyntheticConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draws from Weibull(shape, location, scale)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if config.shape <= 0 or config.scale <= 0:
        raise ValueError("Weibull shape and scale must be positive")
    u = rng.random((n, config.n_covariates))
    return config.location + config.scale * (-np.log1p(-u)) ** (1.0 / config.shape)


def sample_event_times(x: np.ndarray, config: SyntheticConfig, calib: Calibration, rng: np.random.Generator):
    """Draw (T1, T2) for one covariate row or a matrix of rows."""
    s1, s2 = calib.scores(x)
    n = len(s1)
    u = rng.random((2, n))
    e = (-np.log1p(-u)) ** (1.0 / config.event_shape)
    t1 = calib.scale_of(s1) * e[0]
    t2 = calib.scale_of(s2) * e[1]
    # a draw of exactly zero would make an empty observation window
    tiny = np.finfo(np.float64).tiny
    return np.maximum(t1, tiny), np.maximum(t2, tiny)


def apply_censoring(t1: np.ndarray, t2: np.ndarray, config: SyntheticConfig, rng: np.random.Generator):
    """Return (event_type, event_time) with 0 marking censored subjects."""
    t1, t2 = np.atleast_1d(t1), np.atleast_1d(t2)
    first = np.where(t1 <= t2, 1, 2)
    tmin = np.minimum(t1, t2)
    u = rng.random((2, len(t1)))
    censor = u[0] < config.censoring_rate
    # 1 - U lies in (0, 1], so the censoring time is strictly positive
    ctime = tmin * (1.0 - u[1]) * (1 - 1e-12)
    event_type = np.where(censor, 0, first)
    event_time = np.where(censor, ctime, tmin)
    late = event_time > config.max_event_time
    event_type = np.where(late, 0, event_type)
    event_time = np.where(late, config.max_event_time, event_time)
    return event_type.astype(np.int64), event_time


def _trajectory(x: np.ndarray, event_time: float, config: SyntheticConfig, rng: np.random.Generator):
    m = int(rng.integers(2, config.max_steps + 1))
    times = np.sort(rng.uniform(0.0, event_time, m))
    times = np.unique(times[times > 0])
    rates = rng.uniform(-config.drift_max, config.drift_max, config.n_covariates)
    values = x[None, :] * np.exp(np.outer(times / event_time, rates))
    u = rng.random(values.shape)
    return times, values, u


def longitudinalize(
    x: np.ndarray,
    event_time: float,
    config: SyntheticConfig,
    calib: Calibration,
    rng: np.random.Generator,
    subject_id: str = "0",
    event_type: int = 0,
) -> LongitudinalSample:
    if event_time <= 0:
        raise ValueError("event_time must be positive")
    times, values, u = _trajectory(np.asarray(x, float), event_time, config, rng)
    p = calib.observe_prob(values)
    mask = (u < p).astype(np.uint8)
    if not mask.any():
        # keep at least one observation: the entry closest to being recorded
        i, j = np.unravel_index(int(np.argmax(p - u)), p.shape)
        mask[i, j] = 1
    keep = mask.any(axis=1)
    times, values, mask = times[keep], values[keep], mask[keep]
    values = np.where(mask > 0, values, 0.0)
    return LongitudinalSample(
        subject_id, times, values, mask, compute_delta(times, mask), int(event_type), float(event_time)
    )


def _bisect_offset(z: np.ndarray, slope: float, target: float) -> float:
    """Offset a with mean(sigmoid(a + slope * z)) == target (monotone in a)."""
    if target <= 0.0 or target >= 1.0:
        return -np.inf if target <= 0.0 else np.inf
    sz = slope * z
    return brentq(lambda a: float(np.mean(expit(a + sz))) - target, -60.0, 60.0, xtol=1e-12)


def calibrate(config: SyntheticConfig) -> Calibration:
    """Fix the score rescaling and the NMAR offset from a seeded reference population."""
    alpha, beta, k1, k2 = _coefficients(config)
    rng = np.random.default_rng([config.seed, 202])
    calib = Calibration(
        alpha, beta, k1, k2, 0.0, 1.0, config.score_min, config.upper_score, nmar_slope=config.nmar_slope
    )
    x = sample_covariates(config, REFERENCE_SIZE, rng)
    s = np.abs(np.concatenate(calib.scores(x)))
    calib.score_lo, calib.score_hi = (float(q) for q in np.quantile(s, [0.01, 0.99]))

    t1, t2 = sample_event_times(x, config, calib, rng)
    _, tau = apply_censoring(t1, t2, config, rng)
    vals = [_trajectory(x[i], tau[i], config, rng)[1] for i in range(REFERENCE_SIZE)]
    allv = np.concatenate(vals)
    calib.value_mean = allv.mean(axis=0)
    calib.value_std = np.where(allv.std(axis=0) > 0, allv.std(axis=0), 1.0)
    z = (allv - calib.value_mean) / calib.value_std
    calib.nmar_offset = _bisect_offset(z.ravel(), config.nmar_slope, 1.0 - config.missing_rate)
    return calib


@dataclass
class SyntheticCohort:
    dataset: Dataset
    covariates: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    calibration: Calibration


def generate(config: SyntheticConfig) -> SyntheticCohort:
    calib = calibrate(config)
    rng = np.random.default_rng([config.seed, 303])
    n = config.n_samples
    x = sample_covariates(config, n, rng)
    t1, t2 = sample_event_times(x, config, calib, rng)
    event_type, event_time = apply_censoring(t1, t2, config, rng)
    width = len(str(n - 1))
    samples = [
        longitudinalize(
            x[i], float(event_time[i]), config, calib, np.random.default_rng([config.seed, 404, i]),
            subject_id=f"s{i:0{width}d}", event_type=int(event_type[i]),
        )
        for i in range(n)
    ]
    return SyntheticCohort(Dataset(config.covariate_names, samples), x, t1, t2, calib)


def missing_fraction(dataset: Dataset) -> float:
    total = sum(s.mask.size for s in dataset.samples)
    observed = sum(int(s.mask.sum()) for s in dataset.samples)
    return 1.0 - observed / total if total else float("nan")


def export(dataset: Dataset, out_dir: str | Path, config: SyntheticConfig | None = None) -> dict:
    """Write observations.csv, labels.csv and manifest.json into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    obs_path, label_path = out_dir / "observations.csv", out_dir / "labels.csv"
    n_rows = write_long_format(dataset, obs_path, label_path)
    manifest = {
        "kind": "synthetic",
        "observations": obs_path.name,
        "labels": label_path.name,
        "n_subjects": len(dataset),
        "n_observation_rows": n_rows,
        "covariates": dataset.covariates,
        "config": asdict(config) if config is not None else None,
        "seed": config.seed if config is not None else None,
    }
    from . import __version__

    manifest["code_version"] = __version__
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def weibull_mean(shape: float, scale: float, location: float = 0.0) -> float:
    return location + scale * math.gamma(1.0 + 1.0 / shape)
