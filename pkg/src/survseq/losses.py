"""Training objective: log-likelihood plus an exp-kernel ranking term.

Conventions: ``pdf`` is a (B, K, T) tensor; event types are 1-based with 0
for censored subjects; ``event_bin`` is the discretized event/censoring time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

EPS_LOG = 1e-12


@dataclass(frozen=True)
class LossWeights:
    w_l: float = 1.0
    w_r: float = 0.0

    def __post_init__(self):
        if self.w_l < 0 or self.w_r < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.w_l == 0 and self.w_r == 0:
            raise ValueError("at least one loss weight must be positive")


@dataclass
class PairSet:
    """Acceptable (i, j) pairs with ``k`` the event of the earlier subject i."""

    i: np.ndarray
    j: np.ndarray
    k: np.ndarray

    def __len__(self) -> int:
        return len(self.i)


def build_pairs(event_type, event_bin) -> PairSet:
    """All (i, j) with i uncensored and i's bin strictly before j's; same-bin ties are excluded."""
    event_type = np.asarray(event_type)
    event_bin = np.asarray(event_bin)
    ok = (event_type[:, None] > 0) & (event_bin[:, None] < event_bin[None, :])
    i, j = np.nonzero(ok)
    return PairSet(i, j, event_type[i])


def log_likelihood(pdf, event_type, event_bin) -> Tensor:
    """-sum log p[k, tau] over uncensored subjects - sum log(1 - sum_k CDF_k(tau)) over censored.

    The censored term is evaluated as the PDF mass strictly after ``tau``,
    which equals ``1 - sum_k CDF_k(tau)`` for a normalized PDF and cannot go
    negative through rounding.
    """
    pdf = ad.as_tensor(pdf)
    event_type = np.asarray(event_type)
    event_bin = np.asarray(event_bin)
    total = Tensor(np.zeros((), dtype=pdf.dtype))
    unc = np.flatnonzero(event_type > 0)
    cen = np.flatnonzero(event_type == 0)
    if len(unc):
        p = pdf[unc, event_type[unc] - 1, event_bin[unc]]
        total = total - ad.sum(ad.log(p + EPS_LOG))
    if len(cen):
        B, K, T = pdf.shape
        per_bin = ad.sum(pdf[cen], axis=1)  # (C, T)
        tail = ad.cumsum(per_bin, axis=-1, reverse=True)
        tail = ad.concat([tail, np.zeros((len(cen), 1), dtype=pdf.dtype)], axis=-1)
        survival = tail[np.arange(len(cen)), event_bin[cen] + 1]
        total = total - ad.sum(ad.log(survival + EPS_LOG))
    return total


def ranking_loss_eq4(pdf, pairs: PairSet, event_bin) -> Tensor:
    """-(1/|pairs|) sum exp(CDF_k(tau_i | x_i) - CDF_k(tau_i | x_j)), compared at i's event bin only."""
    pdf = ad.as_tensor(pdf)
    if len(pairs) == 0:
        return Tensor(np.zeros((), dtype=pdf.dtype))
    cdf = ad.cumsum(pdf, axis=-1)
    tau = np.asarray(event_bin)[pairs.i]
    ci = cdf[pairs.i, pairs.k - 1, tau]
    cj = cdf[pairs.j, pairs.k - 1, tau]
    return -ad.sum(ad.exp(ci - cj)) * (1.0 / len(pairs))


def ranking_loss_eq5(pdf, pairs: PairSet) -> Tensor:
    """-(1/|pairs|) sum_t sum_pairs exp(CDF_k(t | x_i) - CDF_k(t | x_j)) over every horizon bin.

    The sum over bins is deliberately not averaged.
    """
    pdf = ad.as_tensor(pdf)
    if len(pairs) == 0:
        return Tensor(np.zeros((), dtype=pdf.dtype))
    cdf = ad.cumsum(pdf, axis=-1)
    ci = cdf[pairs.i, pairs.k - 1]  # (P, T)
    cj = cdf[pairs.j, pairs.k - 1]
    return -ad.sum(ad.exp(ci - cj)) * (1.0 / len(pairs))


@dataclass
class LossParts:
    total: Tensor
    likelihood: Tensor
    ranking: Tensor
    n_pairs: int


def total_loss(pdf, event_type, event_bin, weights: LossWeights, variant: str = "eq5") -> LossParts:
    pdf = ad.as_tensor(pdf)
    if pdf.shape[0] == 0:
        zero = Tensor(np.zeros((), dtype=pdf.dtype))
        return LossParts(zero, zero, zero, 0)
    ll = log_likelihood(pdf, event_type, event_bin)
    pairs = build_pairs(event_type, event_bin)
    if weights.w_r == 0:
        rank = Tensor(np.zeros((), dtype=pdf.dtype))
    elif variant == "eq5":
        rank = ranking_loss_eq5(pdf, pairs)
    elif variant == "eq4":
        rank = ranking_loss_eq4(pdf, pairs, event_bin)
    else:
        raise ValueError(f"unknown ranking variant {variant!r}")
    total = ll * weights.w_l + rank * weights.w_r if weights.w_r else ll * weights.w_l
    return LossParts(total, ll, rank, len(pairs))


def default_weights(horizon: int) -> LossWeights:
    return LossWeights(w_l=1.0, w_r=0.1 / horizon)
