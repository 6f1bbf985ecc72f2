import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from survseq.metrics import (
    Fragment,
    aggregate_folds,
    bucket_members,
    mae,
    quantile_report,
    quantile_thresholds,
    summarize,
    time_dependent_ci,
)


def brute_force_ci(F, times, events, t, event):
    """Direct O(n^2) enumeration of comparable pairs."""
    good, ties, total = 0, 0, 0
    n = len(F)
    for i in range(n):
        if events[i] != event or times[i] > t:
            continue
        for j in range(n):
            if i == j or not times[i] < times[j]:
                continue
            total += 1
            if F[i] > F[j]:
                good += 1
            elif F[i] == F[j]:
                ties += 1
    return None if total == 0 else (good + 0.5 * ties) / total


def _instance(seed, n=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(2, 101))
    times = rng.integers(1, 30, n).astype(float)  # integer times produce ties
    events = rng.integers(0, 3, n)
    F = np.round(rng.uniform(size=n), 1)  # coarse CDFs produce ties
    t = float(rng.choice(times))
    return F, times, events, t


@pytest.mark.parametrize("seed", range(50))
def test_ci_matches_brute_force(seed):
    F, times, events, t = _instance(seed)
    for k in (1, 2):
        assert time_dependent_ci(F, times, events, t, k) == brute_force_ci(F, times, events, t, k)


def test_ci_matches_brute_force_with_small_chunks():
    F, times, events, t = _instance(123, n=100)
    assert time_dependent_ci(F, times, events, t, 1, chunk=7) == brute_force_ci(F, times, events, t, 1)


def test_ci_perfect_orderings():
    times = np.arange(1.0, 11.0)
    events = np.ones(10, int)
    assert time_dependent_ci(-times, times, events, 10.0, 1) == 1.0
    assert time_dependent_ci(times, times, events, 10.0, 1) == 0.0
    assert time_dependent_ci(np.zeros(10), times, events, 10.0, 1) == 0.5


def test_ci_absent_and_invalid():
    assert time_dependent_ci([0.1, 0.2], [1.0, 2.0], [0, 0], 5.0, 1) is None
    assert time_dependent_ci([0.1, 0.2], [2.0, 2.0], [1, 1], 5.0, 1) is None
    with pytest.raises(ValueError):
        time_dependent_ci([0.1], [1.0], [1], 0.0, 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_ci_invariant_under_increasing_transform(seed):
    F, times, events, t = _instance(seed)
    base = time_dependent_ci(F, times, events, t, 1)
    assert time_dependent_ci(np.exp(3 * F) + 2, times, events, t, 1) == base


def test_mae_examples():
    assert mae([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mae([5.0], [2.0]) == 3.0
    assert mae([0.0, 10.0], [2.0, 6.0]) == 3.0
    assert mae([], []) is None
    a, b = np.arange(5.0), np.array([3.0, 1.0, 4.0, 1.0, 5.0])
    perm = [4, 2, 0, 1, 3]
    assert mae(a[perm], b[perm]) == pytest.approx(mae(a, b), rel=1e-15)


def test_quantile_thresholds_linear_rule():
    np.testing.assert_allclose(quantile_thresholds(np.arange(1.0, 101.0)), [25.75, 50.5, 75.25, 100.0])
    np.testing.assert_array_equal(quantile_thresholds(np.full(7, 3.0)), [3.0] * 4)
    assert np.all(np.isnan(quantile_thresholds([])))


def test_buckets_are_nested():
    times = np.random.default_rng(0).exponential(10, 200)
    buckets = [set(bucket_members(times, thr)) for thr in quantile_thresholds(times)]
    for small, big in zip(buckets, buckets[1:]):
        assert small <= big
    assert buckets[-1] == set(range(200))


def _report_inputs(n=60, K=2, T=20, bw=2.0, seed=0):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(n, K, T))
    pdfs = np.exp(logits) / np.exp(logits).sum(axis=(1, 2), keepdims=True)
    types = rng.integers(0, K + 1, n)
    times = rng.uniform(0.5, T * bw - 0.5, n)
    return pdfs, types, times, bw


def test_quantile_report_against_direct_computation():
    pdfs, types, times, bw = _report_inputs()
    frag = quantile_report(pdfs, types, times, bw)
    thr = np.quantile(times[types > 0], [0.25, 0.5, 0.75, 1.0])
    T = pdfs.shape[-1]
    for level, t in zip((0.25, 0.5, 0.75, 1.0), thr):
        assert frag.thresholds[level] == pytest.approx(t)
        for k in (1, 2):
            idx = [i for i in range(len(times)) if types[i] == k and times[i] <= t]
            pred = [bw * np.dot(np.arange(T), pdfs[i, k - 1]) / pdfs[i, k - 1].sum() for i in idx]
            assert frag.mae[(k, level)] == pytest.approx(np.mean(np.abs(np.array(pred) - times[idx])))
            F = pdfs[:, k - 1, : min(int(t // bw), T - 1) + 1].sum(axis=-1)
            assert frag.ci[(k, level)] == pytest.approx(brute_force_ci(F, times, types, t, k), abs=1e-12)
    assert frag.n_mae[(1, 1.0)] == int(np.sum(types == 1))


def test_quantile_report_identical_times_share_buckets():
    pdfs, types, _, bw = _report_inputs(n=10)
    types[:] = 1
    frag = quantile_report(pdfs, types, np.full(10, 7.0), bw)
    assert len({frag.n_mae[(1, q)] for q in frag.thresholds}) == 1
    assert len({frag.mae[(1, q)] for q in frag.thresholds}) == 1


def test_quantile_report_without_uncensored_subjects():
    pdfs, _, times, bw = _report_inputs(n=5)
    frag = quantile_report(pdfs, np.zeros(5, int), times, bw)
    assert all(v is None for v in frag.mae.values())


def test_summarize_examples():
    s = summarize([0.8, 0.9])
    assert s.mean == pytest.approx(0.85)
    same = summarize([0.5] * 4)
    assert same.lower == same.upper == 0.5
    vals = [0.7, 0.8, 0.75, 0.9, 0.85]
    s = summarize(vals)
    # mean 0.8; squared deviations sum to 0.025; sample variance 0.00625
    half = 1.96 * math.sqrt(0.00625) / math.sqrt(5)
    assert s.mean == pytest.approx(0.8)
    assert s.variance == pytest.approx(0.00625)
    assert (s.lower, s.upper) == (pytest.approx(0.8 - half), pytest.approx(0.8 + half))
    one = summarize([0.6])
    assert one.mean == 0.6 and one.lower is None
    assert summarize([None, None]).mean is None
    assert summarize([0.4, None, 0.6]).mean == pytest.approx(0.5)


def test_aggregate_and_report_files(tmp_path):
    frags = []
    for seed in range(3):
        pdfs, types, times, bw = _report_inputs(seed=seed)
        frags.append(quantile_report(pdfs, types, times, bw))
    frags.append(Fragment())  # a fold with nothing to report
    rep = aggregate_folds(frags, model="m")
    assert rep.events == [1, 2] and rep.levels == [0.25, 0.5, 0.75, 1.0]
    assert rep.mae[(1, 1.0)].values == [f.mae[(1, 1.0)] for f in frags[:3]]
    rep.write(tmp_path)
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["n_folds"] == 4 and len(data["rows"]) == 8
    text = (tmp_path / "report.txt").read_text()
    assert "event=2 quantile=1.00" in text
