import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conceptrace.analytics import (aggregate_traces, group_by_pos, layer_histogram, length_stats,
                                   select_length_bucket, shares, smooth, top_k)
from conceptrace.errors import KindMismatch

from .oracles import brute_length_bucket, brute_top_k


class _T:
    def __init__(self, matrix, kind="hidden", sample_id=None):
        self.matrix = np.asarray(matrix, dtype=float)
        self.kind = kind
        self.sample_id = sample_id


def test_top_k_ties():
    m = np.array([[1.0, 1.0], [1.0, 0.5]])
    assert [(t, l) for t, l, _ in top_k(m, 3).cells] == [(0, 0), (1, 0), (0, 1)]


def test_top_k_layer_counts():
    m = np.array([[0.1, 0.9, 0.2], [0.8, 0.7, 0.0]])
    s = top_k(m, 3)
    assert s.cells == [(0, 1, 0.9), (1, 0, 0.8), (1, 1, 0.7)]
    assert s.layer_counts == [1, 2, 0]


def test_top_k_matches_full_sort():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        T, L = rng.integers(1, 7, size=2)
        m = rng.integers(0, 5, size=(T, L)) / 4  # many ties
        k = int(rng.integers(1, T * L + 1))
        assert top_k(m, k).cells == brute_top_k(m, k)


def test_top_k_k_larger_than_cells():
    assert len(top_k(np.ones((2, 2)), 10).cells) == 4


def test_shares():
    assert shares(["a", "b", "a", "a"]) == {"a": 75.0, "b": 25.0}
    assert shares([]) == {}


def test_smooth_example():
    assert smooth([0, 2, 0]) == pytest.approx([1.0, 2 / 3, 1.0])
    assert smooth([5]) == [5.0]


def test_layer_histogram_sums():
    sums = [top_k(np.array([[0.0, 1.0, 0.5]]), 2), top_k(np.array([[1.0, 0.0, 0.0]]), 1)]
    h = layer_histogram(sums, 3)
    assert h.counts == [1, 1, 1]
    assert sum(h.counts) == 3


@pytest.mark.parametrize("lengths,lo,hi,n", [
    ([5] * 8 + [9, 20], 5, 5, 8),
    ([3, 4, 5, 6, 7], 3, 6, 4),
    ([10, 10, 11, 11, 12, 30, 31, 32, 33, 34], 10, 32, 8),
    ([7], 7, 7, 1),
])
def test_length_bucket_examples(lengths, lo, hi, n):
    bucket, selected = select_length_bucket([np.zeros((x, 2)) for x in lengths])
    assert (bucket.lo, bucket.hi, bucket.n_selected) == (lo, hi, n)
    assert len(selected) == n
    assert bucket.coverage >= 0.8


@settings(max_examples=200)
@given(st.lists(st.integers(1, 15), min_size=1, max_size=25), st.sampled_from([0.5, 0.8, 1.0]))
def test_length_bucket_is_minimal(lengths, coverage):
    bucket, selected = select_length_bucket([np.zeros((x, 1)) for x in lengths], coverage)
    width, count = brute_length_bucket(lengths, coverage)
    assert bucket.hi - bucket.lo == width
    assert bucket.n_selected == count
    assert all(bucket.lo <= t.shape[0] <= bucket.hi for t in selected)


def test_aggregate_example():
    a = _T([[1.0, 0.0], [0.5, 0.5]])
    b = _T([[0.0, 1.0], [0.5, 0.0], [1.0, 1.0]])
    c = _T([[0.5, 0.5]])
    agg = aggregate_traces([a, b, c])
    assert agg.shape == (3, 2)
    np.testing.assert_allclose(agg.mean, [[0.5, 0.5], [1 / 3, 1 / 6], [1 / 3, 1 / 3]])
    np.testing.assert_allclose(agg.median, [[0.5, 0.5], [0.5, 0.0], [0.0, 0.0]])


def test_aggregate_matches_elementwise():
    rng = np.random.default_rng(3)
    mats = [rng.random((int(rng.integers(2, 6)), 3)) for _ in range(7)]
    agg = aggregate_traces([_T(m) for m in mats])
    rows = max(len(m) for m in mats)
    for t in range(rows):
        for l in range(3):
            vals = sorted(m[t, l] if t < len(m) else 0.0 for m in mats)
            assert agg.mean[t, l] == pytest.approx(sum(vals) / 7, abs=1e-12)
            assert agg.median[t, l] == vals[3]


def test_aggregate_kind_mismatch():
    with pytest.raises(KindMismatch):
        aggregate_traces([_T(np.zeros((2, 2)), "hidden"), _T(np.zeros((2, 2)), "mlp")])


def test_pos_groups_partition():
    rng = np.random.default_rng(4)
    sums = [top_k(_T(rng.random((4, 3)), sample_id=f"s{i}"), 2) for i in range(9)]
    pos = {f"s{i}": ("noun", "verb", "adjective")[i % 3] for i in range(9)}
    groups = group_by_pos(sums, pos, 3)
    assert sorted(groups) == ["adjective", "noun", "verb"]
    total = np.sum([g.counts for g in groups.values()], axis=0)
    assert list(total) == layer_histogram(sums, 3).counts


def test_length_stats_partition():
    rng = np.random.default_rng(5)
    sums = [top_k(rng.random((int(rng.integers(3, 6)), 4)), 3) for _ in range(12)]
    stats = length_stats(sums, 4)
    assert sum(v["n_samples"] for v in stats.values()) == 12
    total = np.sum([v["counts"] for v in stats.values()], axis=0)
    assert list(total) == layer_histogram(sums, 4).counts
    for v in stats.values():
        assert sum(v["distribution"]) == pytest.approx(1.0)
