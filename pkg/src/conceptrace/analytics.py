"""Aggregate statistics computed over many trace matrices."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import KindMismatch


def _matrix(trace) -> np.ndarray:
    return np.asarray(getattr(trace, "matrix", trace), dtype=np.float64)


def shares(labels: Sequence[str]) -> dict[str, float]:
    """Percentage of each label in ``labels`` (keys sorted)."""
    counts = Counter(labels)
    n = len(labels)
    return {k: 100.0 * counts[k] / n for k in sorted(counts)} if n else {}


@dataclass(frozen=True)
class TopKSummary:
    k: int
    cells: list[tuple[int, int, float]]
    layer_counts: list[int]
    segment_shares: dict[str, float] = field(default_factory=dict)
    dsr_shares: dict[str, float] = field(default_factory=dict)
    sample_id: str | None = None
    n_tokens: int = 0

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "cells": [[t, l, v] for t, l, v in self.cells],
            "layer_counts": self.layer_counts,
            "shares": self.dsr_shares,
            "segment_shares": self.segment_shares,
        }


def top_k(trace, k: int, overlay=None) -> TopKSummary:
    """The k largest cells; ties go to the lower layer, then the lower token."""
    if k < 1:
        raise ValueError("k must be >= 1")
    m = _matrix(trace)
    T, L = m.shape
    tok, lay = np.divmod(np.arange(T * L), L)
    order = np.lexsort((tok, lay, -m.ravel()))[:k]
    cells = [(int(tok[i]), int(lay[i]), float(m.ravel()[i])) for i in order]
    counts = [0] * L
    for _, l, _ in cells:
        counts[l] += 1
    seg, dsr = {}, {}
    if overlay is not None:
        seg = shares([overlay.segments[t] for t, _, _ in cells])
        dsr = shares([overlay.dsr[t] for t, _, _ in cells])
    return TopKSummary(k, cells, counts, seg, dsr, getattr(trace, "sample_id", None), T)


@dataclass(frozen=True)
class LayerHistogram:
    counts: list[int]
    smoothed: list[float]

    def to_json(self) -> dict:
        return {"counts": self.counts, "smoothed": self.smoothed}


def smooth(values: Sequence[float]) -> list[float]:
    """Centered moving average of width 3, truncated at the edges."""
    n = len(values)
    out = []
    for i in range(n):
        win = values[max(0, i - 1): min(n, i + 2)]
        out.append(sum(win) / len(win))
    return out


def layer_histogram(summaries: Sequence[TopKSummary], n_layers: int) -> LayerHistogram:
    if not summaries:
        raise ValueError("need at least one summary")
    counts = [0] * n_layers
    for s in summaries:
        for _, l, _ in s.cells:
            counts[l] += 1
    return LayerHistogram(counts, smooth(counts))


@dataclass(frozen=True)
class LengthBucket:
    lo: int
    hi: int
    n_selected: int
    n_total: int

    @property
    def coverage(self) -> float:
        return self.n_selected / self.n_total

    def to_json(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "n_selected": self.n_selected,
                "n_total": self.n_total, "coverage": self.coverage}


def select_length_bucket(traces: Sequence, coverage: float = 0.8) -> tuple[LengthBucket, list]:
    """Narrowest token-length interval holding at least ``coverage`` of the traces.

    Among equally narrow intervals the one covering the most traces wins, then
    one containing the modal length, then the lowest.
    """
    if not traces:
        raise ValueError("need at least one trace")
    lengths = [_matrix(t).shape[0] for t in traces]
    n = len(lengths)
    need = math.ceil(coverage * n - 1e-9)
    counts = Counter(lengths)
    mode = min(counts, key=lambda x: (-counts[x], x))
    distinct = sorted(counts)
    best = None
    for i, a in enumerate(distinct):
        covered = 0
        for b in distinct[i:]:
            covered += counts[b]
            if covered >= need:
                key = (b - a, -covered, not a <= mode <= b, a)
                if best is None or key < best[0]:
                    best = (key, a, b, covered)
                break
    _, lo, hi, covered = best
    selected = [t for t, ln in zip(traces, lengths) if lo <= ln <= hi]
    return LengthBucket(lo, hi, covered, n), selected


@dataclass(frozen=True)
class AggregateTrace:
    kind: str
    mean: np.ndarray
    median: np.ndarray
    n_samples: int
    bucket: LengthBucket | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.mean.shape


def pad_rows(m: np.ndarray, n_rows: int) -> np.ndarray:
    """Zero rows appended at the bottom (after the prompt tokens)."""
    return np.vstack((m, np.zeros((n_rows - m.shape[0], m.shape[1]))))


def aggregate_traces(traces: Sequence, bucket: LengthBucket | None = None) -> AggregateTrace:
    if not traces:
        raise ValueError("need at least one trace")
    kinds = {getattr(t, "kind", None) for t in traces}
    if len(kinds) > 1:
        raise KindMismatch(f"cannot aggregate mixed kinds {sorted(map(str, kinds))}")
    mats = [_matrix(t) for t in traces]
    if len({m.shape[1] for m in mats}) > 1:
        raise ValueError("traces disagree on the number of layers")
    rows = max(m.shape[0] for m in mats)
    stack = np.stack([pad_rows(m, rows) for m in mats])
    return AggregateTrace(kinds.pop(), stack.mean(axis=0), np.median(stack, axis=0),
                          len(mats), bucket)


def _pos_lookup(samples) -> dict[str, str | None]:
    if isinstance(samples, Mapping):
        return dict(samples)
    return {s.sample_id: s.pos for s in samples}


def group_by_pos(summaries: Sequence[TopKSummary], samples, n_layers: int) -> dict[str, LayerHistogram]:
    """Layer histograms per definiendum POS; ``samples`` may be a sample_id->pos map."""
    pos = _pos_lookup(samples)
    groups: dict[str, list[TopKSummary]] = {}
    for s in summaries:
        tag = pos.get(s.sample_id)
        if tag is not None:
            groups.setdefault(tag, []).append(s)
    return {tag: layer_histogram(groups[tag], n_layers) for tag in sorted(groups)}


def length_stats(summaries: Sequence[TopKSummary], n_layers: int) -> dict[int, dict]:
    """Per input-length bucket: layer counts of top-k cells and their distribution."""
    buckets: dict[int, list[int]] = {}
    n_samples: Counter = Counter()
    for s in summaries:
        counts = buckets.setdefault(s.n_tokens, [0] * n_layers)
        n_samples[s.n_tokens] += 1
        for _, l, _ in s.cells:
            counts[l] += 1
    out = {}
    for length in sorted(buckets):
        counts = buckets[length]
        total = sum(counts)
        out[length] = {
            "n_samples": n_samples[length],
            "counts": counts,
            "distribution": [c / total if total else 0.0 for c in counts],
        }
    return out
