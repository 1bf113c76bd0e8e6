"""Per-token category labels laid over a trace matrix."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .analytics import shares, top_k
from .data import PROMPT_LABEL, UNLABELED, ReverseDictionarySample

SEGMENTS = ("early", "mid", "prompt")


@dataclass(frozen=True)
class OverlayMap:
    segments: tuple[str, ...]
    dsr: tuple[str, ...]
    definiendum_pos: str | None = None
    surfaces: tuple[str, ...] = ()

    def labels(self, by: str = "dsr") -> tuple[str, ...]:
        if by == "dsr":
            return self.dsr
        if by == "segment":
            return self.segments
        raise ValueError(f"unknown label family {by!r}")

    def to_json(self) -> list[dict]:
        surfaces = self.surfaces or ("",) * len(self.segments)
        return [{"surface": s, "segment": g, "dsr": d}
                for s, g, d in zip(surfaces, self.segments, self.dsr)]


def segment_positions(n_definiens: int, n_tokens: int) -> list[str]:
    """Early = first ceil(N/2) definiens tokens, mid = the rest, prompt = positions >= N."""
    if not 0 <= n_definiens <= n_tokens:
        raise ValueError(f"need 0 <= N ({n_definiens}) <= T ({n_tokens})")
    n_early = math.ceil(n_definiens / 2)
    return (["early"] * n_early + ["mid"] * (n_definiens - n_early)
            + ["prompt"] * (n_tokens - n_definiens))


def dsr_for_positions(sample: ReverseDictionarySample, n_tokens: int) -> list[str]:
    n = sample.n_definiens
    labels = [UNLABELED] * n + [PROMPT_LABEL] * (n_tokens - n)
    for span in sample.dsr_spans:
        for i in range(span.start, span.end):
            labels[i] = span.label
    return labels


def build_overlay(sample: ReverseDictionarySample, n_tokens: int,
                  surfaces: Sequence[str] = ()) -> OverlayMap:
    return OverlayMap(tuple(segment_positions(sample.n_definiens, n_tokens)),
                      tuple(dsr_for_positions(sample, n_tokens)), sample.pos, tuple(surfaces))


def label_share(trace, overlay: OverlayMap, k: int, by: str = "dsr") -> dict[str, float]:
    """Percent of the top-k cells whose token carries each label; sums to 100."""
    labels = overlay.labels(by)
    return shares([labels[t] for t, _, _ in top_k(trace, k).cells])
