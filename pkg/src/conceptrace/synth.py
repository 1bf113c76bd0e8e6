"""Synthetic genus/differentia reverse-dictionary corpus.

Every concept is one genus word plus a fixed set of attribute words, named by a
unique made-up definiendum. Definitions read ``a <genus> that is <a1> and <a2>``
(the relative pronoun and attribute order vary between a concept's
definitions) and carry DSR spans by construction.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .data import DsrSpan, ReverseDictionarySample
from .errors import GenerationError

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
PRONOUNS = ("that", "which")
FUNCTION_WORDS = frozenset({"a", "is", "and", *PRONOUNS})


@dataclass(frozen=True)
class SynthSpec:
    n_concepts: int
    n_attributes: int
    defs_per_concept: int
    seed: int
    attrs_per_concept: int = 2
    n_genera: int | None = None

    def __post_init__(self):
        for name in ("n_concepts", "n_attributes", "defs_per_concept", "attrs_per_concept"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_genera is not None and self.n_genera < 1:
            raise ValueError("n_genera must be >= 1")

    @property
    def k(self) -> int:
        return min(self.attrs_per_concept, self.n_attributes)

    @property
    def genera(self) -> int:
        if self.n_genera is not None:
            return self.n_genera
        return max(1, math.ceil(self.n_concepts / 4))


def word_pool() -> list[str]:
    """All two-syllable CV-CV pseudo-words, in a fixed order."""
    syl = [c + v for c in _CONSONANTS for v in _VOWELS]
    return [a + b for a in syl for b in syl]


def synth_generate(spec: SynthSpec) -> list[ReverseDictionarySample]:
    rng = np.random.default_rng(spec.seed)
    k = spec.k
    n_gen = spec.genera
    if n_gen * math.comb(spec.n_attributes, k) < spec.n_concepts:
        raise GenerationError(
            f"{n_gen} genera x C({spec.n_attributes},{k}) attribute sets cannot give "
            f"{spec.n_concepts} distinct concepts")
    n_variants = math.factorial(k) * len(PRONOUNS)
    if spec.defs_per_concept > n_variants:
        raise GenerationError(f"only {n_variants} distinct definitions per concept available")

    pool = [w for w in word_pool() if w not in FUNCTION_WORDS]
    need = n_gen + spec.n_attributes + spec.n_concepts
    if need > len(pool):
        raise GenerationError(f"vocabulary exhausted: need {need} words, pool has {len(pool)}")
    picked = [pool[i] for i in rng.choice(len(pool), size=need, replace=False)]
    genera = picked[:n_gen]
    attributes = picked[n_gen:n_gen + spec.n_attributes]
    names = picked[n_gen + spec.n_attributes:]

    seen: set[tuple[int, tuple[int, ...]]] = set()
    concepts = []
    while len(concepts) < spec.n_concepts:
        g = int(rng.integers(n_gen))
        attrs = tuple(sorted(int(a) for a in rng.choice(spec.n_attributes, size=k, replace=False)))
        if (g, attrs) in seen:
            continue
        seen.add((g, attrs))
        concepts.append((g, attrs))

    samples = []
    for ci, (g, attrs) in enumerate(concepts):
        variants = [(pron, perm) for perm in itertools.permutations(attrs) for pron in PRONOUNS]
        chosen = rng.choice(len(variants), size=spec.defs_per_concept, replace=False)
        for j, vi in enumerate(sorted(int(v) for v in chosen)):
            pron, perm = variants[vi]
            samples.append(_render(f"c{ci:03d}d{j}", names[ci], genera[g],
                                   [attributes[a] for a in perm], pron))
    return samples


def _render(sample_id: str, name: str, genus: str, attrs: list[str], pronoun: str):
    words = ["a", genus, pronoun, "is"]
    spans = [DsrSpan("accessory_determiner", 0, 1), DsrSpan("supertype", 1, 2),
             DsrSpan("role_particle", 2, 4)]
    for i, a in enumerate(attrs):
        if i:
            spans.append(DsrSpan("role_particle", len(words), len(words) + 1))
            words.append("and")
        spans.append(DsrSpan("differentia_quality", len(words), len(words) + 1))
        words.append(a)
    return ReverseDictionarySample(sample_id, "en", " ".join(words), name,
                                   tuple(spans), "noun").validate()
