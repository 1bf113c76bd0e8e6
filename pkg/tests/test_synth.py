import itertools

import pytest

from conceptrace.errors import GenerationError
from conceptrace.synth import SynthSpec, synth_generate


def _concept_key(sample):
    words = sample.definiens_words
    genus = words[1]
    attrs = frozenset(w for w, lab in zip(words, _labels(sample)) if lab == "differentia_quality")
    return genus, attrs


def _labels(sample):
    labels = ["unlabeled"] * sample.n_definiens
    for s in sample.dsr_spans:
        for i in range(s.start, s.end):
            labels[i] = s.label
    return labels


def test_single_concept():
    samples = synth_generate(SynthSpec(1, 1, 1, seed=3))
    assert len(samples) == 1
    s = samples[0]
    supertype = [sp for sp in s.dsr_spans if sp.label == "supertype"]
    assert len(supertype) == 1
    assert s.definiens_words[supertype[0].start] == s.definiens_words[1]


@pytest.mark.parametrize("spec", [SynthSpec(50, 8, 2, seed=11), SynthSpec(30, 5, 4, seed=2),
                                  SynthSpec(7, 5, 1, seed=0, attrs_per_concept=3)])
def test_definienda_unique_per_concept(spec):
    samples = synth_generate(spec)
    by_name = {}
    for s in samples:
        by_name.setdefault(s.definiendum, set()).add(_concept_key(s))
    assert len(by_name) == spec.n_concepts
    assert all(len(keys) == 1 for keys in by_name.values())
    assert len(samples) == spec.n_concepts * spec.defs_per_concept
    assert len({s.sample_id for s in samples}) == len(samples)


def test_distinct_concepts_exhaustive():
    samples = synth_generate(SynthSpec(50, 8, 2, seed=11))
    concepts = {}
    for s in samples:
        concepts[s.definiendum] = _concept_key(s)
    for (n1, k1), (n2, k2) in itertools.combinations(concepts.items(), 2):
        assert k1 != k2, (n1, n2)


def test_deterministic():
    a = synth_generate(SynthSpec(20, 6, 3, seed=5))
    b = synth_generate(SynthSpec(20, 6, 3, seed=5))
    c = synth_generate(SynthSpec(20, 6, 3, seed=6))
    assert a == b
    assert a != c


def test_dsr_layout():
    s = synth_generate(SynthSpec(3, 4, 2, seed=1))[0]
    labels = _labels(s)
    words = s.definiens_words
    assert labels[1] == "supertype"
    assert all(lab == "role_particle" for w, lab in zip(words, labels) if w in {"that", "which", "is", "and"})
    assert labels.count("differentia_quality") == 2


@pytest.mark.parametrize("spec", [
    SynthSpec(10, 2, 1, seed=0, n_genera=1),   # only C(2,2)=1 attribute set
    SynthSpec(2, 3, 5, seed=0),                # 2 orders x 2 pronouns = 4 variants
    SynthSpec(6000, 50, 1, seed=0),            # word pool exhausted
])
def test_generation_errors(spec):
    with pytest.raises(GenerationError):
        synth_generate(spec)
