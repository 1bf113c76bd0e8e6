from dataclasses import dataclass

import pytest

from conceptrace.data import ReverseDictionarySample, Vocab, corpus_vocab, get_template
from conceptrace.model import ModelConfig, Parameters, init_parameters
from conceptrace.synth import SynthSpec, synth_generate
from conceptrace.trainer import TrainConfig, evaluate, split, train

ACCEPTANCE_LINES: list[str] = []

# Desk-scale preset shared by the trained-model tests and the acceptance suite.
CORPUS_SPEC = SynthSpec(n_concepts=50, n_attributes=8, defs_per_concept=4, seed=11)
TRAIN_CONFIG = TrainConfig(learning_rate=2e-3, batch_size=16, epochs=200, seed=11,
                           weight_decay=0.5)


def toy_model_config(vocab_size: int) -> ModelConfig:
    return ModelConfig(n_layers=2, n_heads=2, d_model=64, d_ff=256, vocab_size=vocab_size,
                       max_context=32, seed=11)


@dataclass
class Trained:
    params: Parameters
    vocab: Vocab
    template: object
    train_set: list[ReverseDictionarySample]
    test_set: list[ReverseDictionarySample]
    correct: list[ReverseDictionarySample]
    history: list[float]
    seconds: float


@pytest.fixture(scope="session")
def trained() -> Trained:
    import time

    corpus = synth_generate(CORPUS_SPEC)
    vocab = corpus_vocab(corpus)
    template = get_template("often_referred")
    train_set, test_set = split(corpus, TRAIN_CONFIG.split_fraction, TRAIN_CONFIG.seed)
    start = time.perf_counter()
    params, history = train(init_parameters(toy_model_config(len(vocab))), train_set,
                            TRAIN_CONFIG, vocab, template)
    seconds = time.perf_counter() - start
    ev = evaluate(params, test_set, template, vocab)
    correct = [s for s in test_set if s.sample_id in set(ev.correct_ids)]
    return Trained(params, vocab, template, train_set, test_set, correct, history, seconds)


@pytest.fixture
def small_config() -> ModelConfig:
    return ModelConfig(n_layers=3, n_heads=2, d_model=8, d_ff=16, vocab_size=11,
                       max_context=10, seed=7)


@pytest.fixture
def small_params(small_config) -> Parameters:
    return init_parameters(small_config, seed=7)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
