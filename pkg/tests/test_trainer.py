import math

import pytest
import torch

from conceptrace.data import apply_prompt, corpus_vocab, get_template
from conceptrace.errors import TrainingDiverged
from conceptrace.model import ModelConfig, init_parameters, predict
from conceptrace.synth import SynthSpec, synth_generate
from conceptrace.trainer import TrainConfig, evaluate, initial_loss, split, train

@pytest.mark.parametrize("n,fraction,sizes", [(10, 0.8, (8, 2)), (2, 0.5, (1, 1)), (5, 0.5, (3, 2))])
def test_split_sizes(n, fraction, sizes):
    a, b = split(list(range(n)), fraction, seed=0)
    assert (len(a), len(b)) == sizes
    assert sorted(a + b) == list(range(n))
    assert a == sorted(a) and b == sorted(b)


def test_split_deterministic():
    corpus = list(range(40))
    assert split(corpus, 0.8, 3) == split(corpus, 0.8, 3)
    assert split(corpus, 0.8, 3) != split(corpus, 0.8, 4)


@pytest.fixture(scope="module")
def tiny():
    corpus = synth_generate(SynthSpec(6, 4, 2, seed=1))
    vocab = corpus_vocab(corpus)
    cfg = ModelConfig(n_layers=1, n_heads=2, d_model=16, d_ff=32, vocab_size=len(vocab),
                      max_context=24, seed=2)
    return corpus, vocab, cfg, get_template("often_referred")


def test_zero_lr_is_identity(tiny):
    corpus, vocab, cfg, tpl = tiny
    p0 = init_parameters(cfg)
    p1, hist = train(p0, corpus, TrainConfig(learning_rate=0.0, batch_size=len(corpus), epochs=4),
                     vocab, tpl)
    assert all(torch.equal(a, b) for a, b in zip(p0.tensors(), p1.tensors()))
    # Row order changes per epoch, so only summation-order noise is allowed.
    assert max(hist) - min(hist) <= 1e-12


def test_loss_decreases_and_is_seeded(tiny):
    corpus, vocab, cfg, tpl = tiny
    tc = TrainConfig(learning_rate=3e-3, batch_size=4, epochs=30, seed=5)
    _, h1 = train(init_parameters(cfg), corpus, tc, vocab, tpl)
    _, h2 = train(init_parameters(cfg), corpus, tc, vocab, tpl)
    assert h1 == h2
    assert len(h1) == tc.epochs * math.ceil(len(corpus) / tc.batch_size)
    assert sum(h1[-3:]) / 3 < sum(h1[:3]) / 3


def test_train_does_not_mutate_input(tiny):
    corpus, vocab, cfg, tpl = tiny
    p0 = init_parameters(cfg)
    before = [t.clone() for t in p0.tensors()]
    train(p0, corpus, TrainConfig(learning_rate=1e-2, epochs=2), vocab, tpl)
    assert all(torch.equal(a, b) for a, b in zip(before, p0.tensors()))


def test_initial_loss_is_log_vocab(tiny):
    corpus, vocab, cfg, tpl = tiny
    p = init_parameters(cfg, zero_unembedding=True)
    assert initial_loss(p, corpus, vocab, tpl) == pytest.approx(math.log(len(vocab)), abs=1e-3)


def test_divergence_raises(tiny):
    corpus, vocab, cfg, tpl = tiny
    p = init_parameters(cfg)
    p = p.map(lambda t: t * 1e200)
    with pytest.raises(TrainingDiverged):
        train(p, corpus, TrainConfig(epochs=1, optimizer="sgd"), vocab, tpl)


def test_evaluate_matches_recount(tiny):
    corpus, vocab, cfg, tpl = tiny
    p = init_parameters(cfg)
    res = evaluate(p, corpus, tpl, vocab)
    recount = sum(predict(p, apply_prompt(s, tpl, vocab)[0]) == vocab.token_id(s.definiendum)
                  for s in corpus)
    assert res.accuracy == recount / len(corpus)
    assert res.n_samples == len(corpus)


def test_untrained_is_near_chance(tiny):
    corpus, vocab, cfg, tpl = tiny
    accs = [evaluate(init_parameters(cfg, seed=s), corpus, tpl, vocab).accuracy for s in range(5)]
    assert sum(accs) / len(accs) <= 0.25


def test_trained_model_generalises(trained):
    assert evaluate(trained.params, trained.test_set, trained.template, trained.vocab).accuracy >= 0.9
