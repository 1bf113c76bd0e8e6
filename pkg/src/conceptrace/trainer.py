"""Full-parameter training of the toy model on the reverse-dictionary task."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .data import PromptTemplate, ReverseDictionarySample, Vocab, apply_prompt
from .errors import TrainingDiverged
from .model import Parameters, forward, predict

OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 200
    seed: int = 0
    optimizer: str = "adam"
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    split_fraction: float = 0.8
    # Weight of an auxiliary next-token loss over every position (0 disables it).
    lm_loss_weight: float = 0.0

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning rate and weight decay must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not 0 < self.split_fraction < 1:
            raise ValueError("split fraction must be in (0, 1)")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")


def split(corpus: Sequence, fraction: float, seed: int) -> tuple[list, list]:
    """Seeded shuffled split; each part keeps corpus order."""
    if not corpus:
        raise ValueError("corpus must be nonempty")
    n = len(corpus)
    n_train = min(n, max(0, math.floor(fraction * n + 0.5)))
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = sorted(int(i) for i in perm[:n_train])
    test_idx = sorted(int(i) for i in perm[n_train:])
    return [corpus[i] for i in train_idx], [corpus[i] for i in test_idx]


def _encode(samples, vocab: Vocab, template: PromptTemplate):
    seqs, targets = [], []
    for s in samples:
        ids, _ = apply_prompt(s, template, vocab)
        seqs.append(ids)
        targets.append(vocab.token_id(s.definiendum))
    return seqs, targets


def _batch_loss(params: Parameters, seqs, targets, lm_weight: float) -> torch.Tensor:
    lengths = torch.tensor([len(s) for s in seqs])
    T = int(lengths.max())
    ids = torch.zeros(len(seqs), T, dtype=torch.long)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.tensor(s)
    x = params.token_embedding[ids]
    if params.pos_embedding is not None:
        x = x + params.pos_embedding[:T]
    logits, _ = forward(params, x, check_finite=False)
    rows = torch.arange(len(seqs))
    loss = F.cross_entropy(logits[rows, lengths - 1], torch.tensor(targets))
    if lm_weight:
        # Predict token t+1 from position t inside the real (unpadded) span.
        valid = torch.arange(T - 1)[None, :] < (lengths - 1)[:, None]
        lm = F.cross_entropy(logits[:, :-1][valid], ids[:, 1:][valid])
        loss = loss + lm_weight * lm
    return loss


def train(params: Parameters, train_set: Sequence[ReverseDictionarySample], config: TrainConfig,
          vocab: Vocab, template: PromptTemplate) -> tuple[Parameters, list[float]]:
    """Minimise cross-entropy of the definiendum at the final prompt position.

    Returns the trained parameters and one loss value per optimisation step.
    """
    seqs, targets = _encode(train_set, vocab, template)
    leaves = [t.detach().clone().requires_grad_(True) for t in params.tensors()]
    work = Parameters.from_tensors(params.config, leaves, untied=params.unembedding is not None)
    if config.optimizer == "adam":
        opt = torch.optim.AdamW(leaves, lr=config.learning_rate, betas=config.betas,
                                eps=config.adam_eps, weight_decay=config.weight_decay)
    else:
        opt = torch.optim.SGD(leaves, lr=config.learning_rate, weight_decay=config.weight_decay)

    rng = np.random.default_rng(config.seed)
    n = len(seqs)
    history: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss = _batch_loss(work, [seqs[i] for i in idx], [targets[i] for i in idx],
                               config.lm_loss_weight)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {len(history)}")
            history.append(value)
            opt.zero_grad()
            loss.backward()
            opt.step()
    return work.map(lambda t: t.detach().clone()), history


def initial_loss(params: Parameters, samples, vocab: Vocab, template: PromptTemplate) -> float:
    seqs, targets = _encode(samples, vocab, template)
    with torch.no_grad():
        return float(_batch_loss(params, seqs, targets, 0.0))


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    correct_ids: list[str] = field(default_factory=list)
    n_samples: int = 0


def evaluate(params: Parameters, samples: Sequence[ReverseDictionarySample],
             template: PromptTemplate, vocab: Vocab) -> EvalResult:
    correct = []
    for s in samples:
        ids, _ = apply_prompt(s, template, vocab)
        if predict(params, ids) == vocab.token_id(s.definiendum):
            correct.append(s.sample_id)
    acc = len(correct) / len(samples) if samples else 0.0
    return EvalResult(acc, correct, len(samples))
