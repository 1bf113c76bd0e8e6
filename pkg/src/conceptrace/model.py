"""Minimal decoder-only transformer with recordable and patchable sublayer states.

Each block computes

    mha   = MHA(LN_attn(h_prev))
    h_mid = LN_mid(h_prev + mha)
    mlp   = W2 @ gelu(W1 @ h_mid + b1) + b2
    h     = h_prev + mha + mlp

so the hidden state is literally the sum of the previous state and the two
sublayer outputs. Everything runs in float64 on CPU.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Iterator, Literal, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InvalidPatch, InvalidToken, NumericalOverflow

DTYPE = torch.float64
Kind = Literal["hidden", "mha", "mlp"]
KINDS: tuple[str, ...] = ("hidden", "mha", "mlp")
POSITIONAL_SCHEMES = ("learned_absolute", "rotary")
ROTARY_BASE = 10000.0


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    n_heads: int = 2
    d_model: int = 64
    d_ff: int = 256
    vocab_size: int = 64
    max_context: int = 32
    positional_scheme: str = "learned_absolute"
    d_rot: int = 0
    layernorm_epsilon: float = 1e-5
    seed: int = 0
    tie_embeddings: bool = True

    def __post_init__(self):
        for name in ("n_layers", "n_heads", "d_model", "d_ff", "vocab_size", "max_context"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.positional_scheme not in POSITIONAL_SCHEMES:
            raise ValueError(f"unknown positional scheme {self.positional_scheme!r}")
        if self.positional_scheme == "rotary":
            if self.d_rot < 2 or self.d_rot % 2 or self.d_rot > self.d_head:
                raise ValueError(f"d_rot must be even and in [2, d_head={self.d_head}], got {self.d_rot}")
        if not self.layernorm_epsilon > 0:
            raise ValueError("layernorm_epsilon must be positive")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @classmethod
    def gptj_6b(cls) -> "ModelConfig":
        """Full-scale shape of GPT-J-6B (never instantiated at desk scale)."""
        return cls(n_layers=28, n_heads=16, d_model=4096, d_ff=16384, vocab_size=50400,
                   max_context=2048, positional_scheme="rotary", d_rot=64,
                   tie_embeddings=False)


@dataclass(frozen=True)
class LayerParams:
    w_q: torch.Tensor
    w_k: torch.Tensor
    w_v: torch.Tensor
    w_o: torch.Tensor
    w1: torch.Tensor
    b1: torch.Tensor
    w2: torch.Tensor
    b2: torch.Tensor
    ln_attn_g: torch.Tensor
    ln_attn_b: torch.Tensor
    ln_mid_g: torch.Tensor
    ln_mid_b: torch.Tensor


LAYER_FIELDS = tuple(f.name for f in fields(LayerParams))


@dataclass(frozen=True)
class Parameters:
    config: ModelConfig
    token_embedding: torch.Tensor
    pos_embedding: torch.Tensor | None
    layers: tuple[LayerParams, ...]
    ln_final_g: torch.Tensor
    ln_final_b: torch.Tensor
    unembedding: torch.Tensor | None = None

    @property
    def unembed_matrix(self) -> torch.Tensor:
        return self.token_embedding if self.unembedding is None else self.unembedding

    def named_tensors(self) -> Iterator[tuple[str, torch.Tensor]]:
        """Tensors in declaration order (the serialization order)."""
        yield "token_embedding", self.token_embedding
        if self.pos_embedding is not None:
            yield "pos_embedding", self.pos_embedding
        for i, layer in enumerate(self.layers):
            for name in LAYER_FIELDS:
                yield f"layers.{i}.{name}", getattr(layer, name)
        yield "ln_final_g", self.ln_final_g
        yield "ln_final_b", self.ln_final_b
        if self.unembedding is not None:
            yield "unembedding", self.unembedding

    def tensors(self) -> list[torch.Tensor]:
        return [t for _, t in self.named_tensors()]

    def map(self, fn) -> "Parameters":
        """Apply ``fn`` to every tensor, returning a new Parameters."""
        return Parameters.from_tensors(self.config, [fn(t) for t in self.tensors()],
                                       untied=self.unembedding is not None)

    @classmethod
    def from_tensors(cls, config: ModelConfig, tensors: Sequence[torch.Tensor],
                     untied: bool | None = None) -> "Parameters":
        it = iter(tensors)
        if untied is None:
            untied = not config.tie_embeddings
        tok = next(it)
        pos = next(it) if config.positional_scheme == "learned_absolute" else None
        layers = tuple(LayerParams(*(next(it) for _ in LAYER_FIELDS)) for _ in range(config.n_layers))
        g, b = next(it), next(it)
        unemb = next(it) if untied else None
        return cls(config, tok, pos, layers, g, b, unemb)

    def shapes(self) -> list[tuple[int, ...]]:
        return [tuple(s) for s in expected_shapes(self.config, self.unembedding is not None)]


def expected_shapes(config: ModelConfig, untied: bool) -> list[tuple[int, ...]]:
    d, f, v = config.d_model, config.d_ff, config.vocab_size
    out: list[tuple[int, ...]] = [(v, d)]
    if config.positional_scheme == "learned_absolute":
        out.append((config.max_context, d))
    per_layer = [(d, d)] * 4 + [(d, f), (f,), (f, d), (d,)] + [(d,)] * 4
    out += per_layer * config.n_layers
    out += [(d,), (d,)]
    if untied:
        out.append((v, d))
    return out


def init_parameters(config: ModelConfig, seed: int | None = None,
                    zero_unembedding: bool = False) -> Parameters:
    """Gaussian init with std 1/sqrt(d_model); biases zero, layernorm gains one.

    ``zero_unembedding`` gives an untied all-zero unembedding, so the initial
    next-token distribution is exactly uniform.
    """
    if seed is None:
        seed = config.seed
    gen = torch.Generator().manual_seed(int(seed))
    scale = 1.0 / math.sqrt(config.d_model)

    def gauss(*shape):
        return torch.randn(*shape, generator=gen, dtype=DTYPE) * scale

    d, f = config.d_model, config.d_ff
    tok = gauss(config.vocab_size, d)
    pos = gauss(config.max_context, d) if config.positional_scheme == "learned_absolute" else None
    layers = []
    for _ in range(config.n_layers):
        layers.append(LayerParams(
            w_q=gauss(d, d), w_k=gauss(d, d), w_v=gauss(d, d), w_o=gauss(d, d),
            w1=gauss(d, f), b1=torch.zeros(f, dtype=DTYPE),
            w2=gauss(f, d), b2=torch.zeros(d, dtype=DTYPE),
            ln_attn_g=torch.ones(d, dtype=DTYPE), ln_attn_b=torch.zeros(d, dtype=DTYPE),
            ln_mid_g=torch.ones(d, dtype=DTYPE), ln_mid_b=torch.zeros(d, dtype=DTYPE),
        ))
    unemb = None
    if zero_unembedding:
        unemb = torch.zeros(config.vocab_size, d, dtype=DTYPE)
    elif not config.tie_embeddings:
        unemb = gauss(config.vocab_size, d)
    return Parameters(config, tok, pos, tuple(layers),
                      torch.ones(d, dtype=DTYPE), torch.zeros(d, dtype=DTYPE), unemb)


def zero_parameters(config: ModelConfig) -> Parameters:
    """Every entry zero, with an untied (zero) unembedding."""
    shapes = expected_shapes(config, untied=True)
    return Parameters.from_tensors(config, [torch.zeros(s, dtype=DTYPE) for s in shapes], untied=True)


# --- embeddings -----------------------------------------------------------

def embed(params: Parameters, tokens: Sequence[int]) -> torch.Tensor:
    """Token (+ learned positional) embedding; rotary models return raw E[token]."""
    cfg = params.config
    ids = [int(t) for t in tokens]
    for t in ids:
        if not 0 <= t < cfg.vocab_size:
            raise InvalidToken(f"token id {t} outside [0, {cfg.vocab_size})")
    if len(ids) > cfg.max_context:
        raise ValueError(f"sequence length {len(ids)} exceeds max_context {cfg.max_context}")
    idx = torch.tensor(ids, dtype=torch.long)
    x = params.token_embedding[idx]
    if cfg.positional_scheme == "learned_absolute":
        x = x + params.pos_embedding[: len(ids)]
    return x


def rotary_angles(n_positions: int, d_rot: int) -> torch.Tensor:
    """Angle table (n_positions, d_rot/2): position * base**(-2i/d_rot)."""
    inv = ROTARY_BASE ** (-torch.arange(0, d_rot, 2, dtype=DTYPE) / d_rot)
    return torch.arange(n_positions, dtype=DTYPE)[:, None] * inv[None, :]


def apply_rotary(x: torch.Tensor, d_rot: int) -> torch.Tensor:
    """Rotate interleaved pairs (0,1), (2,3), ... of the first d_rot dims of x[..., T, d]."""
    angles = rotary_angles(x.shape[-2], d_rot)
    cos, sin = torch.cos(angles), torch.sin(angles)
    rot, rest = x[..., :d_rot], x[..., d_rot:]
    even, odd = rot[..., 0::2], rot[..., 1::2]
    out = torch.stack((even * cos - odd * sin, even * sin + odd * cos), dim=-1).flatten(-2)
    return torch.cat((out, rest), dim=-1)


# --- forward --------------------------------------------------------------

@dataclass(frozen=True)
class ActivationRecord:
    """States of one unbatched forward pass; arrays are (L, T, d_model)."""

    h_in: torch.Tensor
    hidden: torch.Tensor
    mha: torch.Tensor
    mlp: torch.Tensor

    @property
    def n_layers(self) -> int:
        return self.hidden.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.hidden.shape[1]

    def states(self, kind: str) -> torch.Tensor:
        return {"hidden": self.hidden, "mha": self.mha, "mlp": self.mlp}[kind]

    def residual_error(self) -> float:
        """Max relative violation of h[l] = h[l-1] + mha[l] + mlp[l]."""
        prev = torch.cat((self.h_in[None], self.hidden[:-1]), dim=0)
        diff = (self.hidden - prev - self.mha - self.mlp).abs()
        denom = torch.maximum(self.hidden.abs(), torch.ones_like(self.hidden))
        return float((diff / denom).max())


@dataclass(frozen=True)
class PatchSpec:
    """Replace ``kind`` states at (token, layer) cells with values from ``source``."""

    kind: str
    cells: frozenset[tuple[int, int]]
    source: ActivationRecord

    def __init__(self, kind: str, cells, source: ActivationRecord):
        if kind not in KINDS:
            raise InvalidPatch(f"unknown patch kind {kind!r}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "cells", frozenset((int(t), int(l)) for t, l in cells))
        object.__setattr__(self, "source", source)
        for t, l in self.cells:
            if not (0 <= t < source.n_tokens and 0 <= l < source.n_layers):
                raise InvalidPatch(f"cell (token={t}, layer={l}) outside donor bounds "
                                   f"({source.n_tokens} tokens, {source.n_layers} layers)")

    def tokens_at(self, layer: int) -> list[int]:
        return sorted(t for t, l in self.cells if l == layer)


def _layer_norm(x, g, b, eps):
    return F.layer_norm(x, (x.shape[-1],), g, b, eps)


def _attention(cfg: ModelConfig, p: LayerParams, x: torch.Tensor) -> torch.Tensor:
    *lead, T, d = x.shape
    H, dh = cfg.n_heads, cfg.d_head

    def heads(w):
        return (x @ w).reshape(*lead, T, H, dh).transpose(-2, -3)

    q, k, v = heads(p.w_q), heads(p.w_k), heads(p.w_v)
    if cfg.positional_scheme == "rotary":
        q, k = apply_rotary(q, cfg.d_rot), apply_rotary(k, cfg.d_rot)
    scores = (q @ k.transpose(-1, -2)) / math.sqrt(dh)
    mask = torch.ones(T, T, dtype=torch.bool).triu(1)
    scores = scores.masked_fill(mask, float("-inf"))
    out = torch.softmax(scores, dim=-1) @ v
    return out.transpose(-2, -3).reshape(*lead, T, d) @ p.w_o


def _check_finite(x: torch.Tensor, where: str, layer: int):
    if not bool(torch.isfinite(x).all()):
        bad = (~torch.isfinite(x)).any(dim=-1).nonzero()[0]
        raise NumericalOverflow(where, layer, int(bad[-1]))


def _patched(x: torch.Tensor, donor: torch.Tensor, tokens: list[int]) -> torch.Tensor:
    if not tokens:
        return x
    x = x.clone()
    x[..., tokens, :] = donor[tokens]
    return x


def _run(params: Parameters, x: torch.Tensor, record: bool, patch: PatchSpec | None,
         check_finite: bool = True):
    cfg = params.config
    eps = cfg.layernorm_epsilon
    if check_finite:
        _check_finite(x, "input embeddings", -1)
    if patch is not None and patch.source.n_tokens != x.shape[-2]:
        raise InvalidPatch(f"donor has {patch.source.n_tokens} tokens, input has {x.shape[-2]}")
    if record and x.dim() != 2:
        raise ValueError("recording requires an unbatched (T, d_model) input")
    h = x
    rec_h, rec_mha, rec_mlp = [], [], []
    for l, p in enumerate(params.layers):
        mha = _attention(cfg, p, _layer_norm(h, p.ln_attn_g, p.ln_attn_b, eps))
        if patch is not None and patch.kind == "mha":
            mha = _patched(mha, patch.source.mha[l], patch.tokens_at(l))
        h_mid = _layer_norm(h + mha, p.ln_mid_g, p.ln_mid_b, eps)
        mlp = F.gelu(h_mid @ p.w1 + p.b1) @ p.w2 + p.b2
        if patch is not None and patch.kind == "mlp":
            mlp = _patched(mlp, patch.source.mlp[l], patch.tokens_at(l))
        h = h + mha + mlp
        if patch is not None and patch.kind == "hidden":
            h = _patched(h, patch.source.hidden[l], patch.tokens_at(l))
        if check_finite:
            _check_finite(h, "hidden state", l)
        if record:
            rec_h.append(h)
            rec_mha.append(mha)
            rec_mlp.append(mlp)
    logits = _layer_norm(h, params.ln_final_g, params.ln_final_b, eps) @ params.unembed_matrix.T
    if check_finite:
        _check_finite(logits, "logits", cfg.n_layers)
    rec = None
    if record:
        rec = ActivationRecord(x.detach(), torch.stack(rec_h).detach(),
                               torch.stack(rec_mha).detach(), torch.stack(rec_mlp).detach())
    return logits, rec


def forward(params: Parameters, input_embeddings: torch.Tensor, record: bool = False,
            check_finite: bool = True) -> tuple[torch.Tensor, ActivationRecord | None]:
    """Causal forward pass over (T, d) or batched (B, T, d) embeddings.

    Returns ``(logits, record)``; ``record`` is None unless requested.
    """
    return _run(params, input_embeddings, record, None, check_finite)


def forward_patched(params: Parameters, input_embeddings: torch.Tensor, patch: PatchSpec,
                    record: bool = False) -> tuple[torch.Tensor, ActivationRecord | None]:
    """Forward pass with ``patch`` cells overwritten by the donor's states."""
    return _run(params, input_embeddings, record, patch)


def next_token_distribution(logits, position: int = -1) -> np.ndarray:
    """Stable softmax of ``logits[position]`` as a float64 numpy vector."""
    row = logits[position]
    if isinstance(row, torch.Tensor):
        row = row.detach().numpy()
    row = np.asarray(row, dtype=np.float64)
    z = np.exp(row - row.max())
    return z / z.sum()



def predict(params: Parameters, token_ids: Sequence[int]) -> int:
    """Argmax next token after ``token_ids``."""
    with torch.no_grad():
        logits, _ = forward(params, embed(params, token_ids))
    return int(torch.argmax(logits[-1]))
