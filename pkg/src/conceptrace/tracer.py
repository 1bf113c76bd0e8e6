"""Causal tracing by restoring clean states into noise-corrupted runs.

For every (token t, layer l) cell the states of one kind at token t over the
layer window around l are copied from the clean run into each corrupted run;
the recovered probability of the definiendum is normalised to [0, 1] between
the corrupted (0) and clean (1) probabilities.
"""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from scipy.stats import rankdata

from .analytics import pad_rows
from .data import PromptTemplate, ReverseDictionarySample, Vocab, apply_prompt
from .errors import (DegenerateTrace, InvalidCorruptionTarget, KindMismatch, NotPredicted,
                     UndefinedCorrelation, ZeroVarianceEmbeddings)
from .model import (KINDS, ActivationRecord, Parameters, PatchSpec, embed, forward,
                    forward_patched, next_token_distribution)
from .overlay import OverlayMap, build_overlay

DEGENERACY_THRESHOLD = 1e-6
DEFAULT_WINDOWS = {"hidden": 1, "mha": 10, "mlp": 10}


@dataclass(frozen=True)
class TraceConfig:
    kind: str = "hidden"
    window: int | None = None
    noise_multiplier: float = 3.0
    n_noise_samples: int = 10
    # None corrupts every definiens token.
    corruption_positions: tuple[int, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.window is None:
            object.__setattr__(self, "window", DEFAULT_WINDOWS[self.kind])
        if self.corruption_positions is not None:
            object.__setattr__(self, "corruption_positions",
                               tuple(sorted({int(p) for p in self.corruption_positions})))
        if self.window < 1 or self.n_noise_samples < 1 or self.noise_multiplier < 0:
            raise ValueError("need window >= 1, n_noise_samples >= 1, noise_multiplier >= 0")

    def to_json(self) -> dict:
        out = asdict(self)
        if out["corruption_positions"] is not None:
            out["corruption_positions"] = list(out["corruption_positions"])
        return out


@dataclass(frozen=True)
class ScoreTriple:
    p_clean: float
    p_corrupted: float
    p_restored: float


@dataclass(frozen=True)
class TokenInfo:
    surface: str
    corrupted: bool

    @property
    def label(self) -> str:
        return self.surface + "*" if self.corrupted else self.surface


@dataclass(frozen=True)
class TraceResult:
    sample_id: str
    kind: str
    matrix: np.ndarray
    raw: np.ndarray
    p_clean: float
    p_corrupted: float
    config: TraceConfig
    tokens: tuple[TokenInfo, ...]
    overlay: OverlayMap | None = None
    n_definiens: int = 0
    definiendum: str = ""

    @property
    def n_tokens(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_layers(self) -> int:
        return self.matrix.shape[1]


# --- primitives -----------------------------------------------------------

def embedding_std(params: Parameters) -> float:
    """Population standard deviation over every entry of the token embedding matrix."""
    e = params.token_embedding.detach().numpy()
    if e.size == 0:
        raise ValueError("empty embedding matrix")
    sigma = float(np.std(e))
    if sigma == 0.0:
        raise ZeroVarianceEmbeddings("token embeddings have zero variance")
    return sigma


def corrupt(embeddings: torch.Tensor, positions: Sequence[int], multiplier: float, sigma: float,
            seed, n_definiens: int | None = None) -> torch.Tensor:
    """Add N(0, (multiplier*sigma)^2) noise to the rows in ``positions``."""
    positions = sorted({int(p) for p in positions})
    limit = embeddings.shape[-2] if n_definiens is None else n_definiens
    for p in positions:
        if not 0 <= p < limit:
            raise InvalidCorruptionTarget(f"position {p} outside definiens [0, {limit})")
    if not positions:
        return embeddings.clone()
    rng = np.random.default_rng(seed)
    alpha = rng.normal(0.0, multiplier * sigma, size=(len(positions), embeddings.shape[-1]))
    out = embeddings.clone()
    out[positions] = out[positions] + torch.from_numpy(alpha).to(out.dtype)
    return out


def window_layers(layer: int, window: int, n_layers: int) -> range:
    """Contiguous window of ``window`` layers around ``layer``, clipped to [0, L)."""
    if not 0 <= layer < n_layers:
        raise ValueError(f"layer {layer} outside [0, {n_layers})")
    lo = max(0, layer - window // 2)
    hi = min(n_layers - 1, layer + (window + 1) // 2 - 1)
    return range(lo, hi + 1)


def normalize_score(triple: ScoreTriple) -> float:
    gap = triple.p_clean - triple.p_corrupted
    if not gap > DEGENERACY_THRESHOLD:
        raise DegenerateTrace(triple.p_clean, triple.p_corrupted)
    return min(1.0, max(0.0, (triple.p_restored - triple.p_corrupted) / gap))


# --- tracing --------------------------------------------------------------

class TraceRun:
    """Clean run plus the S corrupted inputs for one sample; restores arbitrary cell sets."""

    def __init__(self, params: Parameters, token_ids: Sequence[int], target: int,
                 n_definiens: int, config: TraceConfig):
        self.params = params
        self.config = config
        self.target = target
        self.token_ids = list(token_ids)
        x = embed(params, token_ids)
        with torch.no_grad():
            logits, self.clean = forward(params, x, record=True)
        dist = next_token_distribution(logits, -1)
        self.predicted = int(np.argmax(dist))
        self.p_clean = float(dist[target])
        positions = (range(n_definiens) if config.corruption_positions is None
                     else config.corruption_positions)
        self.positions = sorted(positions)
        sigma = embedding_std(params)
        self.corrupted_inputs = [
            corrupt(x, self.positions, config.noise_multiplier, sigma, (config.seed, s), n_definiens)
            for s in range(config.n_noise_samples)
        ]
        self.p_corrupted = self._mean_prob(None)

    def _mean_prob(self, patch: PatchSpec | None) -> float:
        probs = []
        with torch.no_grad():
            for xc in self.corrupted_inputs:
                if patch is None:
                    logits, _ = forward(self.params, xc)
                else:
                    logits, _ = forward_patched(self.params, xc, patch)
                probs.append(next_token_distribution(logits, -1)[self.target])
        # Averaging offsets from p_clean keeps a full restoration exactly at p_clean.
        return self.p_clean + float(np.mean(np.asarray(probs) - self.p_clean))

    def restored_probability(self, cells, kind: str | None = None) -> float:
        return self._mean_prob(PatchSpec(kind or self.config.kind, cells, self.clean))

    def score(self, p_restored: float) -> float:
        return normalize_score(ScoreTriple(self.p_clean, self.p_corrupted, p_restored))


def prepare(params: Parameters, sample: ReverseDictionarySample, template: PromptTemplate,
            vocab: Vocab, config: TraceConfig) -> TraceRun:
    ids, boundary = apply_prompt(sample, template, vocab)
    run = TraceRun(params, ids, vocab.token_id(sample.definiendum), boundary, config)
    if run.predicted != run.target:
        raise NotPredicted(f"sample {sample.sample_id!r}: model predicts "
                           f"{vocab.surfaces[run.predicted]!r}, expected {sample.definiendum!r}")
    if not run.p_clean - run.p_corrupted > DEGENERACY_THRESHOLD:
        raise DegenerateTrace(run.p_clean, run.p_corrupted)
    return run


def trace(params: Parameters, sample: ReverseDictionarySample, template: PromptTemplate,
          vocab: Vocab, config: TraceConfig) -> TraceResult:
    """Full token x layer restoration sweep for one correctly predicted sample."""
    run = prepare(params, sample, template, vocab, config)
    T, L = len(run.token_ids), params.config.n_layers
    raw = np.zeros((T, L))
    norm = np.zeros((T, L))
    for t in range(T):
        for l in range(L):
            cells = [(t, j) for j in window_layers(l, config.window, L)]
            raw[t, l] = run.restored_probability(cells)
            norm[t, l] = run.score(raw[t, l])
    corrupted = set(run.positions)
    surfaces = [vocab.surfaces[i] for i in run.token_ids]
    tokens = tuple(TokenInfo(s, i in corrupted) for i, s in enumerate(surfaces))
    return TraceResult(sample.sample_id, config.kind, norm, raw, run.p_clean, run.p_corrupted,
                       config, tokens, build_overlay(sample, T, surfaces),
                       sample.n_definiens, sample.definiendum)


def full_restoration_score(params: Parameters, sample: ReverseDictionarySample,
                           template: PromptTemplate, vocab: Vocab, config: TraceConfig,
                           layer: int = 0) -> float:
    """Validation mode: restore the hidden state of every token at ``layer`` at once."""
    run = prepare(params, sample, template, vocab, config)
    cells = [(t, layer) for t in range(len(run.token_ids))]
    return run.score(run.restored_probability(cells, kind="hidden"))


def compare_traces(a: TraceResult, b: TraceResult) -> float:
    """Spearman rank correlation of two same-kind traces, shorter one zero-padded."""
    if a.kind != b.kind:
        raise KindMismatch(f"cannot compare {a.kind} with {b.kind}")
    ma, mb = np.asarray(a.matrix, float), np.asarray(b.matrix, float)
    if ma.shape[1] != mb.shape[1]:
        raise ValueError(f"layer counts differ: {ma.shape[1]} vs {mb.shape[1]}")
    rows = max(ma.shape[0], mb.shape[0])
    ra = rankdata(pad_rows(ma, rows).ravel())
    rb = rankdata(pad_rows(mb, rows).ravel())
    ra, rb = ra - ra.mean(), rb - rb.mean()
    denom = np.sqrt((ra @ ra) * (rb @ rb))
    if denom == 0:
        raise UndefinedCorrelation("rank correlation undefined for a constant trace")
    return float(np.clip((ra @ rb) / denom, -1.0, 1.0))


# --- files ----------------------------------------------------------------

def trace_stem(sample_id: str, kind: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", sample_id) + f".{kind}"


def format_matrix(m: np.ndarray) -> str:
    return "".join(",".join(f"{v:.9g}" for v in row) + "\n" for row in m)


def parse_matrix(text: str) -> np.ndarray:
    rows = [[float(v) for v in line.split(",")] for line in text.splitlines() if line.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError("ragged or empty matrix")
    return np.array(rows, dtype=np.float64)


def trace_metadata(result: TraceResult) -> dict:
    overlay = result.overlay.to_json() if result.overlay is not None else []
    tokens = []
    for i, tok in enumerate(result.tokens):
        entry = {"surface": tok.surface, "corrupted": tok.corrupted}
        if overlay:
            entry.update(segment=overlay[i]["segment"], dsr=overlay[i]["dsr"])
        tokens.append(entry)
    return {
        "sample_id": result.sample_id,
        "kind": result.kind,
        "p_clean": result.p_clean,
        "p_corrupted": result.p_corrupted,
        "config": result.config.to_json(),
        "tokens": tokens,
        "n_definiens": result.n_definiens,
        "n_layers": result.n_layers,
        "definiendum": result.definiendum,
        "definiendum_pos": result.overlay.definiendum_pos if result.overlay else None,
        "p_restored": result.raw.tolist(),
    }


def save_trace(result: TraceResult, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = trace_stem(result.sample_id, result.kind)
    csv_path, json_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.json"
    csv_path.write_text(format_matrix(result.matrix))
    json_path.write_text(json.dumps(trace_metadata(result), indent=1, sort_keys=True) + "\n")
    return csv_path, json_path


def load_trace(json_path) -> TraceResult:
    """Read a trace file pair given its JSON metadata path."""
    json_path = Path(json_path)
    meta = json.loads(json_path.read_text())
    matrix = parse_matrix(json_path.with_suffix(".csv").read_text())
    cfg = dict(meta["config"])
    if cfg.get("corruption_positions") is not None:
        cfg["corruption_positions"] = tuple(cfg["corruption_positions"])
    tokens = tuple(TokenInfo(t["surface"], bool(t["corrupted"])) for t in meta["tokens"])
    if len(tokens) != matrix.shape[0]:
        raise ValueError(f"{json_path}: {len(tokens)} tokens but {matrix.shape[0]} matrix rows")
    overlay = None
    if tokens and "segment" in meta["tokens"][0]:
        overlay = OverlayMap(tuple(t["segment"] for t in meta["tokens"]),
                             tuple(t["dsr"] for t in meta["tokens"]),
                             meta.get("definiendum_pos"), tuple(t.surface for t in tokens))
    raw = np.array(meta.get("p_restored") or np.zeros_like(matrix), dtype=np.float64)
    return TraceResult(meta["sample_id"], meta["kind"], matrix, raw, float(meta["p_clean"]),
                       float(meta["p_corrupted"]), TraceConfig(**cfg), tokens, overlay,
                       int(meta.get("n_definiens", 0)), meta.get("definiendum", ""))
