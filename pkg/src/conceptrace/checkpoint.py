"""Flat binary parameter files plus the JSON sidecar written by training.

Layout: magic ``CTRC1``, a little-endian int64 header of config fields, then
every tensor as row-major little-endian float32 in declaration order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError
from .model import DTYPE, ModelConfig, Parameters, expected_shapes

MAGIC = b"CTRC1"
_SCHEMES = ("learned_absolute", "rotary")
# Order of int64 header words.
HEADER_FIELDS = ("n_layers", "n_heads", "d_model", "d_ff", "vocab_size", "max_context",
                 "positional_scheme", "d_rot", "layernorm_epsilon", "seed", "untied")


def _encode_header(config: ModelConfig, untied: bool) -> bytes:
    eps_bits = struct.unpack("<q", struct.pack("<d", config.layernorm_epsilon))[0]
    words = [config.n_layers, config.n_heads, config.d_model, config.d_ff, config.vocab_size,
             config.max_context, _SCHEMES.index(config.positional_scheme), config.d_rot,
             eps_bits, config.seed, int(untied)]
    return struct.pack(f"<{len(words)}q", *words)


def save_parameters(params: Parameters, path) -> None:
    untied = params.unembedding is not None
    chunks = [MAGIC, _encode_header(params.config, untied)]
    for t in params.tensors():
        chunks.append(np.ascontiguousarray(t.detach().numpy(), dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_parameters(path) -> Parameters:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    n = len(HEADER_FIELDS)
    off = len(MAGIC)
    try:
        words = struct.unpack_from(f"<{n}q", raw, off)
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header") from exc
    off += 8 * n
    h = dict(zip(HEADER_FIELDS, words))
    eps = struct.unpack("<d", struct.pack("<q", h["layernorm_epsilon"]))[0]
    untied = bool(h["untied"])
    config = ModelConfig(
        n_layers=h["n_layers"], n_heads=h["n_heads"], d_model=h["d_model"], d_ff=h["d_ff"],
        vocab_size=h["vocab_size"], max_context=h["max_context"],
        positional_scheme=_SCHEMES[h["positional_scheme"]], d_rot=h["d_rot"],
        layernorm_epsilon=eps, seed=h["seed"], tie_embeddings=not untied,
    )
    tensors = []
    for shape in expected_shapes(config, untied):
        count = int(np.prod(shape))
        if off + 4 * count > len(raw):
            raise CheckpointError(f"{path}: truncated tensor data")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape)
        tensors.append(torch.from_numpy(arr.astype(np.float64)).to(DTYPE))
        off += 4 * count
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return Parameters.from_tensors(config, tensors, untied=untied)


def round_to_float32(params: Parameters) -> Parameters:
    """The values a save/load round trip would produce."""
    return params.map(lambda t: t.detach().to(torch.float32).to(DTYPE))


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_sidecar(path, payload: dict) -> None:
    sidecar_path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_sidecar(path) -> dict:
    return json.loads(sidecar_path(path).read_text())
