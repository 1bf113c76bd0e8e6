"""Causal tracing of definition-to-word prediction in a small decoder-only transformer."""
from .data import PromptTemplate, ReverseDictionarySample, Vocab, apply_prompt, build_vocab, load_jsonl
from .model import ModelConfig, Parameters, embed, forward, forward_patched, init_parameters
from .tracer import TraceConfig, TraceResult, compare_traces, trace

__version__ = "0.1.0"
