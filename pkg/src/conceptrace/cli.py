"""Command-line front end for the tracing workflow.

Exit codes: 0 success, 1 usage, 2 I/O, 3 validation.
Options may also come from a flat ``key = value`` file given with --config;
command-line flags override the file, which overrides built-in defaults.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import checkpoint
from .data import (TEMPLATES, Vocab, corpus_vocab, dump_jsonl, get_template, load_jsonl,
                   select_prompt)
from .errors import ConceptTraceError, DegenerateTrace, KindMismatch, NotPredicted
from .model import KINDS, ModelConfig, init_parameters
from .report import build_report
from .synth import SynthSpec, synth_generate
from .trainer import TrainConfig, evaluate, split, train
from .tracer import TraceConfig, compare_traces, load_trace, save_trace, trace

log = logging.getLogger("conceptrace")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VALIDATION = 0, 1, 2, 3

DEFAULTS = {
    "out": ".",
    "seed": 0,
    "template": "often_referred",
    # synth
    "concepts": 50, "attributes": 8, "defs_per_concept": 4, "attrs_per_concept": 2, "genera": None,
    # train
    "layers": 2, "heads": 2, "d_model": 64, "d_ff": 256, "max_context": 32,
    "positional": "learned_absolute", "d_rot": 0,
    "epochs": 200, "batch_size": 16, "lr": 2e-3, "weight_decay": 0.5, "optimizer": "adam",
    "split": 0.8, "lm_loss": 0.0,
    # eval / trace
    "eval_split": "test", "kind": "all", "window": None, "noise_mult": 3.0, "noise_samples": 10,
    "samples": None,
    # report
    "k": "10,50",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _shared(p: argparse.ArgumentParser, *names: str):
    S = argparse.SUPPRESS
    if "model" in names:
        p.add_argument("--model", default=S, help="checkpoint path (.ctrc)")
    if "data" in names:
        p.add_argument("--data", default=S, help="corpus JSONL path")
    p.add_argument("--out", default=S, help="output directory")
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--template", default=S, choices=sorted(TEMPLATES))
    p.add_argument("--config", default=S, help="key=value config file")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = _Parser(prog="conceptrace", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic reverse-dictionary corpus")
    _shared(p, "data")
    p.add_argument("--concepts", type=int, default=S)
    p.add_argument("--attributes", type=int, default=S)
    p.add_argument("--defs-per-concept", type=int, default=S)
    p.add_argument("--attrs-per-concept", type=int, default=S)
    p.add_argument("--genera", type=int, default=S)

    p = sub.add_parser("train", help="train the toy model")
    _shared(p, "model", "data")
    for flag, typ in (("--layers", int), ("--heads", int), ("--d-model", int), ("--d-ff", int),
                      ("--max-context", int), ("--d-rot", int), ("--epochs", int),
                      ("--batch-size", int), ("--lr", float), ("--weight-decay", float),
                      ("--split", float), ("--lm-loss", float)):
        p.add_argument(flag, type=typ, default=S)
    p.add_argument("--positional", choices=("learned_absolute", "rotary"), default=S)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default=S)

    p = sub.add_parser("eval", help="accuracy of a checkpoint")
    _shared(p, "model", "data")
    p.add_argument("--eval-split", choices=("test", "train", "all"), default=S)

    p = sub.add_parser("trace", help="causal traces for correctly predicted samples")
    _shared(p, "model", "data")
    p.add_argument("--kind", default=S, help="hidden, mha, mlp, a comma list, or all")
    p.add_argument("--window", type=int, default=S)
    p.add_argument("--noise-mult", type=float, default=S)
    p.add_argument("--noise-samples", type=int, default=S)
    p.add_argument("--samples", default=S, help="comma-separated sample ids")
    p.add_argument("--eval-split", choices=("test", "train", "all"), default=S)

    p = sub.add_parser("report", help="summaries, aggregate traces and SVG heatmaps")
    _shared(p)
    p.add_argument("--traces", default=S, help="directory of trace files")
    p.add_argument("--k", default=S, help="comma-separated k values")

    p = sub.add_parser("compare", help="rank correlation between two traces")
    _shared(p)
    p.add_argument("trace_a")
    p.add_argument("trace_b")
    return parser


def read_config_file(path) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve_options(parser: argparse.ArgumentParser, argv) -> dict:
    ns = vars(parser.parse_args(argv))
    opts = dict(DEFAULTS)
    if "config" in ns:
        sub = parser._subparsers._group_actions[0].choices[ns["command"]]
        types = {a.dest: a.type for a in sub._actions}
        for key, raw in read_config_file(ns["config"]).items():
            if key not in types and key not in DEFAULTS:
                raise UsageError(f"unknown config key {key!r}")
            typ = types.get(key) or type(DEFAULTS.get(key) or "")
            try:
                opts[key] = typ(raw) if typ else raw
            except ValueError as exc:
                raise UsageError(f"config key {key!r}: {exc}") from exc
    opts.update(ns)
    return opts


def _require(opts: dict, key: str) -> str:
    if not opts.get(key):
        raise UsageError(f"--{key.replace('_', '-')} is required")
    return opts[key]


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _vocab_path(model_path) -> Path:
    return Path(model_path).with_suffix(".vocab")


def _load_model(opts):
    model = _require(opts, "model")
    params = checkpoint.load_parameters(model)
    vocab = Vocab.load(_vocab_path(model))
    side = checkpoint.read_sidecar(model) if checkpoint.sidecar_path(model).exists() else {}
    return params, vocab, side


def _pick_split(samples, side: dict, which: str):
    if which == "all" or "test_ids" not in side:
        return samples
    ids = set(side["test_ids"] if which == "test" else side["train_ids"])
    return [s for s in samples if s.sample_id in ids]


# --- commands -------------------------------------------------------------

def cmd_synth(opts) -> int:
    spec = SynthSpec(opts["concepts"], opts["attributes"], opts["defs_per_concept"], opts["seed"],
                     opts["attrs_per_concept"], opts["genera"])
    samples = synth_generate(spec)
    path = Path(opts.get("data") or Path(opts["out"]) / "corpus.jsonl")
    path.parent.mkdir(parents=True, exist_ok=True)
    dump_jsonl(samples, path)
    log.info("wrote %d samples to %s", len(samples), path)
    return EXIT_OK


def cmd_train(opts) -> int:
    samples = load_jsonl(_require(opts, "data"))
    if not samples:
        raise ConceptTraceError("empty corpus")
    out = Path(opts["out"])
    model_path = Path(opts.get("model") or out / "model.ctrc")
    model_path.parent.mkdir(parents=True, exist_ok=True)
    template = get_template(opts["template"])
    vocab = corpus_vocab(samples)
    config = ModelConfig(n_layers=opts["layers"], n_heads=opts["heads"], d_model=opts["d_model"],
                         d_ff=opts["d_ff"], vocab_size=len(vocab), max_context=opts["max_context"],
                         positional_scheme=opts["positional"], d_rot=opts["d_rot"],
                         seed=opts["seed"])
    tcfg = TrainConfig(learning_rate=opts["lr"], batch_size=opts["batch_size"],
                       epochs=opts["epochs"], seed=opts["seed"], optimizer=opts["optimizer"],
                       weight_decay=opts["weight_decay"], split_fraction=opts["split"],
                       lm_loss_weight=opts["lm_loss"])
    train_set, test_set = split(samples, tcfg.split_fraction, tcfg.seed)
    params, history = train(init_parameters(config), train_set, tcfg, vocab, template)
    checkpoint.save_parameters(params, model_path)
    vocab.save(_vocab_path(model_path))
    # Report accuracy of exactly what was written to disk.
    saved = checkpoint.load_parameters(model_path)
    test_acc = evaluate(saved, test_set, template, vocab).accuracy
    train_acc = evaluate(saved, train_set, template, vocab).accuracy
    checkpoint.write_sidecar(model_path, {
        "config": {**config.__dict__},
        "final_accuracy": test_acc,
        "train_accuracy": train_acc,
        "seed": opts["seed"],
        "template": template.template_id,
        "train": {k: v for k, v in tcfg.__dict__.items()},
        "train_ids": [s.sample_id for s in train_set],
        "test_ids": [s.sample_id for s in test_set],
    })
    _write_json(out / "train_metrics.json", {
        "loss_history": history, "initial_loss": history[0], "final_loss": history[-1],
        "train_accuracy": train_acc, "test_accuracy": test_acc,
    })
    log.info("trained %d steps, held-out accuracy %.3f", len(history), test_acc)
    return EXIT_OK


def cmd_eval(opts) -> int:
    params, vocab, side = _load_model(opts)
    samples = _pick_split(load_jsonl(_require(opts, "data")), side, opts["eval_split"])
    template = get_template(opts["template"])
    res = evaluate(params, samples, template, vocab)
    ranking = select_prompt(list(TEMPLATES.values()), params, vocab, samples)
    _write_json(Path(opts["out"]) / "metrics.json", {
        "accuracy": res.accuracy, "n_samples": res.n_samples, "correct_ids": res.correct_ids,
        "template": template.template_id, "split": opts["eval_split"],
        "template_ranking": [{"template_id": t, "accuracy": a} for t, a in ranking],
    })
    log.info("accuracy %.3f on %d samples", res.accuracy, res.n_samples)
    return EXIT_OK


def _kinds(spec: str) -> list[str]:
    kinds = list(KINDS) if spec == "all" else [k.strip() for k in spec.split(",") if k.strip()]
    bad = [k for k in kinds if k not in KINDS]
    if bad or not kinds:
        raise UsageError(f"invalid --kind {spec!r}")
    return kinds


def cmd_trace(opts) -> int:
    params, vocab, side = _load_model(opts)
    samples = load_jsonl(_require(opts, "data"))
    template = get_template(opts["template"])
    if opts["samples"]:
        wanted = [s.strip() for s in str(opts["samples"]).split(",") if s.strip()]
        by_id = {s.sample_id: s for s in samples}
        missing = [w for w in wanted if w not in by_id]
        if missing:
            raise UsageError(f"unknown sample ids: {', '.join(missing)}")
        chosen = [by_id[w] for w in wanted]
    else:
        chosen = _pick_split(samples, side, opts["eval_split"])
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    skipped, written = [], 0
    for kind in _kinds(opts["kind"]):
        cfg = TraceConfig(kind=kind, window=opts["window"], noise_multiplier=opts["noise_mult"],
                          n_noise_samples=opts["noise_samples"], seed=opts["seed"])
        for s in chosen:
            try:
                save_trace(trace(params, s, template, vocab, cfg), out)
                written += 1
            except (NotPredicted, DegenerateTrace) as exc:
                skipped.append({"sample_id": s.sample_id, "kind": kind,
                                "reason": type(exc).__name__, "detail": str(exc)})
    _write_json(out / "skipped.json", skipped)
    log.info("wrote %d traces, skipped %d", written, len(skipped))
    return EXIT_OK


def cmd_report(opts) -> int:
    try:
        k_values = [int(k) for k in str(opts["k"]).split(",") if k.strip()]
    except ValueError as exc:
        raise UsageError(f"invalid --k: {exc}") from exc
    if not k_values or min(k_values) < 1:
        raise UsageError("k values must be >= 1")
    out = Path(opts["out"])
    summary = build_report(opts.get("traces") or out, out, k_values)
    _write_json(out / "summary.json", summary)
    for item in summary["skipped"]:
        log.warning("skipped %s: %s", item["file"], item["reason"])
    return EXIT_OK


def _trace_json(path: str) -> Path:
    p = Path(path)
    return p.with_suffix(".json") if p.suffix == ".csv" else p


def cmd_compare(opts) -> int:
    a, b = load_trace(_trace_json(opts["trace_a"])), load_trace(_trace_json(opts["trace_b"]))
    sim = compare_traces(a, b)
    _write_json(Path(opts["out"]) / "compare.json", {
        "similarity": sim,
        "kind": a.kind,
        "shapes": [list(a.matrix.shape), list(b.matrix.shape)],
        "padding_applied": a.matrix.shape[0] != b.matrix.shape[0],
    })
    print(f"{sim:.9g}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "trace": cmd_trace,
            "report": cmd_report, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        opts = resolve_options(parser, argv)
        logging.basicConfig(level=logging.INFO if opts.get("verbose") else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return COMMANDS[opts["command"]](opts)
    except UsageError as exc:
        print(f"conceptrace: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (KindMismatch, ConceptTraceError, ValueError) as exc:
        print(f"conceptrace: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"conceptrace: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
