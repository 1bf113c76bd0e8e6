"""Reverse-dictionary samples with their vocabulary and prompt handling."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import InvalidToken, ParseError, ValidationError

DSR_LABELS: tuple[str, ...] = (
    "supertype",
    "differentia_quality",
    "differentia_event",
    "event_time",
    "event_location",
    "quality_modifier",
    "origin_location",
    "purpose",
    "associated_fact",
    "accessory_determiner",
    "accessory_quality",
    "role_particle",
)
PROMPT_LABEL = "prompt"
UNLABELED = "unlabeled"
POS_TAGS = ("noun", "verb", "adjective", "adverb", "other")

MAX_DEFINITION_WORDS = 25
_ALPHA = re.compile(r"^[^\W\d_]+$")


class Vocab:
    """Word-level whitespace vocabulary with dense ids in first-occurrence order."""

    def __init__(self, surfaces: Sequence[str]):
        self.surfaces: tuple[str, ...] = tuple(surfaces)
        self.ids: dict[str, int] = {}
        for i, s in enumerate(self.surfaces):
            if s in self.ids:
                raise ValueError(f"duplicate vocab surface {s!r}")
            if not s or any(c.isspace() for c in s):
                raise ValueError(f"invalid vocab surface {s!r}")
            self.ids[s] = i

    def __len__(self) -> int:
        return len(self.surfaces)

    def __contains__(self, word: str) -> bool:
        return word in self.ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.surfaces == other.surfaces

    def token_id(self, word: str) -> int:
        try:
            return self.ids[word]
        except KeyError:
            raise InvalidToken(f"out-of-vocabulary word {word!r}") from None

    def encode(self, text: str) -> list[int]:
        return [self.token_id(w) for w in text.split()]

    def decode(self, ids: Iterable[int]) -> str:
        try:
            return " ".join(self.surfaces[i] for i in ids)
        except IndexError:
            raise InvalidToken("token id outside vocabulary") from None

    def segment(self, word: str) -> list[int] | None:
        """Greedy longest-prefix split of ``word`` into vocab items, None if impossible."""
        out, i = [], 0
        while i < len(word):
            for j in range(len(word), i, -1):
                if word[i:j] in self.ids:
                    out.append(self.ids[word[i:j]])
                    i = j
                    break
            else:
                return None
        return out

    def save(self, path) -> None:
        Path(path).write_text("".join(s + "\n" for s in self.surfaces), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def build_vocab(corpus: Sequence[str]) -> Vocab:
    if not corpus:
        raise ValueError("corpus must be nonempty")
    seen: dict[str, None] = {}
    for line in corpus:
        for w in line.split():
            seen.setdefault(w, None)
    return Vocab(list(seen))


@dataclass(frozen=True)
class DsrSpan:
    label: str
    start: int
    end: int


@dataclass(frozen=True)
class ReverseDictionarySample:
    sample_id: str
    language: str
    definition: str
    definiendum: str
    dsr_spans: tuple[DsrSpan, ...] = ()
    pos: str | None = None

    @property
    def definiens_words(self) -> list[str]:
        return self.definition.split()

    @property
    def n_definiens(self) -> int:
        return len(self.definiens_words)

    def validate(self) -> "ReverseDictionarySample":
        n = self.n_definiens
        if n < 1:
            raise ValidationError(self.sample_id, "empty definition")
        if not self.definiendum or len(self.definiendum.split()) != 1:
            raise ValidationError(self.sample_id, f"definiendum {self.definiendum!r} is not a single token")
        if self.pos is not None and self.pos not in POS_TAGS:
            raise ValidationError(self.sample_id, f"unknown POS {self.pos!r}")
        spans = sorted(self.dsr_spans, key=lambda s: (s.start, s.end))
        for s in spans:
            if s.label not in DSR_LABELS:
                raise ValidationError(self.sample_id, f"unknown DSR label {s.label!r}")
            if not 0 <= s.start < s.end <= n:
                raise ValidationError(self.sample_id, f"span ({s.start}, {s.end}) outside [0, {n})")
        for a, b in zip(spans, spans[1:]):
            if b.start < a.end:
                raise ValidationError(self.sample_id, f"overlapping spans {a} and {b}")
        return self

    def to_json(self) -> dict:
        out = {"id": self.sample_id, "lang": self.language, "definition": self.definition,
               "definiendum": self.definiendum}
        if self.pos is not None:
            out["pos"] = self.pos
        if self.dsr_spans:
            out["dsr"] = [{"label": s.label, "start": s.start, "end": s.end} for s in self.dsr_spans]
        return out


@dataclass(frozen=True)
class FilterResult:
    accepted: bool
    reason: str | None = None


def filter_sample(raw: dict, vocab: Vocab) -> FilterResult:
    """Admission check for one raw record; the first failing rule names the reason."""
    definition = raw["definition"]
    definiendum = raw["definiendum"]
    if len(definition.split()) > MAX_DEFINITION_WORDS:
        return FilterResult(False, "too_long")
    if not _ALPHA.match(definiendum):
        return FilterResult(False, "non_alphabetic")
    pieces = [vocab.token_id(definiendum)] if definiendum in vocab else vocab.segment(definiendum)
    if pieces is None or len(pieces) != 1:
        return FilterResult(False, "multi_token")
    return FilterResult(True)


def _require(obj: dict, key: str, typ, line: int, optional: bool = False):
    if key not in obj:
        if optional:
            return None
        raise ParseError(line, f"missing field {key!r}")
    val = obj[key]
    if not isinstance(val, typ) or isinstance(val, bool):
        raise ParseError(line, f"field {key!r} has wrong type {type(val).__name__}")
    return val


def parse_sample(obj, line: int = 1) -> ReverseDictionarySample:
    if not isinstance(obj, dict):
        raise ParseError(line, "expected a JSON object")
    spans = []
    for span in _require(obj, "dsr", list, line, optional=True) or []:
        if not isinstance(span, dict):
            raise ParseError(line, "dsr entries must be objects")
        spans.append(DsrSpan(_require(span, "label", str, line), _require(span, "start", int, line),
                             _require(span, "end", int, line)))
    sample = ReverseDictionarySample(
        sample_id=_require(obj, "id", str, line),
        language=_require(obj, "lang", str, line),
        definition=_require(obj, "definition", str, line),
        definiendum=_require(obj, "definiendum", str, line),
        dsr_spans=tuple(spans),
        pos=_require(obj, "pos", str, line, optional=True),
    )
    return sample.validate()


def load_jsonl(path) -> list[ReverseDictionarySample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, 1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON: {exc.msg}") from exc
            samples.append(parse_sample(obj, lineno))
    return samples


def dump_jsonl(samples: Iterable[ReverseDictionarySample], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json(), ensure_ascii=False) + "\n")


# --- prompt templates -----------------------------------------------------

PLACEHOLDER = "{definition}"


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    text: str

    def __post_init__(self):
        if self.text.count(PLACEHOLDER) != 1:
            raise ValueError(f"template {self.template_id!r} needs exactly one {PLACEHOLDER}")
        # Completion-style only: the definiens must come first so the prompt is a suffix.
        if not self.text.startswith(PLACEHOLDER):
            raise ValueError(f"template {self.template_id!r} must start with {PLACEHOLDER}")

    @property
    def suffix_words(self) -> list[str]:
        return self.text[len(PLACEHOLDER):].split()


TEMPLATES: dict[str, PromptTemplate] = {
    t.template_id: t
    for t in (
        PromptTemplate("often_referred", "{definition} is often referred to as:"),
        PromptTemplate("commonly_known", "{definition} is commonly known as"),
        PromptTemplate("definition_of", "{definition} is the definition of"),
    )
}
DEFAULT_TEMPLATE = "often_referred"


def get_template(template_id: str) -> PromptTemplate:
    try:
        return TEMPLATES[template_id]
    except KeyError:
        raise ValueError(f"unknown template {template_id!r}; known: {sorted(TEMPLATES)}") from None


def apply_prompt(sample: ReverseDictionarySample, template: PromptTemplate,
                 vocab: Vocab) -> tuple[list[int], int]:
    """Token ids of definiens followed by the template suffix, and the boundary index."""
    definiens = vocab.encode(sample.definition)
    suffix = [vocab.token_id(w) for w in template.suffix_words]
    return definiens + suffix, len(definiens)


def corpus_vocab(samples: Sequence[ReverseDictionarySample],
                 templates: Iterable[PromptTemplate] = TEMPLATES.values()) -> Vocab:
    """Vocabulary covering the corpus text plus every template suffix."""
    texts = [s.definition for s in samples] + [s.definiendum for s in samples]
    texts += [" ".join(t.suffix_words) for t in templates]
    return build_vocab(texts)


def select_prompt(templates: Sequence[PromptTemplate], params, vocab: Vocab,
                  samples: Sequence[ReverseDictionarySample]) -> list[tuple[str, float]]:
    """Rank templates by next-token accuracy on ``samples``; ties keep input order."""
    from .model import predict

    if not templates:
        raise ValueError("need at least one template")
    scored = []
    for t in templates:
        hits = 0
        for s in samples:
            ids, _ = apply_prompt(s, t, vocab)
            hits += predict(params, ids) == vocab.token_id(s.definiendum)
        scored.append((t.template_id, hits / len(samples) if samples else 0.0))
    return sorted(scored, key=lambda x: -x[1])
