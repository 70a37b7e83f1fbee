"""Prompt templates, prompt construction and verbalizer registries."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .errors import ConfigurationError, InputError, VerbalizerValidationError

MASK = "<mask>"
SEP = "</s>"
PERIOD = "."
QUESTION_MARK = "?"
COLON = ":"
SOURCE_LANGUAGE = "EN"


def as_tokens(value) -> tuple[str, ...]:
    """Whitespace-split strings; pass token sequences through as tuples."""
    if isinstance(value, str):
        return tuple(value.split())
    return tuple(value)


@dataclass(frozen=True)
class LabeledPair:
    sentence_a: tuple[str, ...]
    sentence_b: tuple[str, ...]
    label: int
    language: str = SOURCE_LANGUAGE

    def __post_init__(self):
        object.__setattr__(self, "sentence_a", as_tokens(self.sentence_a))
        object.__setattr__(self, "sentence_b", as_tokens(self.sentence_b))
        if not self.sentence_a or not self.sentence_b:
            raise InputError("sentence_a and sentence_b must be non-empty")
        if int(self.label) < 0:
            raise InputError(f"label must be non-negative, got {self.label}")
        object.__setattr__(self, "label", int(self.label))

    def to_record(self) -> dict:
        return {
            "sentence_a": " ".join(self.sentence_a),
            "sentence_b": " ".join(self.sentence_b),
            "label": self.label,
            "language": self.language,
        }

    @classmethod
    def from_record(cls, record: Mapping) -> "LabeledPair":
        try:
            return cls(record["sentence_a"], record["sentence_b"], record["label"], record["language"])
        except KeyError as exc:
            raise InputError(f"dataset record missing field {exc}") from None


class Variant(str, enum.Enum):
    """The five prompt/verbalizer design variants for cross-lingual prompting."""

    ZHAO_FULL = "zhao_full"
    NO_TEMPLATE_TRANSLATION = "no_template_translation"
    NO_VERBALIZER_TRANSLATION = "no_verbalizer_translation"
    NO_PROMPTING_WORDS = "no_prompting_words"
    UNIVERSAL = "universal"

    @property
    def uses_prompting_words(self) -> bool:
        return self not in (Variant.UNIVERSAL, Variant.NO_PROMPTING_WORDS)

    @property
    def uses_target_verbalizer(self) -> bool:
        return self not in (Variant.UNIVERSAL, Variant.NO_VERBALIZER_TRANSLATION)


@dataclass(frozen=True)
class PromptTemplate:
    variant: Variant
    # language -> (question word, answer word)
    prompting_words: Mapping[str, tuple[str, str]] = field(default_factory=dict)
    source_language: str = SOURCE_LANGUAGE
    period: str = PERIOD
    question_mark: str = QUESTION_MARK

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        words = {lang: tuple(pw) for lang, pw in dict(self.prompting_words).items()}
        if not self.variant.uses_prompting_words:
            words = {}
        object.__setattr__(self, "prompting_words", words)

    def words_for(self, apply_language: str) -> tuple[str, str] | None:
        if not self.variant.uses_prompting_words:
            return None
        lang = apply_language
        if self.variant is Variant.NO_TEMPLATE_TRANSLATION:
            lang = self.source_language
        try:
            return self.prompting_words[lang]
        except KeyError:
            raise ConfigurationError(
                f"variant {self.variant.value} needs prompting words for language {lang!r}"
            ) from None


@dataclass(frozen=True)
class PromptedExample:
    tokens: tuple[str, ...]
    mask_position: int
    label: int
    language: str

    def __post_init__(self):
        if self.tokens.count(MASK) != 1 or self.tokens[self.mask_position] != MASK:
            raise InputError("a prompted example needs exactly one mask token at mask_position")


def _truncate_pair(a: Sequence[str], b: Sequence[str], budget: int) -> tuple[list[str], list[str]]:
    # longest-first, dropping tokens from the end; ties trim A
    a, b = list(a), list(b)
    if budget < 2:
        raise InputError(f"max_length leaves room for {budget} sentence tokens; need at least 2")
    while len(a) + len(b) > budget:
        if len(a) >= len(b):
            a.pop()
        else:
            b.pop()
    return a, b


def build_prompt(
    pair: LabeledPair,
    template: PromptTemplate,
    apply_language: str | None = None,
    max_length: int | None = None,
) -> PromptedExample:
    """Fill a sentence pair into ``template`` for ``apply_language``.

    Without prompting words the layout is ``A . B ? <mask> .``; with them it is
    ``A . Q : B ? Ans : <mask> .``. Only sentence tokens are truncated to fit
    ``max_length``.
    """
    lang = apply_language or pair.language
    words = template.words_for(lang)
    scaffold = 4 + (4 if words else 0)
    a, b = pair.sentence_a, pair.sentence_b
    if max_length is not None:
        a, b = _truncate_pair(a, b, max_length - scaffold)
    tokens = [*a, template.period]
    if words:
        tokens += [words[0], COLON]
    tokens += [*b, template.question_mark]
    if words:
        tokens += [words[1], COLON]
    mask_position = len(tokens)
    tokens += [MASK, template.period]
    return PromptedExample(tuple(tokens), mask_position, pair.label, pair.language)


def build_pair_sequence(pair: LabeledPair, max_length: int | None = None) -> tuple[str, ...]:
    """Plain ``A </s> B`` encoding used by the finetuning baseline."""
    a, b = pair.sentence_a, pair.sentence_b
    if max_length is not None:
        a, b = _truncate_pair(a, b, max_length - 1)
    return (*a, SEP, *b)


def render(tokens: Iterable[str]) -> str:
    """Human-readable prompt text; colons attach to the preceding word."""
    out: list[str] = []
    for tok in tokens:
        if tok == COLON and out:
            out[-1] += COLON
        else:
            out.append(tok)
    return " ".join(out)


@dataclass(frozen=True)
class Verbalizer:
    language: str
    tokens: tuple[str, ...]  # indexed by label

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))

    def __getitem__(self, label: int) -> str:
        return self.tokens[label]

    def __len__(self):
        return len(self.tokens)


class MultilingualVerbalizer:
    """Per-language label -> token maps sharing one label set."""

    def __init__(self, labels: Sequence[str], verbalizers: Mapping[str, Verbalizer] | Iterable[Verbalizer]):
        self.labels = tuple(labels)
        if isinstance(verbalizers, Mapping):
            verbalizers = verbalizers.values()
        self.verbalizers = {v.language: v for v in verbalizers}
        problems = []
        if SOURCE_LANGUAGE not in self.verbalizers:
            problems.append(f"missing source language {SOURCE_LANGUAGE}")
        for lang, verb in self.verbalizers.items():
            if len(verb) != len(self.labels):
                problems.append(f"{lang}: maps {len(verb)} labels, expected {len(self.labels)}")
            seen: dict[str, int] = {}
            for label, tok in enumerate(verb.tokens):
                if not tok or any(ch.isspace() for ch in tok):
                    problems.append(f"{lang}: token {tok!r} for {self._name(label)} is not a single token")
                if tok in seen:
                    problems.append(
                        f"{lang}: token {tok!r} used for both {self._name(seen[tok])} and {self._name(label)}"
                    )
                seen.setdefault(tok, label)
        if problems:
            raise VerbalizerValidationError("invalid multilingual verbalizer", problems)

    def _name(self, label):
        return self.labels[label] if label < len(self.labels) else str(label)

    @property
    def languages(self) -> tuple[str, ...]:
        return tuple(self.verbalizers)

    @property
    def num_labels(self) -> int:
        return len(self.labels)

    def __contains__(self, language) -> bool:
        return language in self.verbalizers

    def __getitem__(self, language) -> Verbalizer:
        try:
            return self.verbalizers[language]
        except KeyError:
            raise ConfigurationError(f"no verbalizer for language {language!r}") from None

    def restrict(self, languages: Iterable[str]) -> "MultilingualVerbalizer":
        languages = list(languages)
        if SOURCE_LANGUAGE not in languages:
            languages.insert(0, SOURCE_LANGUAGE)
        return MultilingualVerbalizer(self.labels, [self[lang] for lang in languages])

    def validate(self, is_single_token: Callable[[str], bool]) -> None:
        """Check every token is exactly one token of a backend vocabulary."""
        problems = [
            f"{lang}: {tok!r} ({self.labels[label]})"
            for lang, verb in self.verbalizers.items()
            for label, tok in enumerate(verb.tokens)
            if not is_single_token(tok)
        ]
        if problems:
            raise VerbalizerValidationError("verbalizer tokens are not single vocabulary tokens", problems)

    def token_ids(self, languages: Sequence[str], token_to_id: Callable[[str], int]) -> list[list[int]]:
        """(|languages|, C) nested list of vocabulary ids."""
        if not languages:
            raise InputError("language set must be non-empty")
        return [[token_to_id(tok) for tok in self[lang].tokens] for lang in languages]

    def to_dict(self, task: str | None = None) -> dict:
        out = {"labels": list(self.labels)}
        if task:
            out = {"task": task, **out}
        out["verbalizers"] = [
            {"language": lang, "tokens": dict(zip(self.labels, verb.tokens))}
            for lang, verb in self.verbalizers.items()
        ]
        return out

    def __eq__(self, other):
        if not isinstance(other, MultilingualVerbalizer):
            return NotImplemented
        return self.labels == other.labels and self.verbalizers == other.verbalizers

    def __repr__(self):
        return f"MultilingualVerbalizer(labels={self.labels}, languages={self.languages})"


def parse_verbalizers(data: Mapping) -> MultilingualVerbalizer:
    try:
        labels = list(data["labels"])
        records = data["verbalizers"]
    except (KeyError, TypeError):
        raise VerbalizerValidationError("verbalizer file needs 'labels' and 'verbalizers'") from None
    problems = []
    verbalizers = []
    for rec in records:
        lang = rec.get("language")
        mapping = rec.get("tokens", {})
        unknown = sorted(set(mapping) - set(labels))
        missing = [lab for lab in labels if lab not in mapping]
        problems += [f"{lang}: unknown label {name!r}" for name in unknown]
        problems += [f"{lang}: no token for label {name!r}" for name in missing]
        if not unknown and not missing:
            verbalizers.append(Verbalizer(lang, tuple(mapping[lab] for lab in labels)))
    if problems:
        raise VerbalizerValidationError("invalid verbalizer file", problems)
    return MultilingualVerbalizer(labels, verbalizers)


def load_verbalizer_file(path, backend=None) -> MultilingualVerbalizer:
    """Load and validate a verbalizer file.

    The file is JSON with a ``labels`` list and one ``verbalizers`` record per
    language. When ``backend`` is given every token is also checked to be a
    single token of its vocabulary.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InputError(f"verbalizer file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"verbalizer file {path} does not parse: {exc}") from None
    mv = parse_verbalizers(data)
    if backend is not None:
        mv.validate(backend.is_single_token)
    return mv


def bundled_path(kind: str, name: str) -> Path:
    return Path(str(resources.files("crossprompt") / "data" / kind / f"{name}.json"))


def load_bundled_verbalizer(name: str, backend=None) -> MultilingualVerbalizer:
    """``name`` is ``"xnli"`` or ``"pawsx"``."""
    return load_verbalizer_file(bundled_path("verbalizers", name), backend)


def load_template_words(path) -> dict[str, tuple[str, str]]:
    """Prompting-word file: ``{"EN": ["Question", "Answer"], ...}``."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InputError(f"template file not found: {path}") from None
    words = {}
    for lang, pw in data.items():
        if len(pw) != 2:
            raise ConfigurationError(f"{lang}: prompting words must be a (question, answer) pair")
        words[lang] = (pw[0], pw[1])
    return words


def load_bundled_templates(name: str = "xnli") -> dict[str, tuple[str, str]]:
    return load_template_words(bundled_path("templates", name))


def inference_verbalizer_for(variant, target_language: str, mv: MultilingualVerbalizer) -> Verbalizer:
    """Verbalizer a variant reads predictions from in ``target_language``."""
    variant = Variant(variant)
    if variant.uses_target_verbalizer:
        return mv[target_language]
    return mv[SOURCE_LANGUAGE]
