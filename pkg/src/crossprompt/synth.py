"""Desk-scale multilingual sentence-pair tasks.

The source task lives on an English content vocabulary ``w0..wN``. Labels
come from an exact rule on the pair (A, B):

* 0 -- B is a (possibly gapped) subsequence of A
* 1 -- B shares no token with A
* 2 -- anything else

Pseudo-languages map every content token through a bijection onto a
language-specific block (tokens kept with probability ``overlap``), so labels
are preserved and transfer is measurable without real corpora.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import GenerationError, InputError
from .prompt_core import (
    COLON,
    MASK,
    PERIOD,
    QUESTION_MARK,
    SEP,
    SOURCE_LANGUAGE,
    LabeledPair,
    MultilingualVerbalizer,
    Verbalizer,
)

SPECIALS = ("<pad>", "<s>", "<unk>", MASK, SEP, PERIOD, QUESTION_MARK, COLON)
LABEL_NAMES = {2: ("entailment", "non-entailment"), 3: ("entailment", "contradiction", "neutral")}
ANSWER_WORDS = ("yes", "no", "maybe")


@dataclass
class SynthTaskSpec:
    num_classes: int = 3
    vocab_size: int = 300
    pseudo_languages: int = 4
    overlap: float = 0.0
    a_length: tuple[int, int] = (4, 6)
    b_length: tuple[int, int] = (2, 3)
    n_train: int = 1200
    n_dev: int = 600
    n_test: int = 600
    corpus_size: int = 2000
    cloze_fraction: float = 1.0
    balanced: bool = True
    seed: int = 0

    def __post_init__(self):
        self.a_length = tuple(self.a_length)
        self.b_length = tuple(self.b_length)
        if self.num_classes not in LABEL_NAMES:
            raise InputError(f"num_classes must be 2 or 3, got {self.num_classes}")
        if not 0.0 <= self.overlap <= 1.0:
            raise InputError(f"overlap must be in [0, 1], got {self.overlap}")
        if self.b_length[0] < 2 or self.b_length[1] >= self.a_length[0]:
            raise InputError("need 2 <= len(B) < len(A) so every class is constructible")

    @property
    def language_codes(self) -> tuple[str, ...]:
        return (SOURCE_LANGUAGE,) + tuple(f"L{i}" for i in range(1, self.pseudo_languages + 1))


def gold_label(a: Sequence[str], b: Sequence[str], num_classes: int = 3) -> int:
    """Exact rule label of a pair."""
    it = iter(a)
    if all(tok in it for tok in b):
        return 0
    if num_classes == 2:
        return 1
    return 1 if not set(a) & set(b) else 2


def prompting_words(code: str) -> tuple[str, str]:
    if code == SOURCE_LANGUAGE:
        return ("Question", "Answer")
    return (f"Question_{code}", f"Answer_{code}")


def answer_words(num_classes: int) -> tuple[str, ...]:
    return ANSWER_WORDS[:num_classes]


def synth_verbalizers(languages: Iterable[str], num_classes: int = 3) -> MultilingualVerbalizer:
    """One reserved token per (language, class); English uses the plain words."""
    words = answer_words(num_classes)
    verbs = []
    for code in languages:
        toks = words if code == SOURCE_LANGUAGE else tuple(f"{w}_{code}" for w in words)
        verbs.append(Verbalizer(code, toks))
    return MultilingualVerbalizer(LABEL_NAMES[num_classes], verbs)


def synth_templates(languages: Iterable[str]) -> dict[str, tuple[str, str]]:
    return {code: prompting_words(code) for code in languages}


def _reserved_tokens(spec: SynthTaskSpec) -> list[str]:
    toks = list(SPECIALS)
    verbs = synth_verbalizers(spec.language_codes, spec.num_classes)
    for code in spec.language_codes:
        toks += list(prompting_words(code))
        toks += list(verbs[code].tokens)
    return toks


def _content_size(spec: SynthTaskSpec) -> int:
    free = spec.vocab_size - len(_reserved_tokens(spec))
    per_lang = 1 + spec.pseudo_languages * (1 - spec.overlap)
    n = int(free // per_lang)
    while n > 0 and n + spec.pseudo_languages * (n - round(spec.overlap * n)) > free:
        n -= 1
    if n < spec.a_length[1] + spec.b_length[1]:
        raise GenerationError(
            f"vocab_size {spec.vocab_size} leaves {max(n, 0)} content tokens per language; "
            f"disjoint pairs need at least {spec.a_length[1] + spec.b_length[1]}"
        )
    return n


def base_tokens(spec: SynthTaskSpec) -> list[str]:
    return [f"w{i}" for i in range(_content_size(spec))]


def _own_tokens(code: str, count: int) -> list[str]:
    return [f"{code.lower()}_{i}" for i in range(count)]


def build_vocabulary(spec: SynthTaskSpec) -> list[str]:
    """Exactly ``spec.vocab_size`` tokens: reserved block, content blocks, filler."""
    n = _content_size(spec)
    toks = _reserved_tokens(spec) + base_tokens(spec)
    own = n - round(spec.overlap * n)
    for code in spec.language_codes[1:]:
        toks += _own_tokens(code, own)
    toks += [f"<unused_{i}>" for i in range(spec.vocab_size - len(toks))]
    return toks


@dataclass
class PseudoLanguage:
    code: str
    mapping: dict[str, str]
    overlap: float = 0.0

    def __post_init__(self):
        if len(set(self.mapping.values())) != len(self.mapping):
            raise InputError(f"{self.code}: token map is not a bijection")

    def inverse(self) -> "PseudoLanguage":
        return PseudoLanguage(SOURCE_LANGUAGE, {v: k for k, v in self.mapping.items()}, self.overlap)

    def map_tokens(self, tokens: Sequence[str]) -> tuple[str, ...]:
        try:
            return tuple(self.mapping[t] for t in tokens)
        except KeyError as exc:
            raise InputError(f"token {exc.args[0]!r} is outside the {self.code} permutation domain") from None


def make_pseudo_language(code: str, base: Sequence[str], overlap: float, rng: np.random.Generator) -> PseudoLanguage:
    n = len(base)
    n_shared = round(overlap * n)
    order = rng.permutation(n)
    shared = {base[i] for i in order[:n_shared]}
    rest = [base[i] for i in sorted(order[n_shared:])]
    targets = _own_tokens(code, n - n_shared)
    targets = [targets[i] for i in rng.permutation(len(targets))]
    mapping = {tok: tok for tok in base if tok in shared}
    mapping.update(zip(rest, targets))
    return PseudoLanguage(code, {tok: mapping[tok] for tok in base}, overlap)


def identity_language(base: Sequence[str]) -> PseudoLanguage:
    return PseudoLanguage(SOURCE_LANGUAGE, {t: t for t in base}, 1.0)


def pseudo_languages(spec: SynthTaskSpec) -> list[PseudoLanguage]:
    """EN identity followed by ``spec.pseudo_languages`` derived languages."""
    base = base_tokens(spec)
    rng = np.random.default_rng([spec.seed, 1])
    return [identity_language(base)] + [
        make_pseudo_language(code, base, spec.overlap, rng) for code in spec.language_codes[1:]
    ]


def _sample_pair(label, content, spec, rng, num_classes):
    la = int(rng.integers(spec.a_length[0], spec.a_length[1] + 1))
    lb = int(rng.integers(spec.b_length[0], spec.b_length[1] + 1))
    a_idx = rng.choice(len(content), la, replace=False)
    a = [content[i] for i in a_idx]
    others = [t for t in content if t not in set(a)]
    if label == 0:
        b = [a[i] for i in sorted(rng.choice(la, lb, replace=False))]
    elif label == 1 and num_classes == 3:
        b = [others[i] for i in rng.choice(len(others), lb, replace=False)]
    else:
        # some overlap with A, at least one foreign token
        shared = int(rng.integers(1, lb)) if num_classes == 3 else int(rng.integers(0, lb))
        b = [a[i] for i in rng.choice(la, shared, replace=False)]
        b += [others[i] for i in rng.choice(len(others), lb - shared, replace=False)]
        b = [b[i] for i in rng.permutation(lb)]
    return tuple(a), tuple(b)


def _labels(n, num_classes, balanced, rng):
    if balanced:
        labels = np.arange(n) % num_classes
        return labels[rng.permutation(n)]
    return rng.integers(0, num_classes, n)


@dataclass
class TaskPools:
    train: list[LabeledPair]
    dev: list[LabeledPair]
    test: list[LabeledPair]


def generate_task(spec: SynthTaskSpec) -> TaskPools:
    """Disjoint, seed-deterministic EN train/dev/test pools."""
    content = base_tokens(spec)
    rng = np.random.default_rng([spec.seed, 0])
    seen: set = set()
    pools = []
    for n in (spec.n_train, spec.n_dev, spec.n_test):
        pool = []
        for label in _labels(n, spec.num_classes, spec.balanced, rng):
            for _ in range(1000):
                a, b = _sample_pair(int(label), content, spec, rng, spec.num_classes)
                if (a, b) not in seen:
                    break
            else:
                raise GenerationError("could not draw enough distinct pairs; enlarge the vocabulary")
            seen.add((a, b))
            if gold_label(a, b, spec.num_classes) != label:
                raise GenerationError(f"generated pair {a}/{b} does not carry label {label}")
            pool.append(LabeledPair(a, b, int(label), SOURCE_LANGUAGE))
        pools.append(pool)
    return TaskPools(*pools)


def derive_language(dataset: Iterable[LabeledPair], pseudo: PseudoLanguage) -> list[LabeledPair]:
    return [
        LabeledPair(pseudo.map_tokens(p.sentence_a), pseudo.map_tokens(p.sentence_b), p.label, pseudo.code)
        for p in dataset
    ]


@dataclass
class Corpus:
    lines: list[tuple[str, ...]]
    languages: list[str]
    groups: list[int | None] | None = None
    # answer-slot index of statement lines, None for plain lines
    focus: list[int | None] | None = None

    def __len__(self):
        return len(self.lines)


def generate_pretrain_corpus(
    spec: SynthTaskSpec,
    languages: Sequence[PseudoLanguage],
    parallel: bool = True,
    n_base: int | None = None,
    cloze_fraction: float | None = None,
) -> Corpus:
    """Unlabeled lines in every language.

    A line is either ``A </s> B`` or, with probability ``cloze_fraction``,
    the statement ``A . B ? ans .`` whose answer word (in the line's
    language) follows the pair's relation. With ``parallel`` each base line
    appears once per language and plain lines of one base share a group id.
    Statement lines get group ``None`` so they are never packed next to a
    translation, where the answer word could simply be copied, and record
    their answer slot in ``focus``. Without ``parallel`` each language draws
    its own lines.
    """
    n_base = spec.corpus_size if n_base is None else n_base
    cloze_fraction = spec.cloze_fraction if cloze_fraction is None else cloze_fraction
    content = base_tokens(spec)
    verbs = synth_verbalizers([lang.code for lang in languages], spec.num_classes)

    def draw(rng):
        label = int(rng.integers(0, spec.num_classes))
        a, b = _sample_pair(label, content, spec, rng, spec.num_classes)
        cloze = bool(rng.random() < cloze_fraction)
        return a, b, label, cloze

    def render_line(base, lang):
        a, b, label, cloze = base
        a, b = lang.map_tokens(a), lang.map_tokens(b)
        if cloze:
            return (*a, PERIOD, *b, QUESTION_MARK, verbs[lang.code][label], PERIOD)
        return (*a, SEP, *b)

    def answer_slot(base):
        return len(base[0]) + len(base[1]) + 2 if base[3] else None

    lines, langs, groups, focus, grouped = [], [], [], [], False
    if parallel:
        rng = np.random.default_rng([spec.seed, 2])
        for g in range(n_base):
            base = draw(rng)
            for lang in languages:
                lines.append(render_line(base, lang))
                langs.append(lang.code)
                groups.append(None if base[3] else g)
                focus.append(answer_slot(base))
        return Corpus(lines, langs, groups, focus)
    for k, lang in enumerate(languages):
        rng = np.random.default_rng([spec.seed, 3, k])
        for _ in range(n_base):
            base = draw(rng)
            lines.append(render_line(base, lang))
            langs.append(lang.code)
            focus.append(answer_slot(base))
    return Corpus(lines, langs, None, focus)


@dataclass
class SyntheticSuite:
    """Everything a desk-scale experiment needs, generated from one spec."""

    spec: SynthTaskSpec
    vocabulary: list[str]
    languages: list[PseudoLanguage]
    pools: TaskPools
    test_sets: dict[str, list[LabeledPair]]
    verbalizer: MultilingualVerbalizer
    templates: dict[str, tuple[str, str]]
    corpus: Corpus = field(repr=False)


def generate_suite(spec: SynthTaskSpec, parallel: bool = True) -> SyntheticSuite:
    langs = pseudo_languages(spec)
    pools = generate_task(spec)
    return SyntheticSuite(
        spec=spec,
        vocabulary=build_vocabulary(spec),
        languages=langs,
        pools=pools,
        test_sets={lang.code: derive_language(pools.test, lang) for lang in langs},
        verbalizer=synth_verbalizers(spec.language_codes, spec.num_classes),
        templates=synth_templates(spec.language_codes),
        corpus=generate_pretrain_corpus(spec, langs, parallel=parallel),
    )


# -- files ------------------------------------------------------------------


def write_dataset(pairs: Iterable[LabeledPair], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for p in pairs:
            f.write(json.dumps(p.to_record(), ensure_ascii=False) + "\n")
    return path


def read_dataset(path) -> list[LabeledPair]:
    """Line-delimited records with sentence_a, sentence_b, label, language."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"dataset not found: {path}")
    out = []
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(LabeledPair.from_record(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    return out


def write_suite(suite: SyntheticSuite, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(suite.pools.train, out / "train.jsonl")
    write_dataset(suite.pools.dev, out / "dev.jsonl")
    for code, pairs in suite.test_sets.items():
        write_dataset(pairs, out / f"test.{code}.jsonl")
    (out / "verbalizers.json").write_text(
        json.dumps(suite.verbalizer.to_dict("synthetic"), ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    (out / "templates.json").write_text(json.dumps(suite.templates, indent=2) + "\n", encoding="utf-8")
    (out / "vocab.json").write_text(json.dumps(suite.vocabulary) + "\n", encoding="utf-8")
    with (out / "corpus.jsonl").open("w", encoding="utf-8") as f:
        groups = suite.corpus.groups or [None] * len(suite.corpus)
        focus = suite.corpus.focus or [None] * len(suite.corpus)
        for line, lang, g, pos in zip(suite.corpus.lines, suite.corpus.languages, groups, focus):
            rec = {"tokens": " ".join(line), "language": lang, "focus": pos}
            if suite.corpus.groups is not None:
                rec["group"] = g
            f.write(json.dumps(rec) + "\n")
    spec = asdict(suite.spec)
    (out / "task.json").write_text(json.dumps(spec, indent=2) + "\n", encoding="utf-8")
    return out


def read_corpus(path) -> Corpus:
    lines, langs, groups, focus, grouped = [], [], [], [], False
    with Path(path).open(encoding="utf-8") as f:
        for line in f:
            if line.strip():
                rec = json.loads(line)
                lines.append(tuple(rec["tokens"].split()))
                langs.append(rec["language"])
                groups.append(rec.get("group"))
                grouped = grouped or "group" in rec
                focus.append(rec.get("focus"))
    return Corpus(
        lines,
        langs,
        groups if grouped else None,
        focus if any(p is not None for p in focus) else None,
    )
