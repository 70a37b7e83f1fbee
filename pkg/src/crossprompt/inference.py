"""Mapping mask-slot vocabulary probabilities to labels.

Five strategies over ``p = softmax(logits)`` (full vocabulary):

1. English verbalizer           score(y) = p[V_EN(y)]
2. target-language verbalizer   score(y) = p[V_tgt(y)]
3. max over all languages       score(y) = max_l p[V_l(y)]
4. sum over all languages       score(y) = sum_l p[V_l(y)]
5. bilingual                    score(y) = p[V_EN(y)] + p[V_tgt(y)]

Ties go to the lowest label index.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import softmax

from .errors import ConfigurationError, InputError
from .prompt_core import SOURCE_LANGUAGE, MultilingualVerbalizer


class Strategy(enum.IntEnum):
    EN_VERBALIZER = 1
    TARGET_VERBALIZER = 2
    MAX_MULTI = 3
    SUM_MULTI = 4
    BILINGUAL = 5


ALL_STRATEGIES = tuple(Strategy)


@dataclass(frozen=True)
class LabelScores:
    scores: np.ndarray
    label: int
    strategy: Strategy
    target_language: str


def probability_block(probs: np.ndarray, mv: MultilingualVerbalizer, token_to_id: Callable[[str], int]):
    """Restrict ``(N, V)`` probabilities to label tokens: ``{language: (N, C)}``."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    return {
        lang: probs[:, [token_to_id(tok) for tok in mv[lang].tokens]] for lang in mv.languages
    }


def strategy_scores(block: Mapping[str, np.ndarray], strategy, target_language: str) -> np.ndarray:
    """``(N, C)`` label scores for one strategy from a restricted block."""
    strategy = Strategy(strategy)
    if SOURCE_LANGUAGE not in block:
        raise ConfigurationError("the English verbalizer is required for every strategy")
    needs_target = strategy in (Strategy.TARGET_VERBALIZER, Strategy.BILINGUAL)
    if needs_target and target_language not in block:
        raise ConfigurationError(
            f"strategy {int(strategy)} needs a verbalizer for target language {target_language!r}"
        )
    en = np.atleast_2d(block[SOURCE_LANGUAGE])
    if strategy is Strategy.EN_VERBALIZER:
        return en
    if strategy is Strategy.TARGET_VERBALIZER:
        return np.atleast_2d(block[target_language])
    if strategy is Strategy.BILINGUAL:
        return en + np.atleast_2d(block[target_language])
    stacked = np.stack([np.atleast_2d(b) for b in block.values()])
    return stacked.max(axis=0) if strategy is Strategy.MAX_MULTI else stacked.sum(axis=0)


def argmax_lowest(scores: np.ndarray) -> np.ndarray:
    # np.argmax already returns the first maximal index
    return np.argmax(np.atleast_2d(scores), axis=-1)


def predict(logits, strategy, mv: MultilingualVerbalizer, target_language: str, token_to_id) -> LabelScores:
    """Label prediction for a single logit vector."""
    probs = softmax(np.asarray(logits, dtype=np.float64))
    block = probability_block(probs, mv, token_to_id)
    scores = strategy_scores(block, strategy, target_language)[0]
    return LabelScores(scores, int(argmax_lowest(scores)[0]), Strategy(strategy), target_language)


def predict_all(block: Mapping[str, np.ndarray], target_languages: Sequence[str] | str) -> np.ndarray:
    """``(5, N)`` predictions of every strategy from one shared probability block."""
    n = len(next(iter(block.values())))
    if isinstance(target_languages, str):
        target_languages = [target_languages] * n
    targets = np.asarray(target_languages)
    out = np.zeros((len(ALL_STRATEGIES), n), dtype=np.int64)
    for lang in np.unique(targets):
        rows = np.flatnonzero(targets == lang)
        sub = {k: np.atleast_2d(v)[rows] for k, v in block.items()}
        for s in ALL_STRATEGIES:
            out[s - 1, rows] = argmax_lowest(strategy_scores(sub, s, str(lang)))
    return out


@dataclass
class StrategyComparison:
    agreement: np.ndarray  # (5, 5) fraction of records on which two strategies agree
    accuracy: np.ndarray  # (5,)
    predictions: np.ndarray  # (5, N)

    def format(self) -> str:
        head = "strategy\taccuracy\t" + "\t".join(f"agree_{int(s)}" for s in ALL_STRATEGIES)
        rows = [head]
        for s in ALL_STRATEGIES:
            agree = "\t".join(f"{x:.4f}" for x in self.agreement[s - 1])
            rows.append(f"{int(s)}\t{self.accuracy[s - 1]:.4f}\t{agree}")
        return "\n".join(rows) + "\n"


def compare_strategies(block, labels, target_languages) -> StrategyComparison:
    labels = np.asarray(labels)
    preds = predict_all(block, target_languages)
    if len(labels) != preds.shape[1] or len(labels) == 0:
        raise InputError("logit dump and gold labels disagree in length or are empty")
    agreement = (preds[:, None, :] == preds[None, :, :]).mean(axis=-1)
    accuracy = (preds == labels[None, :]).mean(axis=-1)
    return StrategyComparison(agreement, accuracy, preds)


# -- logit dumps --------------------------------------------------------------


def write_logit_dump(path, labels, languages, *, logits=None, block=None, vocabulary=None):
    """Write a dump in ``full`` form (logits + vocabulary) or ``restricted`` form (block)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if (logits is None) == (block is None):
        raise InputError("give exactly one of logits or block")
    with path.open("w", encoding="utf-8") as f:
        if logits is not None:
            f.write(json.dumps({"kind": "full", "vocabulary": list(vocabulary)}, ensure_ascii=False) + "\n")
            for lab, lang, row in zip(labels, languages, np.asarray(logits)):
                f.write(json.dumps({"label": int(lab), "language": lang, "logits": row.tolist()}) + "\n")
        else:
            f.write(json.dumps({"kind": "restricted"}) + "\n")
            for i, (lab, lang) in enumerate(zip(labels, languages)):
                probs = {k: np.atleast_2d(v)[i].tolist() for k, v in block.items()}
                f.write(json.dumps({"label": int(lab), "language": lang, "probs": probs}) + "\n")
    return path


def read_logit_dump(path, mv: MultilingualVerbalizer, restricted: bool | None = None):
    """Read a dump into ``(block, labels, languages)``.

    ``restricted`` asserts the expected dump kind when not ``None``.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"logit dump not found: {path}")
    try:
        with path.open(encoding="utf-8") as f:
            header = json.loads(f.readline())
            records = [json.loads(line) for line in f if line.strip()]
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed logit dump {path}: {exc}") from None
    kind = header.get("kind")
    if kind not in ("full", "restricted"):
        raise InputError(f"malformed logit dump {path}: unknown kind {kind!r}")
    if restricted is not None and (kind == "restricted") != restricted:
        raise InputError(f"{path} is a {kind} dump")
    if not records:
        raise InputError(f"logit dump {path} has no records")
    try:
        labels = np.array([r["label"] for r in records])
        languages = [r["language"] for r in records]
        if kind == "full":
            index = {tok: i for i, tok in enumerate(header["vocabulary"])}

            def lookup(tok):
                try:
                    return index[tok]
                except KeyError:
                    raise ConfigurationError(f"verbalizer token {tok!r} missing from dump vocabulary") from None

            logits = np.array([r["logits"] for r in records], dtype=np.float64)
            block = probability_block(softmax(logits, axis=-1), mv, lookup)
        else:
            block = {
                lang: np.array([r["probs"][lang] for r in records], dtype=np.float64) for lang in mv.languages
            }
    except (KeyError, ValueError) as exc:
        raise InputError(f"malformed logit dump {path}: {exc}") from None
    return block, labels, languages
