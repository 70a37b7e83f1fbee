"""Input checks shared by the estimator and the protocol."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .errors import InputError, ProtocolError
from .prompt_core import SOURCE_LANGUAGE, LabeledPair


def check_pairs(X, y=None, *, num_classes=None, language=SOURCE_LANGUAGE) -> tuple[list[LabeledPair], np.ndarray]:
    """Coerce ``X`` to ``LabeledPair`` objects and return them with their labels.

    Items may be ``LabeledPair`` or ``(a, b)`` / ``(a, b, language)`` tuples;
    tuples need ``y``. An explicit ``y`` overrides pair labels.
    """
    X = list(X)
    if not X:
        raise InputError("empty input")
    if y is not None:
        y = np.asarray(y).reshape(-1)
        if len(y) != len(X):
            raise InputError(f"X has {len(X)} items but y has {len(y)}")
    pairs = []
    for i, item in enumerate(X):
        if isinstance(item, LabeledPair):
            if y is not None and int(y[i]) != item.label:
                item = LabeledPair(item.sentence_a, item.sentence_b, int(y[i]), item.language)
            pairs.append(item)
            continue
        if not isinstance(item, (tuple, list)) or len(item) not in (2, 3):
            raise InputError(f"item {i} is neither a LabeledPair nor an (a, b[, language]) tuple")
        label = 0 if y is None else int(y[i])
        lang = item[2] if len(item) == 3 else language
        pairs.append(LabeledPair(item[0], item[1], label, lang))
    labels = np.array([p.label for p in pairs], dtype=np.int64)
    if num_classes is not None and labels.max() >= num_classes:
        raise InputError(f"label {labels.max()} out of range for {num_classes} classes")
    return pairs, labels


def check_source_only(pairs: Iterable[LabeledPair], source_language=SOURCE_LANGUAGE):
    """Refuse any target-language example on the training path."""
    leaked = sorted({p.language for p in pairs if p.language != source_language})
    if leaked:
        raise ProtocolError(
            f"training data must be {source_language}-only; found examples tagged {', '.join(leaked)}"
        )
