"""scikit-learn style classifier wrapping prompt-based training on a masked LM."""

from __future__ import annotations

import copy
import enum
import json
import logging
from pathlib import Path

import numpy as np
import torch
from scipy.special import softmax
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import objectives
from .backend import ToyMaskedLM, backend_from_state, checkpoint_state
from .errors import ConfigurationError, InputError
from .inference import Strategy, probability_block, strategy_scores
from .prompt_core import (
    SOURCE_LANGUAGE,
    MultilingualVerbalizer,
    PromptTemplate,
    Variant,
    build_pair_sequence,
    build_prompt,
    parse_verbalizers,
)
from .validation import check_pairs, check_source_only

log = logging.getLogger(__name__)


class Method(str, enum.Enum):
    FT = "ft"
    UP = "up"
    OURS = "ours"
    OURS_NO_MV = "ours_no_mv"
    OURS_NO_MIXUP = "ours_no_mixup"
    ZHAO_FULL = "zhao_full"
    NO_TEMPLATE_TRANSLATION = "no_template_translation"
    NO_VERBALIZER_TRANSLATION = "no_verbalizer_translation"
    NO_PROMPTING_WORDS = "no_prompting_words"

    @property
    def variant(self) -> Variant | None:
        if self is Method.FT:
            return None
        if self in (Method.UP, Method.OURS, Method.OURS_NO_MV, Method.OURS_NO_MIXUP):
            return Variant.UNIVERSAL
        return Variant(self.value)

    @property
    def multilingual(self) -> bool:
        return self in (Method.OURS, Method.OURS_NO_MIXUP)

    @property
    def mixup(self) -> bool:
        return self in (Method.OURS, Method.OURS_NO_MV)

    @property
    def pilot(self) -> bool:
        return self.variant is not None and self.variant is not Variant.UNIVERSAL


PAPER_METHODS = (Method.FT, Method.UP, Method.OURS, Method.OURS_NO_MV, Method.OURS_NO_MIXUP)


class PromptClassifier(ClassifierMixin, BaseEstimator):
    """Cross-lingual few-shot classifier over a masked-LM backend.

    ``method`` picks the objective: ``"ft"`` trains a classification head,
    ``"up"`` the English-verbalizer prompt likelihood, ``"ours"`` adds the
    multilingual verbalizer and mask-token mixup (``"ours_no_mv"`` and
    ``"ours_no_mixup"`` drop one of the two). The four template-ablation
    variants train like ``"up"`` but with their own template and inference
    verbalizer.

    Parameters
    ----------
    backend : masked-LM backend
        Deep-copied on ``fit``; the passed object is never modified.
    verbalizer : MultilingualVerbalizer
        Must contain ``"EN"``; ``languages`` optionally restricts it.
    templates : dict, optional
        ``language -> (question word, answer word)`` for variants that use
        prompting words.
    strategy : int
        Inference strategy (1-5) for the universal-template methods.
    mixup_weight : float
        Weight of the mixup term in the total loss; only used by methods
        with mixup.

    Attributes
    ----------
    backend_ : trained backend at the selected epoch
    best_epoch_ : int, epoch of the selected checkpoint (0 = before training)
    best_dev_accuracy_ : float or None
    history_ : dict with ``dev_accuracy`` per epoch and per-step loss records
    """

    def __init__(
        self,
        backend=None,
        verbalizer=None,
        templates=None,
        method="ours",
        languages=None,
        strategy=1,
        alpha=1.2,
        mixup_weight=1.0,
        overlapping_pairs=False,
        learning_rate=1e-5,
        batch_size=8,
        grad_accumulation=4,
        epochs=50,
        max_length=256,
        source_language=SOURCE_LANGUAGE,
        seed=0,
        eval_batch_size=128,
    ):
        self.backend = backend
        self.verbalizer = verbalizer
        self.templates = templates
        self.method = method
        self.languages = languages
        self.strategy = strategy
        self.alpha = alpha
        self.mixup_weight = mixup_weight
        self.overlapping_pairs = overlapping_pairs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.grad_accumulation = grad_accumulation
        self.epochs = epochs
        self.max_length = max_length
        self.source_language = source_language
        self.seed = seed
        self.eval_batch_size = eval_batch_size

    # -- setup ------------------------------------------------------------

    def _check_config(self):
        if self.backend is None:
            raise ConfigurationError("a backend is required")
        try:
            method = Method(self.method)
            Strategy(self.strategy)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        if self.verbalizer is None and method is not Method.FT:
            raise ConfigurationError(f"method {method.value} needs a verbalizer")
        if self.batch_size < 1 or self.grad_accumulation < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size and grad_accumulation must be >= 1, epochs >= 0")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        return method

    def _setup(self):
        method = self._check_config()
        self.method_ = method
        self.backend_ = copy.deepcopy(self.backend)
        if method is Method.FT:
            self.classes_ = np.arange(self.backend_.num_classes)
            self.verbalizer_ = self.verbalizer
            return
        mv = self.verbalizer
        if self.languages:
            mv = mv.restrict(self.languages)
        # fail before any training step
        mv.validate(self.backend_.is_single_token)
        self.verbalizer_ = mv
        self.classes_ = np.arange(mv.num_labels)
        train_langs = list(mv.languages) if method.multilingual else [self.source_language]
        self.train_languages_ = train_langs
        self.token_ids_ = torch.as_tensor(mv.token_ids(train_langs, self.backend_.token_to_id))
        self.template_ = PromptTemplate(method.variant, self.templates or {}, self.source_language)
        self.template_.words_for(self.source_language)

    def _sentence_budget(self):
        limit = self.max_length
        max_seq = getattr(self.backend_, "max_sequence_length", None)
        if max_seq is not None:
            limit = min(limit, max_seq)
        return limit - self.backend_.num_added_tokens

    def _encode(self, pairs):
        budget = self._sentence_budget()
        if self.method_ is Method.FT:
            return [build_pair_sequence(p, budget) for p in pairs]
        return [build_prompt(p, self.template_, p.language, budget) for p in pairs]

    def _micro_loss(self, inputs, labels, lam_rng):
        if self.method_ is Method.FT:
            logits = self.backend_.classify_logits(inputs)
            loss = objectives.finetune_loss(logits, labels)
            return objectives.LossBreakdown(loss, loss.new_zeros(()), 0.0)
        reprs = self.backend_.encode_mask(inputs)
        weight = self.mixup_weight if self.method_.mixup else 0.0
        return objectives.prompt_batch_loss(
            reprs,
            labels,
            self.token_ids_,
            self.backend_.mlm_logits,
            mixup_weight=weight,
            alpha=self.alpha,
            rng=lam_rng if weight else None,
            overlapping=self.overlapping_pairs,
        )

    # -- training ---------------------------------------------------------

    def fit(self, X, y=None, eval_set=None):
        """Train on source-language pairs; select the epoch by ``eval_set`` accuracy.

        ``eval_set`` is ``(X_dev, y_dev)`` or a list of pairs. Without it the
        final epoch is kept. Dev accuracy is also measured before training
        (epoch 0), and ties keep the earliest epoch.
        """
        self._setup()
        pairs, labels = check_pairs(X, y, num_classes=len(self.classes_))
        check_source_only(pairs, self.source_language)
        dev = None
        if eval_set is not None:
            dev_X, dev_y = eval_set if isinstance(eval_set, tuple) else (eval_set, None)
            dev = check_pairs(dev_X, dev_y, num_classes=len(self.classes_))
            check_source_only(dev[0], self.source_language)

        inputs = self._encode(pairs)
        labels_t = torch.as_tensor(labels)
        shuffle_gen = torch.Generator().manual_seed(int(self.seed))
        lam_rng = np.random.default_rng([int(self.seed), 1])
        model = self.backend_
        opt = torch.optim.Adam(model.parameters(), lr=self.learning_rate)
        n = len(pairs)
        chunks = [(s, min(s + self.batch_size, n)) for s in range(0, n, self.batch_size)]
        groups = [chunks[i : i + self.grad_accumulation] for i in range(0, len(chunks), self.grad_accumulation)]

        self.history_ = {"dev_accuracy": [], "steps": []}
        best_state, self.best_epoch_, self.best_dev_accuracy_ = None, 0, None

        def checkpoint(epoch):
            nonlocal best_state
            if dev is None:
                return
            model.eval()
            acc = float(np.mean(self._predict_pairs(dev[0]) == dev[1]))
            self.history_["dev_accuracy"].append(acc)
            if self.best_dev_accuracy_ is None or acc > self.best_dev_accuracy_:
                self.best_dev_accuracy_, self.best_epoch_ = acc, epoch
                best_state = copy.deepcopy(model.state_dict())

        checkpoint(0)
        step = 0
        for epoch in range(1, self.epochs + 1):
            model.train()
            order = torch.randperm(n, generator=shuffle_gen).tolist()
            for group in groups:
                opt.zero_grad()
                for start, stop in group:
                    idx = order[start:stop]
                    parts = self._micro_loss([inputs[i] for i in idx], labels_t[idx], lam_rng)
                    (parts.total / len(group)).backward()
                    record = parts.record(step)
                    record["epoch"] = epoch
                    self.history_["steps"].append(record)
                    log.debug(json.dumps(record))
                    step += 1
                opt.step()
            checkpoint(epoch)
        if best_state is not None:
            model.load_state_dict(best_state)
        else:
            self.best_epoch_ = self.epochs
        model.eval()
        return self

    # -- inference --------------------------------------------------------

    def _inference_strategy(self, language):
        if self.method_.pilot:
            if self.method_.variant.uses_target_verbalizer:
                return Strategy.TARGET_VERBALIZER
            return Strategy.EN_VERBALIZER
        return Strategy(self.strategy)

    @torch.no_grad()
    def _raw_outputs(self, pairs):
        """Full logits per example: vocabulary logits, or class logits for FT."""
        inputs = self._encode(pairs)
        out = []
        for start in range(0, len(inputs), self.eval_batch_size):
            chunk = inputs[start : start + self.eval_batch_size]
            if self.method_ is Method.FT:
                out.append(self.backend_.classify_logits(chunk))
            else:
                out.append(self.backend_.mlm_logits(self.backend_.encode_mask(chunk)))
        return torch.cat(out).double().numpy()

    def _scores(self, pairs, strategy=None):
        raw = self._raw_outputs(pairs)
        if self.method_ is Method.FT:
            return softmax(raw, axis=-1)
        block = probability_block(softmax(raw, axis=-1), self.verbalizer_, self.backend_.token_to_id)
        langs = np.array([p.language for p in pairs])
        scores = np.zeros((len(pairs), len(self.classes_)))
        for lang in np.unique(langs):
            rows = np.flatnonzero(langs == lang)
            sub = {k: v[rows] for k, v in block.items()}
            s = strategy if strategy is not None else self._inference_strategy(lang)
            scores[rows] = strategy_scores(sub, s, str(lang))
        return scores

    def _predict_pairs(self, pairs, strategy=None):
        return np.argmax(self._scores(pairs, strategy), axis=1)

    def decision_function(self, X, strategy=None):
        """Per-label strategy scores (probability masses, not renormalized)."""
        check_is_fitted(self, "backend_")
        pairs, _ = check_pairs(X)
        return self._scores(pairs, strategy)

    def predict_proba(self, X, strategy=None):
        scores = self.decision_function(X, strategy)
        return scores / scores.sum(axis=1, keepdims=True)

    def predict(self, X, strategy=None):
        return self.classes_[np.argmax(self.decision_function(X, strategy), axis=1)]

    def mask_logits(self, X) -> np.ndarray:
        """``(N, V)`` vocabulary logits at the mask slot."""
        check_is_fitted(self, "backend_")
        if self.method_ is Method.FT:
            raise InputError("the finetuning baseline has no mask-slot logits")
        pairs, _ = check_pairs(X)
        return self._raw_outputs(pairs)

    def label_block(self, X) -> dict:
        """Restricted probability block ``{language: (N, C)}`` for strategy comparison."""
        logits = self.mask_logits(X)
        return probability_block(softmax(logits, axis=-1), self.verbalizer_, self.backend_.token_to_id)


_FITTED = ("method_", "classes_", "best_epoch_", "best_dev_accuracy_", "history_")


def save_classifier(clf: PromptClassifier, path) -> Path:
    """Persist a fitted classifier with a toy backend."""
    check_is_fitted(clf, "backend_")
    if not isinstance(clf.backend_, ToyMaskedLM):
        raise InputError("only classifiers over the toy backend can be saved")
    params = {k: v for k, v in clf.get_params().items() if k not in ("backend", "verbalizer")}
    params["templates"] = {k: list(v) for k, v in (params["templates"] or {}).items()}
    blob = {
        "params": json.dumps(params),
        "verbalizer": json.dumps(clf.verbalizer.to_dict()) if clf.verbalizer is not None else "",
        "fitted": json.dumps({k: _jsonable(getattr(clf, k)) for k in _FITTED}),
        "backend": checkpoint_state(clf.backend_),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(blob, path)
    return path


def _jsonable(value):
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


def load_classifier(path) -> PromptClassifier:
    from .errors import BackendUnavailableError

    path = Path(path)
    if not path.is_file():
        raise BackendUnavailableError(f"classifier checkpoint not found: {path}")
    blob = torch.load(path, map_location="cpu", weights_only=True)
    backend = backend_from_state(blob["backend"])
    params = json.loads(blob["params"])
    params["templates"] = {k: tuple(v) for k, v in (params["templates"] or {}).items()}
    mv = parse_verbalizers(json.loads(blob["verbalizer"])) if blob["verbalizer"] else None
    clf = PromptClassifier(backend=backend, verbalizer=mv, **params)
    clf._setup()
    clf.backend_ = backend
    fitted = json.loads(blob["fitted"])
    clf.classes_ = np.asarray(fitted["classes_"])
    clf.best_epoch_ = fitted["best_epoch_"]
    clf.best_dev_accuracy_ = fitted["best_dev_accuracy_"]
    clf.history_ = fitted["history_"]
    return clf
