"""Training losses: multilingual-verbalizer likelihood, mask-token mixup, finetuning.

Label tokens are passed as an integer table ``token_ids`` of shape
``(n_languages, n_classes)`` holding vocabulary ids, as produced by
``MultilingualVerbalizer.token_ids``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InputError


def _as_table(token_ids) -> torch.Tensor:
    table = torch.as_tensor(token_ids, dtype=torch.long)
    if table.ndim != 2 or table.shape[0] == 0:
        raise InputError("language set must be non-empty")
    return table


def label_token_log_probs(logits: torch.Tensor, labels, token_ids) -> torch.Tensor:
    """``log P(mask = V_l(y))`` for every example and language, shape ``(B, L)``."""
    table = _as_table(token_ids)
    logits = torch.atleast_2d(logits)
    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    if labels.numel() and (labels.min() < 0 or labels.max() >= table.shape[1]):
        raise InputError(f"label out of range [0, {table.shape[1]})")
    logp = F.log_softmax(logits, dim=-1)
    return logp.gather(1, table[:, labels].T)


def multilingual_verbalizer_loss(logits, labels, token_ids, reduction="mean") -> torch.Tensor:
    """Negative log-likelihood of the gold label's token, averaged over languages.

    With a single-row table holding the English tokens this is the plain
    prompting objective.
    """
    per_example = -label_token_log_probs(logits, labels, token_ids).mean(dim=1)
    return _reduce(per_example, reduction)


def _reduce(values, reduction):
    if reduction == "none":
        return values
    if reduction == "sum":
        return values.sum()
    return values.mean() if values.numel() else values.sum()


def sample_lambda(alpha: float, rng: np.random.Generator, size=None):
    """Mixing weight from a symmetric Beta(alpha, alpha)."""
    if not alpha > 0:
        raise InputError(f"alpha must be positive, got {alpha}")
    return rng.beta(alpha, alpha, size)


def mixup_representations(m_i: torch.Tensor, m_j: torch.Tensor, lam) -> torch.Tensor:
    if m_i.shape != m_j.shape:
        raise InputError(f"cannot interpolate shapes {tuple(m_i.shape)} and {tuple(m_j.shape)}")
    lam = torch.as_tensor(lam, dtype=m_i.dtype)
    if lam.numel() and (lam.min() < 0 or lam.max() > 1):
        raise InputError("lambda must lie in [0, 1]")
    if lam.ndim == 1 and m_i.ndim == 2:
        lam = lam[:, None]
    return lam * m_i + (1 - lam) * m_j


@dataclass
class MixupVirtualExample:
    representation: torch.Tensor
    label_i: int
    label_j: int
    lam: float

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise InputError(f"lambda must lie in [0, 1], got {self.lam}")


def mixup_loss_from_logits(logits, labels_i, labels_j, lams, token_ids, reduction="mean"):
    """Interpolated-label loss given head outputs of the mixed representations."""
    lams = torch.as_tensor(lams, dtype=logits.dtype).reshape(-1)
    lp_i = label_token_log_probs(logits, labels_i, token_ids).mean(dim=1)
    lp_j = label_token_log_probs(logits, labels_j, token_ids).mean(dim=1)
    return _reduce(-(lams * lp_i + (1 - lams) * lp_j), reduction)


def mixup_loss(virtual, token_ids, mlm_head: Callable, reduction="mean"):
    """Loss of one or more virtual examples; the head sees the mixed vector as-is."""
    if isinstance(virtual, MixupVirtualExample):
        virtual = [virtual]
    if not virtual:
        return torch.zeros(())
    reprs = torch.stack([v.representation for v in virtual])
    logits = mlm_head(reprs)
    return mixup_loss_from_logits(
        logits,
        [v.label_i for v in virtual],
        [v.label_j for v in virtual],
        [v.lam for v in virtual],
        token_ids,
        reduction,
    )


def pair_indices(batch_size: int, overlapping: bool = False) -> list[tuple[int, int]]:
    """Adjacent pairs: disjoint ``(0,1),(2,3),...`` or overlapping ``(i,i+1)``."""
    if overlapping:
        return [(i, i + 1) for i in range(batch_size - 1)]
    return [(i, i + 1) for i in range(0, batch_size - 1, 2)]


def pair_batch(reprs, labels, alpha: float, rng: np.random.Generator, overlapping=False) -> list[MixupVirtualExample]:
    """Mix adjacent examples of a batch, one fresh lambda per pair.

    ``reprs`` is a ``(B, d)`` tensor (or sequence of vectors) in training
    order. An odd trailing example is left unpaired.
    """
    pairs = pair_indices(len(labels), overlapping)
    if not pairs:
        return []
    lams = sample_lambda(alpha, rng, len(pairs))
    return [
        MixupVirtualExample(
            mixup_representations(reprs[i], reprs[j], float(lam)), int(labels[i]), int(labels[j]), float(lam)
        )
        for (i, j), lam in zip(pairs, lams)
    ]


def finetune_loss(class_logits, labels, reduction="mean") -> torch.Tensor:
    class_logits = torch.atleast_2d(class_logits)
    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    if labels.numel() and (labels.min() < 0 or labels.max() >= class_logits.shape[-1]):
        raise InputError(f"label out of range [0, {class_logits.shape[-1]})")
    return F.cross_entropy(class_logits, labels, reduction=reduction)


@dataclass
class LossBreakdown:
    real_loss: torch.Tensor
    mixup_loss: torch.Tensor
    mixup_weight: float = 1.0
    lambdas: Sequence[float] = field(default_factory=list)

    @property
    def total(self) -> torch.Tensor:
        return self.real_loss + self.mixup_weight * self.mixup_loss

    def record(self, step: int) -> dict:
        return {
            "step": step,
            "real_loss": self.real_loss.item(),
            "mixup_loss": self.mixup_loss.item(),
            "total": self.total.item(),
            "lambdas": [float(x) for x in self.lambdas],
        }


def prompt_batch_loss(
    reprs: torch.Tensor,
    labels,
    token_ids,
    mlm_head: Callable,
    *,
    mixup_weight: float = 0.0,
    alpha: float = 1.2,
    rng: np.random.Generator | None = None,
    overlapping: bool = False,
) -> LossBreakdown:
    """Mean real-example loss plus weighted mean mixup loss over one micro-batch."""
    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    real = multilingual_verbalizer_loss(mlm_head(reprs), labels, token_ids)
    zero = real.new_zeros(())
    if mixup_weight == 0 or rng is None:
        return LossBreakdown(real, zero, mixup_weight)
    virtual = pair_batch(reprs, labels.tolist(), alpha, rng, overlapping)
    if not virtual:
        return LossBreakdown(real, zero, mixup_weight)
    mix = mixup_loss(virtual, token_ids, mlm_head)
    return LossBreakdown(real, mix, mixup_weight, [v.lam for v in virtual])
