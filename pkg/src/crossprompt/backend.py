"""Masked-LM backends.

Every backend exposes the same small surface:

* ``encode_mask(examples)`` -> ``(B, d)`` final-layer vectors at the mask slot
* ``mlm_logits(reprs)`` -> ``(B, V)`` vocabulary logits
* ``classify_logits(sequences)`` -> ``(B, C)`` logits of the finetuning head
* ``is_single_token`` / ``token_to_id`` for verbalizer validation

``ToyMaskedLM`` is a small deterministic transformer for desk-scale work and
``HuggingFaceMaskedLM`` wraps a pretrained multilingual MLM.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .errors import BackendUnavailableError, InputError
from .prompt_core import MASK, SEP, PromptedExample

PAD = "<pad>"
BOS = "<s>"
UNK = "<unk>"
CHECKPOINT_FORMAT = "crossprompt-toy-v1"


@dataclass
class BackendConfig:
    vocabulary_size: int
    hidden_dim: int = 32
    layers: int = 2
    attention_heads: int = 2
    max_sequence_length: int = 64
    num_classes: int = 3
    ffn_multiplier: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.hidden_dim % self.attention_heads:
            raise InputError(
                f"hidden_dim {self.hidden_dim} is not divisible by attention_heads {self.attention_heads}"
            )
        if self.vocabulary_size < 1 or self.max_sequence_length < 2:
            raise InputError("vocabulary_size and max_sequence_length must be positive")


class Vocabulary:
    """Token <-> id map; unknown sentence tokens fall back to ``<unk>``."""

    specials = (PAD, BOS, UNK, MASK)

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        for sp in reversed(self.specials):
            if sp not in tokens:
                tokens.insert(0, sp)
        if len(set(tokens)) != len(tokens):
            raise InputError("vocabulary contains duplicate tokens")
        self.tokens = tokens
        self.index = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __getitem__(self, token) -> int:
        return self.index.get(token, self.index[UNK])

    def strict(self, token) -> int:
        try:
            return self.index[token]
        except KeyError:
            raise InputError(f"token {token!r} is not in the vocabulary") from None


def _pad(batch: Sequence[Sequence[int]], pad_id: int):
    width = max(len(ids) for ids in batch)
    ids = torch.full((len(batch), width), pad_id, dtype=torch.long)
    keep = torch.zeros((len(batch), width), dtype=torch.bool)
    for row, seq in enumerate(batch):
        ids[row, : len(seq)] = torch.as_tensor(seq, dtype=torch.long)
        keep[row, : len(seq)] = True
    return ids, keep


class Block(nn.Module):
    def __init__(self, d, heads, ffn):
        super().__init__()
        self.heads = heads
        self.ln_attn = nn.LayerNorm(d)
        self.qkv = nn.Linear(d, 3 * d)
        self.out = nn.Linear(d, d)
        self.ln_ffn = nn.LayerNorm(d)
        self.ff_in = nn.Linear(d, ffn)
        self.ff_out = nn.Linear(ffn, d)

    def forward(self, x, keep):
        B, T, d = x.shape
        hd = d // self.heads
        q, k, v = self.qkv(self.ln_attn(x)).split(d, dim=-1)
        q, k, v = (t.view(B, T, self.heads, hd).transpose(1, 2) for t in (q, k, v))
        scores = q @ k.transpose(-1, -2) / math.sqrt(hd)
        scores = scores.masked_fill(~keep[:, None, None, :], float("-inf"))
        attn = scores.softmax(dim=-1) @ v
        x = x + self.out(attn.transpose(1, 2).reshape(B, T, d))
        return x + self.ff_out(F.gelu(self.ff_in(self.ln_ffn(x))))


class ToyMaskedLM(nn.Module):
    """Pre-norm transformer encoder with a tied masked-LM head.

    A ``<s>`` token is prepended to every sequence; it is the pooled position
    for the classification head. There is no dropout, so a forward pass is a
    pure function of parameters and input.
    """

    num_added_tokens = 1

    def __init__(self, vocabulary: Vocabulary | Sequence[str], config: BackendConfig | None = None):
        super().__init__()
        if not isinstance(vocabulary, Vocabulary):
            vocabulary = Vocabulary(vocabulary)
        if config is None:
            config = BackendConfig(vocabulary_size=len(vocabulary))
        if config.vocabulary_size != len(vocabulary):
            raise InputError(
                f"config.vocabulary_size={config.vocabulary_size} but vocabulary has {len(vocabulary)} tokens"
            )
        self.vocabulary = vocabulary
        self.config = config
        d = config.hidden_dim
        self.embed = nn.Embedding(config.vocabulary_size, d)
        self.position = nn.Parameter(torch.empty(config.max_sequence_length, d))
        self.blocks = nn.ModuleList(
            Block(d, config.attention_heads, config.ffn_multiplier * d) for _ in range(config.layers)
        )
        self.ln_final = nn.LayerNorm(d)
        self.mlm_bias = nn.Parameter(torch.zeros(config.vocabulary_size))
        self.classifier = nn.Linear(d, config.num_classes)
        self.seed_lineage = [{"op": "init", "seed": config.seed}]
        self.reset_parameters(config.seed)

    def reset_parameters(self, seed: int):
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith("bias") or name == "mlm_bias":
                    p.zero_()
                elif ".ln_" in name or name.startswith("ln_"):
                    p.fill_(1.0)
                else:
                    p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.02)

    # -- contract -----------------------------------------------------------

    @property
    def hidden_dim(self) -> int:
        return self.config.hidden_dim

    @property
    def vocab_size(self) -> int:
        return self.config.vocabulary_size

    @property
    def max_sequence_length(self) -> int:
        return self.config.max_sequence_length

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    def is_single_token(self, token: str) -> bool:
        return token in self.vocabulary

    def token_to_id(self, token: str) -> int:
        return self.vocabulary.strict(token)

    def ids_for(self, tokens: Sequence[str]) -> list[int]:
        return [self.vocabulary.index[BOS]] + [self.vocabulary[t] for t in tokens]

    def hidden_states(self, ids: torch.Tensor, keep: torch.Tensor) -> torch.Tensor:
        if ids.numel() and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise InputError(f"token id out of range [0, {self.vocab_size})")
        if ids.shape[1] > self.max_sequence_length:
            raise InputError(
                f"sequence of {ids.shape[1]} tokens exceeds max_sequence_length {self.max_sequence_length}"
            )
        x = self.embed(ids) + self.position[: ids.shape[1]]
        for block in self.blocks:
            x = block(x, keep)
        return self.ln_final(x)

    def encode_ids(self, batch_ids: Sequence[Sequence[int]], mask_positions: Sequence[int]) -> torch.Tensor:
        """Mask-slot vectors for already-tokenized inputs (positions include ``<s>``)."""
        ids, keep = _pad(batch_ids, self.vocabulary.index[PAD])
        h = self.hidden_states(ids, keep)
        return h[torch.arange(len(batch_ids)), torch.as_tensor(mask_positions)]

    def encode_mask(self, examples: Sequence[PromptedExample]) -> torch.Tensor:
        if not examples:
            return torch.zeros((0, self.hidden_dim), dtype=self.mlm_bias.dtype)
        return self.encode_ids(
            [self.ids_for(ex.tokens) for ex in examples],
            [ex.mask_position + self.num_added_tokens for ex in examples],
        )

    def mlm_logits(self, reprs: torch.Tensor) -> torch.Tensor:
        if reprs.shape[-1] != self.hidden_dim:
            raise InputError(f"representation dimension {reprs.shape[-1]} != hidden_dim {self.hidden_dim}")
        return reprs @ self.embed.weight.T + self.mlm_bias

    def classify_logits(self, sequences: Sequence[Sequence[str]]) -> torch.Tensor:
        ids, keep = _pad([self.ids_for(seq) for seq in sequences], self.vocabulary.index[PAD])
        return self.classifier(self.hidden_states(ids, keep)[:, 0])

    def forward(self, examples):
        return self.mlm_logits(self.encode_mask(examples))


# -- checkpoints ------------------------------------------------------------


def checkpoint_state(backend: ToyMaskedLM) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(backend.config),
        "vocabulary": list(backend.vocabulary.tokens),
        "seed_lineage": list(backend.seed_lineage),
        "state_dict": {k: v.detach().clone() for k, v in backend.state_dict().items()},
    }


def backend_from_state(blob: dict) -> ToyMaskedLM:
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise BackendUnavailableError(f"not a {CHECKPOINT_FORMAT} checkpoint")
    model = ToyMaskedLM(blob["vocabulary"], BackendConfig(**blob["config"]))
    state = blob["state_dict"]
    dtype = next(iter(state.values())).dtype
    if dtype != torch.float32:
        model = model.to(dtype)
    model.load_state_dict(state)
    model.seed_lineage = list(blob["seed_lineage"])
    model.eval()
    return model


def save_checkpoint(backend: ToyMaskedLM, path) -> Path:
    """Config, vocabulary, parameters and seed lineage in one file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(checkpoint_state(backend), path)
    return path


def load_checkpoint(path) -> ToyMaskedLM:
    path = Path(path)
    if not path.is_file():
        raise BackendUnavailableError(f"checkpoint not found: {path}")
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise BackendUnavailableError(f"cannot read checkpoint {path}: {exc}") from exc
    return backend_from_state(blob)


# -- pretraining ------------------------------------------------------------


def _mask_batch(backend, seqs, mask_prob, gen, focus=None):
    # focus[i] is the one token index of seqs[i] to mask, or None for random masking
    vocab = backend.vocabulary
    batch_ids, targets = [], []
    for n, seq in enumerate(seqs):
        ids = backend.ids_for(seq)
        forced = focus[n] if focus is not None else None
        if forced is not None and forced + 1 < len(ids):
            chosen = [forced + 1]
        else:
            candidates = [i for i in range(1, len(ids)) if vocab.tokens[ids[i]] not in Vocabulary.specials]
            if not candidates:
                candidates = list(range(1, len(ids)))
            draws = torch.rand(len(candidates), generator=gen)
            chosen = [pos for pos, u in zip(candidates, draws.tolist()) if u < mask_prob]
        if not chosen:
            chosen = [candidates[int(torch.randint(len(candidates), (1,), generator=gen))]]
        target = [-100] * len(ids)
        for pos in chosen:
            target[pos] = ids[pos]
            ids[pos] = vocab.index[MASK]
        batch_ids.append(ids)
        targets.append(target)
    ids, keep = _pad(batch_ids, vocab.index[PAD])
    tgt, _ = _pad(targets, -100)
    return ids, keep, tgt


def masked_lm_loss(backend, ids, keep, targets):
    h = backend.hidden_states(ids, keep)
    logits = backend.mlm_logits(h)
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), ignore_index=-100)


def _training_sequences(lines, groups, focus, gen):
    """Concatenate two translations of the same base line when groups are given.

    Lines whose group is ``None`` are used on their own and keep their focus
    position. Returns ``(sequences, focus)``.
    """
    if focus is None:
        focus = [None] * len(lines)
    if groups is None:
        return list(lines), list(focus)
    by_group: dict = {}
    out, out_focus = [], []
    for line, g, f in zip(lines, groups, focus):
        if g is None:
            out.append(line)
            out_focus.append(f)
        else:
            by_group.setdefault(g, []).append(line)
    for members in by_group.values():
        if len(members) < 2:
            out.extend(members)
            out_focus.extend([None] * len(members))
            continue
        for i, first in enumerate(members):
            j = int(torch.randint(len(members) - 1, (1,), generator=gen))
            j = j + 1 if j >= i else j
            out.append((*first, SEP, *members[j]))
            out_focus.append(None)
    return out, out_focus


def pretrain_toy(
    backend: ToyMaskedLM,
    corpus,
    steps: int = 2000,
    *,
    batch_size: int = 32,
    learning_rate: float = 1e-3,
    mask_prob: float = 0.15,
    seed: int = 0,
    pair_translations: bool = True,
):
    """Masked-token pretraining of a copy of ``backend``.

    ``corpus`` is a sequence of token sequences or an object with ``lines``
    (and optionally ``groups`` tagging translation-equivalent lines). With
    ``pair_translations`` grouped lines are packed two languages per input,
    which gives the model a cross-lingual alignment signal. A ``focus`` list
    on the corpus names, per line, the single token index to mask whenever
    the line is drawn (``None`` for random masking at ``mask_prob``).

    Returns ``(trained_backend, losses)``; the input backend is not modified.
    """
    lines = getattr(corpus, "lines", corpus)
    groups = getattr(corpus, "groups", None) if pair_translations else None
    focus = getattr(corpus, "focus", None)
    lines = [tuple(line) for line in lines]
    if not lines:
        raise InputError("pretraining corpus is empty")
    model = copy.deepcopy(backend)
    model.seed_lineage = list(backend.seed_lineage) + [{"op": "pretrain", "seed": seed, "steps": steps}]
    if steps <= 0:
        return model, []
    gen = torch.Generator().manual_seed(seed)
    seqs, focus = _training_sequences(lines, groups, focus, gen)
    limit = model.max_sequence_length - model.num_added_tokens
    seqs = [s[:limit] for s in seqs]
    focus = [f if f is not None and f < limit else None for f in focus]
    opt = torch.optim.Adam(model.parameters(), lr=learning_rate)
    model.train()
    losses = []
    for _ in range(steps):
        idx = torch.randint(len(seqs), (batch_size,), generator=gen).tolist()
        ids, keep, tgt = _mask_batch(model, [seqs[i] for i in idx], mask_prob, gen, [focus[i] for i in idx])
        loss = masked_lm_loss(model, ids, keep, tgt)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    model.eval()
    return model, losses


@torch.no_grad()
def masked_token_accuracy(backend, lines, *, mask_prob=0.15, seed=0, batch_size=64) -> float:
    """Top-1 accuracy of recovering masked tokens of ``lines``."""
    lines = [tuple(line) for line in getattr(lines, "lines", lines)]
    gen = torch.Generator().manual_seed(seed)
    correct = total = 0
    for start in range(0, len(lines), batch_size):
        ids, keep, tgt = _mask_batch(backend, lines[start : start + batch_size], mask_prob, gen)
        pred = backend.mlm_logits(backend.hidden_states(ids, keep)).argmax(-1)
        sel = tgt != -100
        correct += int((pred[sel] == tgt[sel]).sum())
        total += int(sel.sum())
    return correct / max(total, 1)


# -- external backends ------------------------------------------------------


class HuggingFaceMaskedLM(nn.Module):
    """Adapter for a pretrained masked LM loadable by ``transformers``.

    Prompt tokens are sub-tokenized one by one; the mask token maps to the
    tokenizer's own mask id. The finetuning head is a fresh linear layer over
    the first-token representation.
    """

    num_added_tokens = 1

    def __init__(self, model, tokenizer, num_classes: int = 3, max_sequence_length: int = 256, seed: int = 0):
        super().__init__()
        self.model = model
        self.tokenizer = tokenizer
        self.max_sequence_length = max_sequence_length
        d = model.config.hidden_size
        self.classifier = nn.Linear(d, num_classes)
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            self.classifier.weight.copy_(torch.randn(self.classifier.weight.shape, generator=gen) * 0.02)
            self.classifier.bias.zero_()
        self._head = None
        for name in ("lm_head", "cls", "vocab_projector"):
            if hasattr(model, name):
                self._head = getattr(model, name)
                break
        if self._head is None:
            raise BackendUnavailableError(f"cannot locate an MLM head on {type(model).__name__}")
        self.seed_lineage = [{"op": "attach", "seed": seed}]

    @classmethod
    def from_pretrained(cls, name_or_path, **kwargs):
        try:
            from transformers import AutoModelForMaskedLM, AutoTokenizer
        except ImportError as exc:  # pragma: no cover
            raise BackendUnavailableError("transformers is not installed") from exc
        try:
            tokenizer = AutoTokenizer.from_pretrained(name_or_path)
            model = AutoModelForMaskedLM.from_pretrained(name_or_path)
        except (OSError, ValueError) as exc:
            raise BackendUnavailableError(f"cannot load model {name_or_path}: {exc}") from exc
        model.eval()
        return cls(model, tokenizer, **kwargs)

    @property
    def hidden_dim(self) -> int:
        return self.model.config.hidden_size

    @property
    def vocab_size(self) -> int:
        return self.model.config.vocab_size

    @property
    def num_classes(self) -> int:
        return self.classifier.out_features

    def _pieces(self, token: str) -> list[str]:
        return self.tokenizer.tokenize(token)

    def is_single_token(self, token: str) -> bool:
        return len(self._pieces(token)) == 1

    def token_to_id(self, token: str) -> int:
        pieces = self._pieces(token)
        if len(pieces) != 1:
            raise InputError(f"{token!r} is not a single token: {pieces}")
        return self.tokenizer.convert_tokens_to_ids(pieces[0])

    def _ids(self, tokens):
        tk = self.tokenizer
        ids = [tk.cls_token_id if tk.cls_token_id is not None else tk.bos_token_id]
        mask_at = None
        for tok in tokens:
            if tok == MASK:
                mask_at = len(ids)
                ids.append(tk.mask_token_id)
            else:
                ids.extend(tk.convert_tokens_to_ids(self._pieces(tok)))
        if len(ids) > self.max_sequence_length:
            raise InputError(f"sequence of {len(ids)} subtokens exceeds max_sequence_length")
        return ids, mask_at

    def _hidden(self, batch_ids):
        ids, keep = _pad(batch_ids, self.tokenizer.pad_token_id or 0)
        out = self.model(input_ids=ids, attention_mask=keep.long(), output_hidden_states=True)
        return out.hidden_states[-1]

    def encode_mask(self, examples):
        encoded = [self._ids(ex.tokens) for ex in examples]
        h = self._hidden([ids for ids, _ in encoded])
        return h[torch.arange(len(encoded)), torch.as_tensor([m for _, m in encoded])]

    def mlm_logits(self, reprs):
        if reprs.shape[-1] != self.hidden_dim:
            raise InputError(f"representation dimension {reprs.shape[-1]} != hidden_dim {self.hidden_dim}")
        return self._head(reprs)

    def classify_logits(self, sequences):
        h = self._hidden([self._ids(seq)[0] for seq in sequences])
        return self.classifier(h[:, 0])


def attach_external_backend(descriptor, *, verbalizer=None, **kwargs):
    """Resolve ``descriptor`` to a backend.

    Accepted forms: ``"toy"`` (fresh toy model over the default synthetic
    vocabulary), a path to a toy checkpoint file, a directory holding a
    ``transformers`` model, or ``"hf:<name-or-path>"``. If ``verbalizer`` is
    given its tokens are validated against the new backend.
    """
    if isinstance(descriptor, nn.Module):
        backend = descriptor
    elif descriptor == "toy":
        from .synth import SynthTaskSpec, build_vocabulary

        spec = SynthTaskSpec()
        vocab = build_vocabulary(spec)
        backend = ToyMaskedLM(vocab, BackendConfig(vocabulary_size=len(vocab), **kwargs))
    elif str(descriptor).startswith("hf:"):
        backend = HuggingFaceMaskedLM.from_pretrained(str(descriptor)[3:], **kwargs)
    else:
        path = Path(descriptor)
        if path.is_dir() and (path / "config.json").is_file():
            backend = HuggingFaceMaskedLM.from_pretrained(str(path), **kwargs)
        elif path.is_file():
            backend = load_checkpoint(path)
        else:
            raise BackendUnavailableError(f"no model artifact at {descriptor}")
    if verbalizer is not None:
        verbalizer.validate(backend.is_single_token)
    return backend
