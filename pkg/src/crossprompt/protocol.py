"""Few-shot cross-lingual evaluation protocol.

K shots per class are drawn without replacement from the English training
pool, plus K per class from the English development pool for checkpoint
selection. The selected model is applied unchanged to every target
language; results over seeds are reported as mean and sample std.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, InputError
from .estimator import Method, PromptClassifier
from .inference import Strategy
from .prompt_core import SOURCE_LANGUAGE, LabeledPair
from .validation import check_source_only


@dataclass(frozen=True)
class ShotSet:
    train: tuple[LabeledPair, ...]
    dev: tuple[LabeledPair, ...]
    k: int
    seed: int


def _stratified(pool, k, rng, exclude=frozenset(), what="pool"):
    labels = np.array([p.label for p in pool])
    chosen = []
    for c in np.unique(labels):
        idx = [i for i in np.flatnonzero(labels == c) if i not in exclude]
        if len(idx) < k:
            raise InputError(f"{what} has {len(idx)} examples of class {int(c)}; {k} shots requested")
        chosen.extend(int(i) for i in rng.choice(idx, k, replace=False))
    return chosen


def sample_shots(source_pool: Sequence[LabeledPair], dev_pool: Sequence[LabeledPair] | None, k: int, seed: int) -> ShotSet:
    """Class-stratified draw of K train and K dev examples per class.

    If ``dev_pool`` is ``None`` both sets come from ``source_pool`` and are
    kept disjoint.
    """
    if k < 1:
        raise InputError(f"K must be >= 1, got {k}")
    source_pool = list(source_pool)
    check_source_only(source_pool)
    rng = np.random.default_rng([seed, k])
    train_idx = _stratified(source_pool, k, rng, what="training pool")
    if dev_pool is None:
        dev_idx = _stratified(source_pool, k, rng, exclude=set(train_idx), what="training pool (dev draw)")
        dev = tuple(source_pool[i] for i in dev_idx)
    else:
        dev_pool = list(dev_pool)
        check_source_only(dev_pool)
        dev = tuple(dev_pool[i] for i in _stratified(dev_pool, k, rng, what="development pool"))
    return ShotSet(tuple(source_pool[i] for i in train_idx), dev, k, seed)


@dataclass
class RunConfig:
    method: str = "ours"
    k: int = 16
    seed: int = 0
    learning_rate: float = 1e-5
    batch_size: int = 8
    grad_accumulation: int = 4
    epochs: int = 50
    alpha: float = 1.2
    max_length: int = 256
    languages: list[str] | None = None
    strategy: int = 1
    mixup_weight: float = 1.0
    overlapping_pairs: bool = False

    def __post_init__(self):
        try:
            self.method = Method(self.method).value
            self.strategy = int(Strategy(self.strategy))
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        if self.alpha <= 0:
            raise ConfigurationError(f"alpha must be positive, got {self.alpha}")

    @classmethod
    def from_mapping(cls, data: Mapping) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"unknown run settings: {', '.join(sorted(unknown))}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def classifier(self, backend, verbalizer, templates=None) -> PromptClassifier:
        return PromptClassifier(
            backend=backend,
            verbalizer=verbalizer,
            templates=templates,
            method=self.method,
            languages=self.languages,
            strategy=self.strategy,
            alpha=self.alpha,
            mixup_weight=self.mixup_weight,
            overlapping_pairs=self.overlapping_pairs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            grad_accumulation=self.grad_accumulation,
            epochs=self.epochs,
            max_length=self.max_length,
            seed=self.seed,
        )


def train_run(config: RunConfig, shots: ShotSet, backend, verbalizer, templates=None) -> PromptClassifier:
    """Train one run and return the classifier at its best dev epoch."""
    clf = config.classifier(backend, verbalizer, templates)
    return clf.fit(list(shots.train), eval_set=list(shots.dev))


@dataclass
class ResultRow:
    method: str
    k: int
    seed: int
    accuracies: dict[str, float]
    dev_curve: list[float] = field(default_factory=list)
    best_epoch: int = 0
    strategy: int = 1

    @property
    def average(self) -> float:
        return float(np.mean(list(self.accuracies.values())))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["average"] = self.average
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "ResultRow":
        try:
            return cls(
                method=data["method"],
                k=int(data["k"]),
                seed=int(data["seed"]),
                accuracies={k: float(v) for k, v in data["accuracies"].items()},
                dev_curve=list(data.get("dev_curve", [])),
                best_epoch=int(data.get("best_epoch", 0)),
                strategy=int(data.get("strategy", 1)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed result row: {exc}") from None


def evaluate(clf: PromptClassifier, test_sets: Mapping[str, Sequence[LabeledPair]], strategy=None, *, k=0, seed=0) -> ResultRow:
    """Per-language accuracy of a trained classifier."""
    accs = {}
    for lang, pairs in test_sets.items():
        pairs = list(pairs)
        if not pairs:
            raise InputError(f"test set for {lang} is empty")
        gold = np.array([p.label for p in pairs])
        accs[lang] = float(np.mean(clf.predict(pairs, strategy) == gold))
    used = strategy if strategy is not None else clf.strategy
    return ResultRow(
        method=clf.method_.value,
        k=k,
        seed=seed,
        accuracies=accs,
        dev_curve=list(getattr(clf, "history_", {}).get("dev_accuracy", [])),
        best_epoch=int(getattr(clf, "best_epoch_", 0)),
        strategy=int(used),
    )


@dataclass
class ResultTable:
    languages: list[str]
    per_seed: np.ndarray  # (seeds, languages)
    seeds: list[int]

    @property
    def mean(self) -> np.ndarray:
        return self.per_seed.mean(axis=0)

    @property
    def std(self) -> np.ndarray | None:
        if len(self.seeds) < 2:
            return None
        return self.per_seed.std(axis=0, ddof=1)

    @property
    def seed_averages(self) -> np.ndarray:
        return self.per_seed.mean(axis=1)

    @property
    def average(self) -> tuple[float, float | None]:
        avgs = self.seed_averages
        return float(avgs.mean()), (float(avgs.std(ddof=1)) if len(avgs) > 1 else None)

    def cells(self, scale=100.0) -> list[str]:
        std = self.std
        out = [
            format_cell(m * scale, None if std is None else s * scale)
            for m, s in zip(self.mean, std if std is not None else [None] * len(self.mean))
        ]
        m, s = self.average
        out.append(format_cell(m * scale, None if s is None else s * scale))
        return out


def format_cell(mean: float, std: float | None) -> str:
    if std is None:
        return f"{mean:.2f}"
    return f"{mean:.2f}±{std:.2f}"


def aggregate(rows: Sequence[ResultRow]) -> ResultTable:
    """Combine per-seed rows; the average column averages languages within a seed first."""
    rows = list(rows)
    if not rows:
        raise InputError("no result rows to aggregate")
    langs = list(rows[0].accuracies)
    for r in rows[1:]:
        if set(r.accuracies) != set(langs):
            raise InputError(
                f"seed {r.seed} covers languages {sorted(r.accuracies)}, expected {sorted(langs)}"
            )
    rows = sorted(rows, key=lambda r: r.seed)
    per_seed = np.array([[r.accuracies[lang] for lang in langs] for r in rows], dtype=np.float64)
    return ResultTable(langs, per_seed, [r.seed for r in rows])


# -- files ------------------------------------------------------------------


def write_row(row: ResultRow, path, extra: Mapping | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = row.to_dict()
    if extra:
        payload.update(extra)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_rows(paths: Iterable) -> list[ResultRow]:
    rows = []
    for p in paths:
        p = Path(p)
        if not p.is_file():
            raise InputError(f"row file not found: {p}")
        try:
            rows.append(ResultRow.from_dict(json.loads(p.read_text(encoding="utf-8"))))
        except json.JSONDecodeError as exc:
            raise InputError(f"{p}: {exc}") from None
    return rows


def group_rows(rows: Sequence[ResultRow]) -> dict[tuple[str, int, int], list[ResultRow]]:
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.method, r.k, r.strategy), []).append(r)
    return groups


def report(rows: Sequence[ResultRow], expected: Iterable[tuple[str, int, int]] = ()) -> tuple[str, str]:
    """Tab-separated and aligned text tables, one line per (method, K, strategy).

    ``expected`` keys with no rows appear as missing cells.
    """
    rows = list(rows)
    expected = list(expected)
    if not rows and not expected:
        raise InputError("no result rows to report")
    groups = group_rows(rows)
    keys = list(dict.fromkeys([*expected, *sorted(groups, key=_row_order)]))
    langs = list(rows[0].accuracies) if rows else []
    strategies = {k[2] for k in keys}
    header = ["method", "K"] + (["strategy"] if len(strategies) > 1 else []) + langs + ["Avg"]
    lines = [header]
    for method, k, strategy in keys:
        lead = [method, str(k)] + ([str(strategy)] if len(strategies) > 1 else [])
        if (method, k, strategy) in groups:
            table = aggregate(groups[(method, k, strategy)])
            if table.languages != langs:
                table = _reorder(table, langs)
            lines.append(lead + table.cells())
        else:
            lines.append(lead + ["missing"] * (len(langs) + 1))
    tsv = "\n".join("\t".join(cols) for cols in lines) + "\n"
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    pretty = "\n".join("  ".join(c.rjust(w) for c, w in zip(line, widths)) for line in lines) + "\n"
    return tsv, pretty


def _row_order(key):
    order = [m.value for m in Method]
    method, k, strategy = key
    return (order.index(method) if method in order else len(order), method, k, strategy)


def _reorder(table: ResultTable, langs: list[str]) -> ResultTable:
    if set(table.languages) != set(langs):
        raise InputError(f"inconsistent language columns: {table.languages} vs {langs}")
    idx = [table.languages.index(lang) for lang in langs]
    return ResultTable(langs, table.per_seed[:, idx], table.seeds)


def binomial_halfwidth(p: float, n: int, z: float = 3.0) -> float:
    return z * math.sqrt(p * (1 - p) / n)
