"""Manifest-driven runs: single training runs, sweeps and strategy comparisons."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import torch

from .backend import attach_external_backend
from .datasets import load_dataset_dir
from .errors import ConfigurationError, CrossPromptError
from .estimator import PAPER_METHODS, save_classifier
from .protocol import RunConfig, evaluate, read_rows, report, sample_shots, train_run, write_row

log = logging.getLogger(__name__)

OUT_DIR_ENV = "CROSSPROMPT_OUT_DIR"
GRID_KEYS = ("methods", "ks", "seeds", "strategies")
RUN_KEYS = {
    "learning_rate", "batch_size", "grad_accumulation", "epochs", "alpha", "max_length",
    "languages", "strategy", "mixup_weight", "overlapping_pairs",
}


@dataclass
class Manifest:
    """Everything needed to reproduce a run or sweep.

    ``run`` holds shared ``RunConfig`` fields; the grid keys expand into one
    run per (method, K, seed). ``strategies`` switches a sweep to evaluating
    each trained checkpoint under several inference strategies.
    """

    data_dir: str | None = None
    backend: str | None = None
    verbalizer: str | None = None
    templates: str | None = None
    run: dict = field(default_factory=dict)
    methods: list[str] = field(default_factory=lambda: [m.value for m in PAPER_METHODS])
    ks: list[int] = field(default_factory=lambda: [16])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    strategies: list[int] | None = None
    test_limit: int | None = None
    task: dict = field(default_factory=dict)
    pretrain: dict = field(default_factory=dict)
    backend_config: dict = field(default_factory=dict)
    workers: int = 1
    out_dir: str | None = None

    @classmethod
    def load(cls, path) -> "Manifest":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigurationError(f"manifest not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"manifest {path} does not parse: {exc}") from None
        return cls.from_mapping(data)

    @classmethod
    def from_mapping(cls, data: Mapping) -> "Manifest":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown manifest keys: {', '.join(sorted(unknown))}")
        m = cls(**copy.deepcopy(dict(data)))
        bad = set(m.run) - RUN_KEYS
        if bad:
            raise ConfigurationError(f"unknown run settings: {', '.join(sorted(bad))}")
        return m

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}

    def content_hash(self) -> str:
        """Hash of everything that affects results (not output location or worker count)."""
        payload = {k: v for k, v in self.to_dict().items() if k not in ("out_dir", "workers")}
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def output_root(self) -> Path:
        return Path(self.out_dir or os.environ.get(OUT_DIR_ENV) or "runs")

    def run_config(self, method, k, seed) -> RunConfig:
        return RunConfig.from_mapping({**self.run, "method": method, "k": k, "seed": seed})


def run_file_name(method, k, seed, strategy=None) -> str:
    suffix = f"_strategy{strategy}" if strategy is not None else ""
    return f"{method}_k{k}_seed{seed}{suffix}.json"


_CACHE: dict = {}


def _resources(manifest: Manifest):
    key = (manifest.data_dir, manifest.backend, manifest.verbalizer, manifest.templates)
    if key not in _CACHE:
        if not manifest.data_dir or not manifest.backend:
            raise ConfigurationError("manifest needs data_dir and backend")
        data = load_dataset_dir(manifest.data_dir, manifest.verbalizer, manifest.templates)
        if data.verbalizer is None:
            raise ConfigurationError(f"no verbalizer file for {manifest.data_dir}")
        backend = attach_external_backend(manifest.backend)
        _CACHE.clear()
        _CACHE[key] = (data, backend)
    return _CACHE[key]


def _test_sets(manifest, data):
    if manifest.test_limit:
        return {k: v[: manifest.test_limit] for k, v in data.test_sets.items()}
    return data.test_sets


def execute_run(manifest: Manifest, method: str, k: int, seed: int, run_dir: Path, save_checkpoint=False) -> list[Path]:
    """Train one (method, K, seed) cell and write its row file(s)."""
    torch.set_num_threads(1)
    data, backend = _resources(manifest)
    config = manifest.run_config(method, k, seed)
    shots = sample_shots(data.train, data.dev, k, seed)
    clf = train_run(config, shots, backend, data.verbalizer, data.templates)
    tests = _test_sets(manifest, data)
    extra = {"manifest_hash": manifest.content_hash(), "run_config": config.to_dict()}
    written = []
    if manifest.strategies:
        for strategy in manifest.strategies:
            row = evaluate(clf, tests, strategy, k=k, seed=seed)
            written.append(write_row(row, run_dir / run_file_name(method, k, seed, strategy), extra))
    else:
        row = evaluate(clf, tests, k=k, seed=seed)
        written.append(write_row(row, run_dir / run_file_name(method, k, seed), extra))
    if save_checkpoint:
        save_classifier(clf, run_dir / "checkpoints" / run_file_name(method, k, seed).replace(".json", ".pt"))
    return written


def _worker(args):
    manifest_dict, method, k, seed, run_dir = args
    manifest = Manifest.from_mapping(manifest_dict)
    try:
        return method, k, seed, [str(p) for p in execute_run(manifest, method, k, seed, Path(run_dir))], None
    except CrossPromptError as exc:
        return method, k, seed, [], f"{type(exc).__name__}: {exc}"
    except Exception:  # noqa: BLE001 -- partial failures are recorded, not raised
        return method, k, seed, [], traceback.format_exc()


def _init_worker():
    torch.set_num_threads(1)


@dataclass
class SweepResult:
    run_dir: Path
    row_files: list[Path]
    failures: dict
    report_tsv: Path
    report_txt: Path


def run_sweep(manifest: Manifest) -> SweepResult:
    """Execute the method x K x seed grid and write rows plus the report.

    Rows land in ``<out>/<manifest hash>/``; failed cells are written to
    ``failures.json`` and shown as missing in the report.
    """
    run_dir = manifest.output_root() / manifest.content_hash()
    run_dir.mkdir(parents=True, exist_ok=True)
    # the snapshot lives inside the output root, so its location is left out
    snapshot = {k: v for k, v in manifest.to_dict().items() if k != "out_dir"}
    (run_dir / "manifest.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n")
    jobs = [
        (manifest.to_dict(), m, k, s, str(run_dir)) for m in manifest.methods for k in manifest.ks for s in manifest.seeds
    ]
    if manifest.workers > 1:
        with ProcessPoolExecutor(max_workers=manifest.workers, initializer=_init_worker) as pool:
            results = list(pool.map(_worker, jobs))
    else:
        results = [_worker(job) for job in jobs]
    rows, failures = [], {}
    for method, k, seed, paths, err in results:
        if err:
            failures[f"{method}/k{k}/seed{seed}"] = err
            log.error("run %s k=%s seed=%s failed: %s", method, k, seed, err)
        rows.extend(Path(p) for p in paths)
    fail_path = run_dir / "failures.json"
    if failures:
        fail_path.write_text(json.dumps(failures, indent=2, sort_keys=True) + "\n")
    elif fail_path.exists():
        fail_path.unlink()
    strategies = manifest.strategies or [manifest.run.get("strategy", 1)]
    expected = [(m, k, s) for m in manifest.methods for k in manifest.ks for s in strategies]
    tsv, pretty = report(read_rows(sorted(rows)), expected)
    tsv_path, txt_path = run_dir / "report.tsv", run_dir / "report.txt"
    tsv_path.write_text(tsv, encoding="utf-8")
    txt_path.write_text(pretty, encoding="utf-8")
    return SweepResult(run_dir, sorted(rows), failures, tsv_path, txt_path)
