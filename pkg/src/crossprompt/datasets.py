"""Dataset directories and loaders for public benchmark layouts.

A dataset directory holds ``train.jsonl``, ``dev.jsonl`` and one
``test.<LANG>.jsonl`` per target language, all in the line-delimited pair
format, plus optional ``verbalizers.json`` and ``templates.json``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import InputError
from .prompt_core import (
    LabeledPair,
    MultilingualVerbalizer,
    load_bundled_templates,
    load_bundled_verbalizer,
    load_template_words,
    load_verbalizer_file,
)
from .synth import read_dataset, write_dataset

XNLI_LABELS = {"entailment": 0, "contradiction": 1, "neutral": 2}
# PAWS-X marks paraphrases with 1; the bundled verbalizer lists paraphrase first
PAWSX_LABELS = {"1": 0, "0": 1}


@dataclass
class DatasetDir:
    path: Path
    train: list[LabeledPair]
    dev: list[LabeledPair]
    test_sets: dict[str, list[LabeledPair]]
    verbalizer: MultilingualVerbalizer | None
    templates: dict[str, tuple[str, str]] | None


def load_dataset_dir(path, verbalizer=None, templates=None) -> DatasetDir:
    path = Path(path)
    if not path.is_dir():
        raise InputError(f"dataset directory not found: {path}")
    tests = {}
    for f in sorted(path.glob("test.*.jsonl")):
        tests[f.name[len("test.") : -len(".jsonl")]] = read_dataset(f)
    if not tests:
        raise InputError(f"{path} has no test.<LANG>.jsonl files")
    tests = _source_first(tests)
    verb_path = Path(verbalizer) if verbalizer else path / "verbalizers.json"
    tmpl_path = Path(templates) if templates else path / "templates.json"
    return DatasetDir(
        path=path,
        train=read_dataset(path / "train.jsonl"),
        dev=read_dataset(path / "dev.jsonl"),
        test_sets=tests,
        verbalizer=load_verbalizer_file(verb_path) if verb_path.is_file() else None,
        templates=load_template_words(tmpl_path) if tmpl_path.is_file() else None,
    )


def _source_first(tests: dict) -> dict:
    if "EN" in tests:
        return {"EN": tests["EN"], **{k: v for k, v in tests.items() if k != "EN"}}
    return tests


def read_mnli_jsonl(path, language="EN") -> list[LabeledPair]:
    """MultiNLI-style jsonl (``sentence1``, ``sentence2``, ``gold_label``)."""
    out = []
    with Path(path).open(encoding="utf-8") as f:
        for line in f:
            rec = json.loads(line)
            label = XNLI_LABELS.get(rec.get("gold_label"))
            if label is not None:
                out.append(LabeledPair(rec["sentence1"], rec["sentence2"], label, language))
    return out


def read_xnli_tsv(path) -> dict[str, list[LabeledPair]]:
    """XNLI dev/test tsv (columns ``language``, ``gold_label``, ``sentence1``, ``sentence2``)."""
    by_lang: dict[str, list[LabeledPair]] = {}
    with Path(path).open(encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f, delimiter="\t", quoting=csv.QUOTE_NONE):
            label = XNLI_LABELS.get(row["gold_label"])
            if label is None:
                continue
            lang = row["language"].upper()
            by_lang.setdefault(lang, []).append(LabeledPair(row["sentence1"], row["sentence2"], label, lang))
    return _source_first(by_lang)


def read_pawsx_tsv(path, language) -> list[LabeledPair]:
    """PAWS-X tsv (``id``, ``sentence1``, ``sentence2``, ``label``)."""
    out = []
    with Path(path).open(encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f, delimiter="\t", quoting=csv.QUOTE_NONE):
            label = PAWSX_LABELS.get(str(row["label"]).strip())
            if label is None or not row["sentence1"].strip() or not row["sentence2"].strip():
                continue
            out.append(LabeledPair(row["sentence1"], row["sentence2"], label, language.upper()))
    return out


def write_dataset_dir(out, train, dev, test_sets, task: str | None = None) -> Path:
    """Write the standard layout; ``task`` ("xnli"/"pawsx") copies bundled verbalizers."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(train, out / "train.jsonl")
    write_dataset(dev, out / "dev.jsonl")
    for lang, pairs in test_sets.items():
        write_dataset(pairs, out / f"test.{lang}.jsonl")
    if task:
        mv = load_bundled_verbalizer(task)
        (out / "verbalizers.json").write_text(
            json.dumps(mv.to_dict(task), ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
        if task == "xnli":
            words = {k: list(v) for k, v in load_bundled_templates("xnli").items()}
            (out / "templates.json").write_text(json.dumps(words, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    return out
