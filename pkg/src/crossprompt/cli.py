"""Command-line entry point: ``crossprompt <command> [flags]``.

Every command reads an optional ``--manifest`` JSON file; flags override the
file. Exit codes: 0 ok, 2 configuration, 3 input, 4 environment,
5 generation, 6 protocol.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import backend as backend_mod
from .datasets import load_dataset_dir, read_mnli_jsonl, read_pawsx_tsv, read_xnli_tsv, write_dataset_dir
from .errors import ConfigurationError, CrossPromptError, InputError
from .estimator import load_classifier, save_classifier
from .inference import compare_strategies, read_logit_dump, write_logit_dump
from .prompt_core import load_verbalizer_file
from .protocol import evaluate, read_rows, report, sample_shots, train_run, write_row
from .synth import SynthTaskSpec, generate_suite, read_corpus, write_suite
from .workflow import Manifest, execute_run, run_file_name, run_sweep

log = logging.getLogger("crossprompt")

# flag -> RunConfig field
RUN_FLAGS = {
    "alpha": "alpha",
    "strategy": "strategy",
    "languages": "languages",
    "mixup_weight": "mixup_weight",
    "epochs": "epochs",
    "lr": "learning_rate",
    "batch_size": "batch_size",
    "grad_accum": "grad_accumulation",
    "max_length": "max_length",
}


def _csv(kind):
    def parse(text):
        return [kind(x) for x in text.split(",") if x.strip()]

    return parse


def _common(p, grid=False):
    p.add_argument("--manifest", help="JSON manifest; flags override its values")
    p.add_argument("--out-dir", help="output directory (default: $CROSSPROMPT_OUT_DIR or ./runs)")
    p.add_argument("--backend", help="toy checkpoint, HF model dir, 'hf:<name>' or 'toy'")
    p.add_argument("--data-dir", help="dataset directory (train/dev/test.<LANG>.jsonl)")
    p.add_argument("--verbalizer", help="verbalizer file (default: <data-dir>/verbalizers.json)")
    p.add_argument("--templates", help="prompting-word file (default: <data-dir>/templates.json)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--strategy", type=int, choices=range(1, 6))
    p.add_argument("--languages", type=_csv(str), help="comma-separated multilingual verbalizer languages")
    p.add_argument("--mixup-weight", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--grad-accum", type=int)
    p.add_argument("--max-length", type=int)
    p.add_argument("--test-limit", type=int, help="evaluate on the first N test pairs per language")
    if grid:
        p.add_argument("--method", type=_csv(str), help="comma-separated methods")
        p.add_argument("--k", type=_csv(int), help="comma-separated shot counts")
        p.add_argument("--seed", type=_csv(int), help="comma-separated seeds")
        p.add_argument("--strategies", type=_csv(int), help="evaluate each checkpoint under these strategies")
        p.add_argument("--workers", type=int)
    else:
        p.add_argument("--method")
        p.add_argument("--k", type=int)
        p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossprompt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic task or convert XNLI/PAWS-X files")
    p.add_argument("--manifest")
    p.add_argument("--out-dir", required=False)
    p.add_argument("--seed", type=int)
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--pseudo-languages", type=int)
    p.add_argument("--overlap", type=float)
    p.add_argument("--non-parallel", action="store_true", help="independent corpus lines per language")
    p.add_argument("--format", choices=["synthetic", "xnli", "pawsx"], default="synthetic")
    p.add_argument("--train-file", help="xnli: MultiNLI-style jsonl; pawsx: English train tsv")
    p.add_argument("--dev-file", help="xnli: xnli.dev.tsv; pawsx: English dev tsv")
    p.add_argument("--test-file", nargs="*", help="xnli: xnli.test.tsv; pawsx: LANG=path entries")

    p = sub.add_parser("pretrain", help="masked-token pretraining of the toy backend")
    p.add_argument("--manifest")
    p.add_argument("--data-dir")
    p.add_argument("--out-dir")
    p.add_argument("--output", help="checkpoint path (default: the manifest backend, else <out-dir>/backend.pt)")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)

    p = sub.add_parser("train", help="train and evaluate one (method, K, seed) run")
    _common(p)
    p.add_argument("--save-checkpoint", action="store_true")

    p = sub.add_parser("eval", help="evaluate a saved classifier checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output", help="row file path")
    p.add_argument("--dump-logits", help="also write a logit dump here")
    p.add_argument("--restricted", action="store_true", help="dump label-token probabilities only")

    p = sub.add_parser("compare-strategies", help="agreement and accuracy of the five strategies")
    p.add_argument("--dump", required=True)
    p.add_argument("--verbalizer", required=True)
    p.add_argument("--restricted", action="store_true", help="expect a restricted dump")
    p.add_argument("--target-language", help="override the per-record language")

    p = sub.add_parser("sweep", help="run a method x K x seed grid and report")
    _common(p, grid=True)

    p = sub.add_parser("report", help="tables from row files")
    p.add_argument("rows", nargs="+", help="row files or directories of row files")
    p.add_argument("--output", help="write the tab-separated table here")
    p.add_argument("--pretty", action="store_true", help="print the aligned table instead of TSV")
    return parser


def _manifest(args) -> Manifest:
    m = Manifest.load(args.manifest) if getattr(args, "manifest", None) else Manifest()
    for flag in ("data_dir", "backend", "verbalizer", "templates", "out_dir", "test_limit", "workers", "strategies"):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(m, flag, value)
    for flag, key in RUN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            m.run[key] = value
    grid = {"method": "methods", "k": "ks", "seed": "seeds"}
    for flag, key in grid.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(m, key, value if isinstance(value, list) else [value])
    return m


def cmd_gen_data(args):
    m = Manifest.load(args.manifest) if args.manifest else Manifest()
    out = Path(args.out_dir or m.data_dir or m.output_root() / "data")
    if args.format == "xnli":
        if not (args.train_file and args.dev_file and args.test_file):
            raise ConfigurationError("xnli conversion needs --train-file, --dev-file and --test-file")
        dev = read_xnli_tsv(args.dev_file).get("EN", [])
        tests = read_xnli_tsv(args.test_file[0])
        write_dataset_dir(out, read_mnli_jsonl(args.train_file), dev, tests, task="xnli")
    elif args.format == "pawsx":
        if not (args.train_file and args.dev_file and args.test_file):
            raise ConfigurationError("pawsx conversion needs --train-file, --dev-file and --test-file LANG=path")
        tests = {}
        for entry in args.test_file:
            lang, _, path = entry.partition("=")
            tests[lang.upper()] = read_pawsx_tsv(path, lang)
        write_dataset_dir(
            out, read_pawsx_tsv(args.train_file, "EN"), read_pawsx_tsv(args.dev_file, "EN"), tests, task="pawsx"
        )
    else:
        task = dict(m.task)
        for flag in ("seed", "vocab_size", "num_classes", "pseudo_languages", "overlap"):
            if getattr(args, flag) is not None:
                task[flag] = getattr(args, flag)
        suite = generate_suite(SynthTaskSpec(**task), parallel=not args.non_parallel)
        write_suite(suite, out)
    print(out)


def _checkpoint_target(descriptor):
    """The manifest's backend, if it names a toy checkpoint file."""
    if descriptor and descriptor != "toy" and not descriptor.startswith("hf:") and not Path(descriptor).is_dir():
        return descriptor
    return None


def cmd_pretrain(args):
    m = Manifest.load(args.manifest) if args.manifest else Manifest()
    data_dir = Path(args.data_dir or m.data_dir or "")
    vocab_file = data_dir / "vocab.json"
    if not vocab_file.is_file():
        raise InputError(f"{vocab_file} not found; run gen-data first")
    vocab = json.loads(vocab_file.read_text(encoding="utf-8"))
    corpus = read_corpus(data_dir / "corpus.jsonl")
    opts = dict(m.pretrain)
    for flag, key in (("steps", "steps"), ("seed", "seed"), ("batch_size", "batch_size"), ("lr", "learning_rate")):
        if getattr(args, flag) is not None:
            opts[key] = getattr(args, flag)
    config = backend_mod.BackendConfig(vocabulary_size=len(vocab), **m.backend_config)
    model = backend_mod.ToyMaskedLM(vocab, config)
    trained, losses = backend_mod.pretrain_toy(model, corpus, **opts)
    out = args.output or _checkpoint_target(m.backend) or Path(args.out_dir or m.output_root()) / "backend.pt"
    out = Path(out)
    backend_mod.save_checkpoint(trained, out)
    summary = {
        "checkpoint": str(out),
        "steps": len(losses),
        "first_loss": losses[0] if losses else None,
        "final_loss": float(np.mean(losses[-50:])) if losses else None,
    }
    print(json.dumps(summary, indent=2))


def cmd_train(args):
    m = _manifest(args)
    if len(m.methods) != 1 or len(m.ks) != 1 or len(m.seeds) != 1:
        raise ConfigurationError("train runs exactly one method, K and seed; use sweep for grids")
    run_dir = m.output_root() / m.content_hash()
    paths = execute_run(m, m.methods[0], m.ks[0], m.seeds[0], run_dir, save_checkpoint=args.save_checkpoint)
    for p in paths:
        print(p)


def cmd_eval(args):
    m = _manifest(args)
    clf = load_classifier(args.checkpoint)
    data = load_dataset_dir(m.data_dir, m.verbalizer, m.templates) if m.data_dir else None
    if data is None:
        raise ConfigurationError("eval needs --data-dir")
    tests = {k: v[: m.test_limit] if m.test_limit else v for k, v in data.test_sets.items()}
    row = evaluate(clf, tests, m.run.get("strategy"))
    out = Path(args.output or m.output_root() / "eval" / Path(args.checkpoint).with_suffix(".json").name)
    write_row(row, out)
    print(out)
    if args.dump_logits:
        pairs = [p for v in tests.values() for p in v]
        labels = [p.label for p in pairs]
        langs = [p.language for p in pairs]
        if args.restricted:
            write_logit_dump(args.dump_logits, labels, langs, block=clf.label_block(pairs))
        else:
            write_logit_dump(
                args.dump_logits, labels, langs, logits=clf.mask_logits(pairs),
                vocabulary=clf.backend_.vocabulary.tokens,
            )
        print(args.dump_logits)


def cmd_compare(args):
    mv = load_verbalizer_file(args.verbalizer)
    block, labels, langs = read_logit_dump(args.dump, mv, restricted=args.restricted)
    if args.target_language:
        langs = args.target_language
    sys.stdout.write(compare_strategies(block, labels, langs).format())


def cmd_sweep(args):
    m = _manifest(args)
    result = run_sweep(m)
    sys.stdout.write(result.report_txt.read_text(encoding="utf-8"))
    print(result.report_tsv)
    if result.failures:
        print(f"{len(result.failures)} run(s) failed; see {result.run_dir / 'failures.json'}", file=sys.stderr)
        return 1
    return 0


def cmd_report(args):
    paths = []
    for entry in args.rows:
        p = Path(entry)
        if p.is_dir():
            paths += sorted(
                f for f in p.glob("*.json") if f.name not in ("manifest.json", "failures.json")
            )
        else:
            paths.append(p)
    tsv, pretty = report(read_rows(paths))
    if args.output:
        Path(args.output).write_text(tsv, encoding="utf-8")
    sys.stdout.write(pretty if args.pretty else tsv)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare-strategies": cmd_compare,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args) or 0
    except CrossPromptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
