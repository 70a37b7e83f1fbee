import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crossprompt.errors import GenerationError, InputError
from crossprompt.prompt_core import LabeledPair
from crossprompt.synth import (
    SynthTaskSpec,
    build_vocabulary,
    derive_language,
    gold_label,
    generate_pretrain_corpus,
    generate_suite,
    generate_task,
    identity_language,
    make_pseudo_language,
    pseudo_languages,
    read_corpus,
    read_dataset,
    synth_verbalizers,
    write_suite,
)
from crossprompt.backend import Vocabulary

SMALL = SynthTaskSpec(n_train=300, n_dev=90, n_test=90, corpus_size=100)


def test_rule_examples():
    assert gold_label(["t3", "t7", "t9"], ["t3", "t9"]) == 0
    assert gold_label(["t3", "t7", "t9"], ["t1", "t2"]) == 1
    assert gold_label(["t3", "t7", "t9"], ["t9", "t3"]) == 2
    assert gold_label(["t3", "t7", "t9"], ["t3", "t1"]) == 2
    assert gold_label(["t3", "t7", "t9"], ["t3", "t1"], num_classes=2) == 1


@pytest.fixture(scope="module")
def pools():
    return generate_task(SMALL)


def test_balance_labels_and_disjointness(pools):
    counts = np.bincount([p.label for p in pools.train], minlength=3)
    assert counts.tolist() == [100, 100, 100]
    for pool in (pools.train, pools.dev, pools.test):
        assert all(gold_label(p.sentence_a, p.sentence_b) == p.label for p in pool)
    keys = [{(p.sentence_a, p.sentence_b) for p in pool} for pool in (pools.train, pools.dev, pools.test)]
    assert not keys[0] & keys[1] and not keys[0] & keys[2] and not keys[1] & keys[2]


def test_seed_determinism(pools):
    assert generate_task(SMALL) == pools
    other = generate_task(SynthTaskSpec(n_train=300, n_dev=90, n_test=90, corpus_size=100, seed=1))
    assert other.train != pools.train


def test_vocabulary_too_small():
    with pytest.raises(GenerationError):
        generate_task(SynthTaskSpec(vocab_size=60))


def test_vocabulary_has_exact_size():
    vocab = build_vocabulary(SynthTaskSpec())
    assert len(vocab) == 300 and len(set(vocab)) == 300
    assert len(Vocabulary(vocab)) == 300


def test_identity_language(pools):
    base = sorted({t for p in pools.test for t in p.sentence_a + p.sentence_b}, key=lambda t: int(t[1:]))
    spec_base = [f"w{i}" for i in range(int(base[-1][1:]) + 1)]
    same = derive_language(pools.test, identity_language(spec_base))
    assert [(p.sentence_a, p.sentence_b, p.label) for p in same] == [
        (p.sentence_a, p.sentence_b, p.label) for p in pools.test
    ]


def test_round_trip_and_zero_overlap(pools):
    langs = pseudo_languages(SMALL)
    l1 = langs[1]
    moved = derive_language(pools.test, l1)
    assert all(p.language == "L1" for p in moved)
    back = derive_language(moved, l1.inverse())
    assert [(p.sentence_a, p.sentence_b) for p in back] == [(p.sentence_a, p.sentence_b) for p in pools.test]
    src = {t for p in pools.test for t in p.sentence_a + p.sentence_b}
    tgt = {t for p in moved for t in p.sentence_a + p.sentence_b}
    assert not src & tgt


def test_partial_overlap_fraction():
    base = [f"w{i}" for i in range(40)]
    lang = make_pseudo_language("L1", base, 0.25, np.random.default_rng(0))
    assert sum(k == v for k, v in lang.mapping.items()) == 10


def test_token_outside_domain():
    lang = pseudo_languages(SMALL)[1]
    with pytest.raises(InputError):
        derive_language([LabeledPair("zzz", "w1", 2, "EN")], lang)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_labels_invariant_under_permutation(seed):
    rng = np.random.default_rng(seed)
    base = [f"w{i}" for i in range(12)]
    lang = make_pseudo_language("L1", base, float(rng.random()), rng)
    for _ in range(40):
        a = list(rng.choice(base, 5, replace=False))
        b = list(rng.choice(base, 2, replace=False))
        assert gold_label(a, b) == gold_label(lang.map_tokens(a), lang.map_tokens(b))


def test_corpus_counts():
    langs = pseudo_languages(SMALL)[:2]
    corpus = generate_pretrain_corpus(SMALL, langs, parallel=True, n_base=100)
    assert len(corpus) == 200
    assert corpus.languages.count("EN") == 100 and corpus.languages.count("L1") == 100
    # each base line appears once per language, as a translation
    mv = synth_verbalizers(["EN", "L1"])
    mapping = {**langs[1].mapping, **dict(zip(mv["EN"].tokens, mv["L1"].tokens))}
    for en_line, l1_line in zip(corpus.lines[0::2], corpus.lines[1::2]):
        assert tuple(mapping.get(t, t) for t in en_line) == l1_line
    independent = generate_pretrain_corpus(SMALL, langs, parallel=False, n_base=100)
    assert len(independent) == 200 and independent.groups is None


def test_non_parallel_marginals_match_under_permutation():
    spec = SynthTaskSpec(corpus_size=3000, cloze_fraction=0.0)
    langs = pseudo_languages(spec)[:2]
    corpus = generate_pretrain_corpus(spec, langs, parallel=False)
    en = [t for line, lang in zip(corpus.lines, corpus.languages) if lang == "EN" for t in line]
    l1 = [t for line, lang in zip(corpus.lines, corpus.languages) if lang == "L1" for t in line]
    inv = langs[1].inverse().mapping
    back = [inv.get(t, t) for t in l1]
    vocab = sorted(set(en) | set(back))
    p = np.array([en.count(t) for t in vocab]) / len(en)
    q = np.array([back.count(t) for t in vocab]) / len(back)
    assert 0.5 * np.abs(p - q).sum() < 0.05


def test_verbalizers():
    mv = synth_verbalizers(["EN", "L1", "L2", "L3"], 3)
    tokens = [t for lang in mv.languages for t in mv[lang].tokens]
    assert len(tokens) == 12 and len(set(tokens)) == 12
    assert mv["EN"].tokens == ("yes", "no", "maybe")
    assert synth_verbalizers(["EN"], 3) == synth_verbalizers(["EN"], 3)
    vocab = Vocabulary(build_vocabulary(SynthTaskSpec()))
    synth_verbalizers(SynthTaskSpec().language_codes).validate(lambda t: t in vocab)


def test_suite_files_round_trip(tmp_path):
    suite = generate_suite(SMALL)
    out = write_suite(suite, tmp_path / "data")
    assert read_dataset(out / "train.jsonl") == suite.pools.train
    assert read_dataset(out / "test.L2.jsonl") == suite.test_sets["L2"]
    corpus = read_corpus(out / "corpus.jsonl")
    assert corpus.lines == suite.corpus.lines and corpus.groups == suite.corpus.groups
