import json

import pytest
from hypothesis import given, strategies as st

from crossprompt.errors import ConfigurationError, InputError, VerbalizerValidationError
from crossprompt.prompt_core import (
    MASK,
    LabeledPair,
    MultilingualVerbalizer,
    PromptTemplate,
    Variant,
    Verbalizer,
    build_pair_sequence,
    build_prompt,
    inference_verbalizer_for,
    load_bundled_templates,
    load_bundled_verbalizer,
    load_verbalizer_file,
    render,
)

XNLI_LANGS = {"EN", "AR", "BG", "DE", "EL", "ES", "FR", "HI", "RU", "SW", "TH", "TR", "UR", "VI", "ZH"}


@pytest.fixture(scope="module")
def xnli():
    return load_bundled_verbalizer("xnli")


@pytest.fixture(scope="module")
def words():
    return load_bundled_templates("xnli")


def prompt_text(variant, lang, words):
    pair = LabeledPair("A", "B", 0, lang)
    return render(build_prompt(pair, PromptTemplate(variant, words)).tokens)


# (variant, language) -> (prompt, inference verbalizer)
TABLE = [
    (Variant.ZHAO_FULL, "EN", "A . Question: B ? Answer: <mask> .", ("yes", "no", "maybe")),
    (Variant.ZHAO_FULL, "TR", "A . Soru: B ? Cevap: <mask> .", ("Evet", "hiçbir", "belki")),
    (Variant.NO_TEMPLATE_TRANSLATION, "EN", "A . Question: B ? Answer: <mask> .", ("yes", "no", "maybe")),
    (Variant.NO_TEMPLATE_TRANSLATION, "TR", "A . Question: B ? Answer: <mask> .", ("Evet", "hiçbir", "belki")),
    (Variant.NO_VERBALIZER_TRANSLATION, "EN", "A . Question: B ? Answer: <mask> .", ("yes", "no", "maybe")),
    (Variant.NO_VERBALIZER_TRANSLATION, "TR", "A . Soru: B ? Cevap: <mask> .", ("yes", "no", "maybe")),
    (Variant.NO_PROMPTING_WORDS, "EN", "A . B ? <mask> .", ("yes", "no", "maybe")),
    (Variant.NO_PROMPTING_WORDS, "TR", "A . B ? <mask> .", ("Evet", "hiçbir", "belki")),
    (Variant.UNIVERSAL, "EN", "A . B ? <mask> .", ("yes", "no", "maybe")),
    (Variant.UNIVERSAL, "TR", "A . B ? <mask> .", ("yes", "no", "maybe")),
]


@pytest.mark.parametrize("variant,lang,text,verb", TABLE)
def test_variant_rows(variant, lang, text, verb, xnli, words):
    assert prompt_text(variant, lang, words) == text
    assert inference_verbalizer_for(variant, lang, xnli).tokens == verb


def test_colon_is_its_own_token(words):
    ex = build_prompt(LabeledPair("A", "B", 0, "EN"), PromptTemplate(Variant.ZHAO_FULL, words))
    assert ex.tokens == ("A", ".", "Question", ":", "B", "?", "Answer", ":", MASK, ".")
    assert ex.mask_position == 8


def test_missing_prompting_words_names_language_and_variant(words):
    tmpl = PromptTemplate(Variant.ZHAO_FULL, words)
    with pytest.raises(ConfigurationError) as info:
        build_prompt(LabeledPair("A", "B", 0, "DE"), tmpl)
    assert "DE" in str(info.value) and "zhao_full" in str(info.value)
    # only EN words are needed without template translation
    en_only = PromptTemplate(Variant.NO_TEMPLATE_TRANSLATION, {"EN": words["EN"]})
    assert build_prompt(LabeledPair("A", "B", 0, "DE"), en_only).tokens[2] == "Question"


def test_prompt_free_variants_drop_words(words):
    assert PromptTemplate(Variant.UNIVERSAL, words).prompting_words == {}


def test_missing_target_verbalizer(xnli):
    small = xnli.restrict(["DE"])
    with pytest.raises(ConfigurationError):
        inference_verbalizer_for(Variant.ZHAO_FULL, "TR", small)
    assert inference_verbalizer_for(Variant.UNIVERSAL, "TR", small).language == "EN"


def test_bundled_xnli(xnli):
    assert set(xnli.languages) == XNLI_LANGS
    assert xnli.labels == ("entailment", "contradiction", "neutral")


def test_bundled_pawsx():
    mv = load_bundled_verbalizer("pawsx")
    expected = {
        "EN": ("yes", "no"), "DE": ("Ja", "Nein"), "ES": ("sí", "no"), "FR": ("Oui", "non"),
        "JA": ("はい", "ない"), "ZH": ("是", "否"), "KO": ("예", "아니"),
    }
    assert {lang: mv[lang].tokens for lang in mv.languages} == expected
    assert mv.labels == ("paraphrase", "non-paraphrase")


def test_duplicate_token_rejected(tmp_path):
    data = {
        "labels": ["a", "b"],
        "verbalizers": [{"language": "EN", "tokens": {"a": "yes", "b": "yes"}}],
    }
    path = tmp_path / "v.json"
    path.write_text(json.dumps(data))
    with pytest.raises(VerbalizerValidationError) as info:
        load_verbalizer_file(path)
    assert any("yes" in p for p in info.value.problems)


def test_unknown_label_and_missing_en(tmp_path):
    data = {"labels": ["a", "b"], "verbalizers": [{"language": "DE", "tokens": {"a": "x", "c": "y"}}]}
    path = tmp_path / "v.json"
    path.write_text(json.dumps(data))
    with pytest.raises(VerbalizerValidationError) as info:
        load_verbalizer_file(path)
    assert any("'c'" in p for p in info.value.problems)
    with pytest.raises(VerbalizerValidationError, match="source"):
        MultilingualVerbalizer(["a"], [Verbalizer("DE", ("x",))])


def test_backend_vocabulary_validation(xnli):
    vocab = {"yes", "no", "maybe"}
    xnli.restrict([]).validate(lambda t: t in vocab)
    with pytest.raises(VerbalizerValidationError) as info:
        xnli.restrict(["DE"]).validate(lambda t: t in vocab)
    assert len(info.value.problems) == 3


def test_multi_token_entry_rejected():
    with pytest.raises(VerbalizerValidationError):
        MultilingualVerbalizer(["a", "b"], [Verbalizer("EN", ("yes", "not sure"))])


def test_missing_file():
    with pytest.raises(InputError):
        load_verbalizer_file("/nonexistent/verbalizers.json")


def test_restrict_keeps_source(xnli):
    assert xnli.restrict(["TR"]).languages == ("EN", "TR")
    with pytest.raises(InputError):
        xnli.token_ids([], lambda t: 0)


def test_truncation_keeps_scaffold(words):
    pair = LabeledPair(["a"] * 10, ["b"] * 4, 1, "EN")
    ex = build_prompt(pair, PromptTemplate(Variant.ZHAO_FULL, words), max_length=14)
    assert len(ex.tokens) == 14
    assert ex.tokens.count("a") == 3 and ex.tokens.count("b") == 3
    assert ex.tokens[-2:] == (MASK, ".")
    seq = build_pair_sequence(pair, max_length=7)
    assert seq == ("a", "a", "a", "</s>", "b", "b", "b")


def test_pair_validation():
    with pytest.raises(InputError):
        LabeledPair("", "b", 0)
    with pytest.raises(InputError):
        LabeledPair("a", "b", -1)
    rec = LabeledPair("x y", "z", 2, "TR").to_record()
    assert LabeledPair.from_record(rec) == LabeledPair(("x", "y"), ("z",), 2, "TR")


sentences = st.lists(st.sampled_from(["w1", "w2", "w3", ".", "?"]), min_size=1, max_size=8)


@given(sentences, sentences, st.sampled_from(list(Variant)), st.sampled_from(["EN", "TR"]))
def test_single_mask_property(a, b, variant, lang):
    words = {"EN": ("Question", "Answer"), "TR": ("Soru", "Cevap")}
    ex = build_prompt(LabeledPair(a, b, 0, lang), PromptTemplate(variant, words))
    assert ex.tokens.count(MASK) == 1 and ex.tokens[ex.mask_position] == MASK
    assert ex == build_prompt(LabeledPair(a, b, 0, lang), PromptTemplate(variant, words))


@given(sentences, sentences, st.sampled_from(["EN", "TR", "DE"]))
def test_universal_equals_no_prompting_words(a, b, lang):
    pair = LabeledPair(a, b, 0, lang)
    assert build_prompt(pair, PromptTemplate(Variant.UNIVERSAL)).tokens == build_prompt(
        pair, PromptTemplate(Variant.NO_PROMPTING_WORDS)
    ).tokens


@given(sentences, sentences)
def test_source_language_two_layouts(a, b):
    words = {"EN": ("Question", "Answer")}
    pair = LabeledPair(a, b, 0, "EN")
    layouts = {build_prompt(pair, PromptTemplate(v, words)).tokens for v in Variant}
    assert len(layouts) == 2
