import json

import pytest
from hypothesis import given, settings, strategies as st

from factoid_forge.corpus import (
    Dataset,
    Example,
    bundled_corpus_path,
    check_overlap,
    default_wordlist,
    gen_arithmetic_nonfactoid,
    gen_kvr,
    gen_random_word_sequences,
    gen_templated_factoids,
    load_dataset,
    load_generic_corpus,
    save_dataset,
)
from factoid_forge.errors import CapacityError, ConfigError


# --- key-value recall ------------------------------------------------------


def test_kvr_paper_scale_unique_keys():
    d = gen_kvr(2000, key_len=8, val_len=8, seed=1)
    keys = [ex.subject for ex in d.examples]
    assert len(d) == 2000
    assert len(set(keys)) == 2000
    assert all(len(ex.subject) == 8 and len(ex.response) == 8 for ex in d.examples)
    assert d.examples[0].prompt == f"The value of key {d.examples[0].subject} is?"


def test_kvr_empty():
    assert len(gen_kvr(0, 8, 8, seed=1)) == 0


def test_kvr_determinism():
    a = gen_kvr(3, key_len=1, val_len=1, seed=7)
    b = gen_kvr(3, key_len=1, val_len=1, seed=7)
    assert a.examples == b.examples


def test_kvr_capacity():
    with pytest.raises(CapacityError):
        gen_kvr(37, key_len=1, val_len=1, seed=0)


def test_kvr_prompts_unique():
    d = gen_kvr(500, 8, 8, seed=3)
    assert len({ex.prompt for ex in d.examples}) == 500


# --- templated factoids ----------------------------------------------------


def test_templated_exhausts_grid():
    d = gen_templated_factoids(4, n_subjects=2, n_relations=2, seed=1)
    pairs = {(ex.subject, ex.relation) for ex in d.examples}
    assert len(pairs) == 4


def test_templated_popqa_shape():
    d = gen_templated_factoids(2000, n_subjects=500, n_relations=16, seed=5)
    assert len(d) == 2000
    assert len({ex.relation for ex in d.examples}) == 16
    assert len({(ex.subject, ex.relation) for ex in d.examples}) == 2000


def test_templated_prompt_injective_in_relation():
    d = gen_templated_factoids(60, n_subjects=6, n_relations=10, seed=2)
    by_subject = {}
    for ex in d.examples:
        by_subject.setdefault(ex.subject, []).append(ex.prompt)
    for prompts in by_subject.values():
        assert len(set(prompts)) == len(prompts)


def test_templated_capacity():
    with pytest.raises(CapacityError):
        gen_templated_factoids(5, n_subjects=2, n_relations=2, seed=1)


# --- random word sequences --------------------------------------------------


def test_random_words_response_repeats_prompt_suffix():
    d = gen_random_word_sequences(3, 50, default_wordlist(), seed=9)
    for ex in d.examples:
        assert ex.prompt.endswith(ex.response)
        assert len(ex.response.split()) == 50
    assert d.kind == "mix_random"


def test_random_words_degenerate_wordlist():
    d = gen_random_word_sequences(5, 1, ["a"], seed=0)
    assert [ex.response for ex in d.examples] == ["a"] * 5


def test_random_words_empty_wordlist():
    with pytest.raises(ConfigError):
        gen_random_word_sequences(1, 5, [], seed=0)


# --- generic corpus ---------------------------------------------------------


def test_generic_corpus_split(tmp_path):
    doc = " ".join(f"w{i}" for i in range(1, 101))
    path = tmp_path / "corpus.txt"
    path.write_text(doc + "\n")
    d = load_generic_corpus(path, n=1, words_per_passage=100, split_fraction=0.5, seed=0)
    ex = d.examples[0]
    assert ex.prompt == "Complete the following partial passage: " + " ".join(
        f"w{i}" for i in range(1, 51)
    )
    assert ex.response == " ".join(f"w{i}" for i in range(51, 101))
    assert d.kind == "mix_generic"


def test_generic_corpus_empty_request(tmp_path):
    path = tmp_path / "corpus.txt"
    path.write_text("one two three four\n")
    assert len(load_generic_corpus(path, 0, 2, 0.5, seed=0)) == 0


def test_generic_corpus_skips_short_docs_and_errors_on_capacity(tmp_path):
    path = tmp_path / "corpus.txt"
    path.write_text("a b c\n" + " ".join("x" for _ in range(20)) + "\n")
    # the 3-word doc is skipped at words_per_passage=10; only 2 passages remain
    with pytest.raises(CapacityError):
        load_generic_corpus(path, 3, 10, 0.5, seed=0)
    assert len(load_generic_corpus(path, 2, 10, 0.5, seed=0)) == 2


def test_generic_corpus_bad_split_fraction(tmp_path):
    path = tmp_path / "corpus.txt"
    path.write_text("a b c d\n")
    with pytest.raises(ConfigError):
        load_generic_corpus(path, 1, 2, 1.0, seed=0)


def test_generic_corpus_unreadable_path():
    with pytest.raises(OSError):
        load_generic_corpus("/nonexistent/corpus.txt", 1, 10, 0.5, seed=0)


def test_bundled_corpus_supports_paper_style_passages():
    d = load_generic_corpus(bundled_corpus_path(), n=100, words_per_passage=50,
                            split_fraction=0.5, seed=4)
    assert len(d) == 100
    assert all(len(ex.response.split()) == 25 for ex in d.examples)


# --- arithmetic non-factoids -------------------------------------------------


def test_arithmetic_example():
    d = gen_arithmetic_nonfactoid(50, max_operand=9, seed=1)
    ex = d.examples[0]
    a, b = ex.prompt.removeprefix("What is ").removesuffix("?").split(" plus ")
    assert ex.response == str(int(a) + int(b))
    assert d.kind == "nonfactoid"


def test_arithmetic_determinism():
    a = gen_arithmetic_nonfactoid(500, 99, seed=6)
    b = gen_arithmetic_nonfactoid(500, 99, seed=6)
    assert a.examples == b.examples


def test_arithmetic_all_sums_check_out():
    # brute-force re-evaluation of every generated pair
    d = gen_arithmetic_nonfactoid(500, 99, seed=6)
    for ex in d.examples:
        a, b = ex.prompt.removeprefix("What is ").removesuffix("?").split(" plus ")
        assert int(ex.response) == int(a) + int(b)


# --- overlap audit -----------------------------------------------------------


def test_overlap_disjoint_alphabets():
    facts = gen_kvr(100, 8, 8, seed=1)
    mix = Dataset(
        id="m", kind="mix_random",
        examples=(Example(prompt="ALPHA BETA", response="GAMMA"),),
        seed=0,
    )
    assert check_overlap(facts, mix).fraction == 0.0


def test_overlap_planted_collision_counts_once():
    facts = gen_kvr(100, 8, 8, seed=2)
    planted = facts.examples[17]
    mix = Dataset(
        id="m", kind="mix_generic",
        examples=(
            Example(prompt=f"some text with {planted.subject} inside",
                    response=f"and {planted.object} too"),
        ),
        seed=0,
    )
    report = check_overlap(facts, mix)
    assert report.fraction == pytest.approx(0.01)
    assert report.colliding_pairs[0][0] == (planted.subject, planted.object)


def test_overlap_self_is_total():
    facts = gen_kvr(25, 8, 8, seed=3)
    assert check_overlap(facts, facts).fraction == 1.0


def test_overlap_kvr_vs_english_corpus_is_zero():
    facts = gen_kvr(200, 8, 8, seed=4)
    mix = load_generic_corpus(bundled_corpus_path(), 120, 50, 0.5, seed=5)
    report = check_overlap(facts, mix)
    # independent exhaustive substring scan
    expected = 0
    for ex in facts.examples:
        for mex in mix.examples:
            text = mex.prompt + "\n" + mex.response
            if ex.subject in text and ex.object in text:
                expected += 1
                break
    assert report.fraction == expected / len(facts) == 0.0


def test_overlap_requires_factoids():
    words = gen_random_word_sequences(2, 3, ["a", "b"], seed=0)
    with pytest.raises(ConfigError):
        check_overlap(words, words)


# --- serialization -----------------------------------------------------------


def test_jsonl_round_trip_bit_exact(tmp_path):
    d = gen_kvr(20, 8, 8, seed=11, dataset_id="roundtrip")
    path = tmp_path / "d.jsonl"
    save_dataset(d, path)
    loaded = load_dataset(path)
    assert loaded == d
    manifest = json.loads((tmp_path / "d.manifest.json").read_text())
    assert manifest["kind"] == "factoid" and manifest["seed"] == 11


def test_jsonl_round_trip_without_triples(tmp_path):
    d = gen_random_word_sequences(4, 6, default_wordlist(), seed=12)
    path = tmp_path / "m.jsonl"
    save_dataset(d, path)
    assert load_dataset(path) == d


# --- generator purity property ----------------------------------------------


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(0, 30))
def test_generators_are_pure_functions_of_seed(seed, n):
    assert gen_kvr(n, 4, 4, seed).examples == gen_kvr(n, 4, 4, seed).examples
    wl = ["oak", "elm", "fir"]
    assert (
        gen_random_word_sequences(n, 3, wl, seed).examples
        == gen_random_word_sequences(n, 3, wl, seed).examples
    )
