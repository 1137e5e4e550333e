"""Unit tests for the scoring primitives."""

import random

import pytest

from promptzip.textmetrics import (
    exact_match,
    extract_numeric_answer,
    qa_normalize,
    rouge_l,
    rouge_n,
    token_f1,
    tokenize_words,
)


def test_tokenize_basic():
    assert tokenize_words("The cat sat.") == ["the", "cat", "sat"]
    assert tokenize_words("") == []
    assert tokenize_words("A  B\tC") == ["a", "b", "c"]


def test_tokenize_strips_punctuation_and_underscores():
    assert tokenize_words("hello, world! it's_fine") == ["hello", "world", "it", "s", "fine"]


def test_rouge_n_identity_and_disjoint():
    tokens = ["a", "b", "c"]
    triple = rouge_n(tokens, tokens, 1)
    assert (triple.precision, triple.recall, triple.f1) == (1.0, 1.0, 1.0)
    zero = rouge_n(["x", "y"], ["a", "b"], 1)
    assert (zero.precision, zero.recall, zero.f1) == (0.0, 0.0, 0.0)


def test_rouge_1_partial_overlap():
    # multiset count: {the, cat} overlap -> 2/3 each way
    triple = rouge_n(["the", "cat", "sat"], ["the", "cat", "ate"], 1)
    assert triple.precision == pytest.approx(2 / 3)
    assert triple.recall == pytest.approx(2 / 3)
    assert triple.f1 == pytest.approx(2 / 3)


def test_rouge_n_clips_repeated_ngrams():
    triple = rouge_n(["a", "a", "a"], ["a"], 1)
    assert triple.precision == pytest.approx(1 / 3)
    assert triple.recall == pytest.approx(1.0)


def test_rouge_n_empty_sides_and_short_candidates():
    assert rouge_n([], ["a"], 1).f1 == 0.0
    assert rouge_n(["a"], [], 1).f1 == 0.0
    # candidate shorter than n has no n-grams
    assert rouge_n(["a"], ["a", "b"], 2).f1 == 0.0


def test_rouge_n_rejects_bad_n():
    with pytest.raises(ValueError):
        rouge_n(["a"], ["a"], 0)


def test_rouge_l_identity():
    tokens = ["u", "v", "w", "x", "y"]
    assert rouge_l(tokens, tokens).f1 == pytest.approx(1.0)


def test_rouge_l_subsequence_case():
    # LCS("abcd", "bd") = 2 -> p=0.5, r=1.0, f1=2/3
    triple = rouge_l(["a", "b", "c", "d"], ["b", "d"])
    assert triple.precision == pytest.approx(0.5)
    assert triple.recall == pytest.approx(1.0)
    assert triple.f1 == pytest.approx(2 / 3)


def test_rouge_swaps_precision_and_recall():
    rng = random.Random(11)
    alphabet = list("abcdef")
    for _ in range(200):
        x = [rng.choice(alphabet) for _ in range(rng.randint(1, 10))]
        y = [rng.choice(alphabet) for _ in range(rng.randint(1, 10))]
        fwd = rouge_l(x, y)
        rev = rouge_l(y, x)
        assert fwd.precision == pytest.approx(rev.recall)
        assert fwd.recall == pytest.approx(rev.precision)
        n_fwd = rouge_n(x, y, 2)
        n_rev = rouge_n(y, x, 2)
        assert n_fwd.precision == pytest.approx(n_rev.recall)
        assert n_fwd.recall == pytest.approx(n_rev.precision)


def test_qa_normalize():
    assert qa_normalize("The Eiffel Tower!") == "eiffel tower"
    assert qa_normalize("") == ""
    assert qa_normalize("an  apple") == "apple"
    assert qa_normalize("A man, a plan.") == "man plan"


def test_exact_match():
    assert exact_match("The Answer", "the answer") == 1
    assert exact_match("Paris", "London") == 0
    assert exact_match("a cat", "cat") == 1


def test_token_f1():
    assert token_f1("same words here", "same words here") == pytest.approx(1.0)
    assert token_f1("aaa bbb", "ccc ddd") == 0.0
    # after article drop: ["red","fox"] vs ["red","fox","runs"]
    assert token_f1("the red fox", "red fox runs") == pytest.approx(0.8)
    assert token_f1("", "something") == 0.0


def test_em_implies_f1_one():
    rng = random.Random(5)
    vocab = ["alpha", "beta", "gamma", "the", "an", "delta"]
    for _ in range(300):
        words = [rng.choice(vocab) for _ in range(rng.randint(1, 6))]
        pred = " ".join(words)
        ref = " ".join(words).upper()
        if exact_match(pred, ref) == 1 and qa_normalize(pred):
            assert token_f1(pred, ref) == pytest.approx(1.0)


def test_extract_numeric_answer_markers():
    assert extract_numeric_answer("blah blah. The answer is: 3000") == 3000
    assert extract_numeric_answer("so it must be. The answer is 225.") == 225
    assert extract_numeric_answer("no digits here") is None


def test_extract_numeric_answer_last_marker_wins():
    text = "The answer is: 5. Wait, let me redo this. The answer is: 7"
    assert extract_numeric_answer(text) == 7


def test_extract_numeric_answer_takes_last_number_after_marker():
    assert extract_numeric_answer("The answer is 200 + 25 = 225") == 225


def test_extract_numeric_answer_comma_and_decimal():
    assert extract_numeric_answer("The answer is: 1,234.5") == 1234.5
    assert extract_numeric_answer("The answer is: -12") == -12


def test_extract_numeric_answer_fallback_without_marker():
    assert extract_numeric_answer("we compute 15 then 30 and stop") == 30


def test_extract_numeric_answer_marker_without_number():
    assert extract_numeric_answer("The answer is: unclear") is None


def test_extract_idempotent_under_text_suffix():
    base = "working... The answer is: 42"
    value = extract_numeric_answer(base)
    assert extract_numeric_answer(base + " thanks for asking!") == value
    assert extract_numeric_answer(base + "\n(no more digits)") == value
