import random

import pytest
from helpers import dp_edit_distance
from hypothesis import given
from hypothesis import strategies as st

from odt_asr.ctc_eval import (ALPHABET, NUM_LABELS, character_error_rate, labels_to_text, levenshtein, normalise,
                              pooled_wer, text_to_labels, word_error_rate)
from odt_asr.errors import EmptyAfterNormalise, EmptyReference


@pytest.mark.parametrize("raw, clean", [("The  CAT!", "the cat"), ("hello", "hello"),
                                        ("  tab\tand\nnewline ", "tab and newline")])
def test_normalise(raw, clean):
    assert normalise(raw) == clean


def test_normalise_empty():
    with pytest.raises(EmptyAfterNormalise):
        normalise("???")


def test_label_mapping():
    assert NUM_LABELS == 28
    assert text_to_labels("a z") == [1, 27, 26]
    assert labels_to_text(range(1, 28)) == ALPHABET.strip()
    assert labels_to_text([27, 1, 27, 27, 2, 27]) == "a b"


@pytest.mark.parametrize("ref, hyp, wer", [("the cat sat", "the cat sat", 0.0),
                                           ("the cat sat", "the bat sat", 1 / 3),
                                           ("a b", "a x b y", 1.0),
                                           ("a", "b c d", 3.0)])
def test_word_error_rate(ref, hyp, wer):
    assert word_error_rate(ref, hyp) == pytest.approx(wer)


def test_empty_reference():
    with pytest.raises(EmptyReference):
        word_error_rate("", "x")


def test_empty_hypothesis_is_all_deletions():
    assert word_error_rate("one two three", "") == 1.0


def test_pooled_wer_weights_by_reference_length():
    pairs = [("a b c d", "a b c d"), ("x", "y")]
    assert pooled_wer(pairs) == pytest.approx(1 / 5)


def test_character_error_rate():
    assert character_error_rate("abc", "abd") == pytest.approx(1 / 3)


words = st.lists(st.sampled_from(["a", "b", "c", "dd"]), max_size=12)


@given(words, words)
def test_distance_is_symmetric(a, b):
    assert levenshtein(a, b) == levenshtein(b, a)


@given(words, words, words)
def test_triangle_inequality(a, b, c):
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


@given(st.lists(st.sampled_from(["a", "b"]), min_size=1, max_size=12))
def test_self_wer_is_zero(ws):
    assert word_error_rate(" ".join(ws), " ".join(ws)) == 0.0


def test_matches_dp_oracle():
    rng = random.Random(5)
    vocab = ["the", "cat", "sat", "on", "mat", "dog"]
    for _ in range(300):
        a = [rng.choice(vocab) for _ in range(rng.randint(0, 12))]
        b = [rng.choice(vocab) for _ in range(rng.randint(0, 12))]
        assert levenshtein(a, b) == dp_edit_distance(a, b)
