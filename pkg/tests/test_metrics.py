import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from memoir.metrics import bleu1, token_f1, tokenize


class TestTokenizer:
    def test_lowercase_punctuation_whitespace(self):
        assert tokenize("The RED, apple!") == ["the", "red", "apple"]

    def test_punctuation_splits_tokens(self):
        assert tokenize("3:45pm-ish") == ["3", "45pm", "ish"]

    def test_empty(self):
        assert tokenize("  ") == []


class TestTokenF1:
    def test_hand_computed_overlap(self):
        # P = 2/3, R = 2/2 => F1 = 2 * (2/3 * 1) / (2/3 + 1) = 0.8
        assert token_f1("the red apple", "red apple") == pytest.approx(0.8, abs=1e-12)

    def test_identity(self):
        assert token_f1("exact same words", "exact same words") == 1.0

    def test_disjoint(self):
        assert token_f1("x", "y") == 0.0

    def test_empty_cases(self):
        assert token_f1("", "") == 1.0
        assert token_f1("", "something") == 0.0
        assert token_f1("something", "") == 0.0

    def test_multiset_clipping(self):
        # "a a" vs "a": overlap is min(2,1)=1; P=1/2, R=1 => F1=2/3
        assert token_f1("a a", "a") == pytest.approx(2 / 3, abs=1e-12)

    @given(st.text(max_size=40), st.text(max_size=40))
    def test_bounded_and_symmetric_support(self, a, b):
        score = token_f1(a, b)
        assert 0.0 <= score <= 1.0
        # F1 is symmetric because precision and recall swap
        assert score == pytest.approx(token_f1(b, a), abs=1e-12)


class TestBleu1:
    def test_hand_computed_precision_no_penalty(self):
        # precision 2/3, candidate longer than reference => BP = 1
        assert bleu1("the red apple", "red apple") == pytest.approx(2 / 3, abs=1e-4)

    def test_hand_computed_brevity_penalty(self):
        # precision 1, BP = exp(1 - 2/1) = e^-1
        assert bleu1("red", "red apple") == pytest.approx(math.exp(-1), abs=1e-4)
        assert bleu1("red", "red apple") == pytest.approx(0.3679, abs=1e-4)

    def test_identity(self):
        assert bleu1("exact same words", "exact same words") == 1.0

    def test_disjoint(self):
        assert bleu1("x", "y") == 0.0

    def test_empty_cases(self):
        assert bleu1("", "") == 1.0
        assert bleu1("", "gold") == 0.0
        assert bleu1("prediction", "") == 0.0

    def test_clipping_repeated_tokens(self):
        # "a a a" vs "a": clipped count 1, precision 1/3, c=3 > r=1 => BP=1
        assert bleu1("a a a", "a") == pytest.approx(1 / 3, abs=1e-12)

    @given(st.text(max_size=40), st.text(max_size=40))
    def test_bounded(self, a, b):
        assert 0.0 <= bleu1(a, b) <= 1.0
