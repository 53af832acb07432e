import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_alphabet, random_posteriors, random_word
from ctckws.core import Alphabet, InvalidKeywordError, PosteriorMatrix, expand_label
from ctckws.scoring import (
    LOG_ZERO,
    InstanceTooLargeError,
    Score,
    WindowError,
    brute_force_keyword_score,
    brute_force_label_score,
    collapse,
    ctc_label_score,
    keyword_lattice,
    score_keyword,
    vad_score,
)


def literal_keyword_score(keyword, p):
    """Line-by-line linear-domain transcription of the keyword scoring pseudo-code (1-based)."""
    l = [None] + list(expand_label(keyword, p.alphabet).states)
    P = p.probs.T  # symbols x frames, 0-based columns
    eps = p.alphabet.blank_index
    S, T = len(l) - 1, P.shape[1]
    alpha = np.zeros((S + 1, T + 1))
    alpha[1, 1] = 1 - P[l[2], 0]
    alpha[2, 1] = P[l[2], 0]
    for t in range(2, T + 1):
        for s in range(1, S + 1):
            if s == 1:
                q = 1 - P[l[2], t - 1]
            elif s == S:
                q = 1 - P[l[S - 1], t - 1]
            else:
                q = P[l[s], t - 1]
            if s > 2 and l[s] != l[s - 2] and l[s] != eps:
                alpha[s, t] = q * (alpha[s, t - 1] + alpha[s - 1, t - 1] + alpha[s - 2, t - 1])
            elif s > 1:
                alpha[s, t] = q * (alpha[s, t - 1] + alpha[s - 1, t - 1])
            else:
                alpha[s, t] = q * alpha[s, t - 1]
    return alpha[S, T] + alpha[S - 1, T]


def uniform(alphabet, n_frames):
    return PosteriorMatrix(np.full((n_frames, len(alphabet)), 1.0 / len(alphabet)), alphabet)


class TestCtcLabelScore:
    def test_single_alignment(self):
        p = PosteriorMatrix([[0.6, 0.4]], Alphabet.from_chars("a"))
        assert ctc_label_score("a", p).linear() == pytest.approx(0.6, rel=1e-12)

    def test_three_alignments(self):
        # aa, a-, -a each 0.25
        p = uniform(Alphabet.from_chars("a"), 2)
        assert ctc_label_score("a", p).linear() == pytest.approx(0.75, rel=1e-12)

    def test_empty_label_is_product_of_blanks(self):
        p = PosteriorMatrix([[0.6, 0.4], [0.5, 0.5]], Alphabet.from_chars("a"))
        assert ctc_label_score("", p).linear() == pytest.approx(0.2, rel=1e-12)

    def test_too_short_is_log_zero(self):
        p = uniform(Alphabet.from_chars("a"), 2)
        assert ctc_label_score("aa", p).log_probability == LOG_ZERO
        assert ctc_label_score("a", uniform(Alphabet.from_chars("a"), 0)).log_probability == LOG_ZERO

    def test_repeat_needs_blank(self):
        p = uniform(Alphabet.from_chars("a"), 3)
        # a-a is the only alignment of "aa" in 3 frames
        assert ctc_label_score("aa", p).linear() == pytest.approx(1 / 8, rel=1e-12)

    def test_unknown_character(self):
        with pytest.raises(InvalidKeywordError):
            ctc_label_score("x", uniform(Alphabet.from_chars("a"), 2))


class TestScoreKeyword:
    def test_single_frame(self):
        p = PosteriorMatrix([[0.6, 0.4]], Alphabet.from_chars("a"))
        assert score_keyword("a", p).linear() == pytest.approx(0.6, rel=1e-12)
        lat = keyword_lattice("a", p)
        assert math.exp(lat.alpha[1, 0]) == pytest.approx(0.6)
        assert lat.alpha[2, 0] == LOG_ZERO

    def test_worked_example(self):
        # accepted: aa ab a- ba -a -> .25 + .15 + .1 + .15 + .1
        p = PosteriorMatrix([[0.5, 0.3, 0.2]] * 2, Alphabet.from_chars("ab"))
        assert abs(score_keyword("a", p).linear() - 0.75) <= 1e-12

    def test_first_char_never_emitted(self, rng):
        a = Alphabet.from_chars("ab")
        rows = rng.dirichlet(np.ones(3), size=6)
        rows[:, 0] = 0.0
        rows /= rows.sum(axis=1, keepdims=True)
        assert score_keyword("ab", PosteriorMatrix(rows, a)).linear() == 0.0

    def test_contiguous_run_required(self):
        # accepted: aaa aa- a-- -aa -a- --a; a-a is not
        p = uniform(Alphabet.from_chars("a"), 3)
        assert score_keyword("a", p).linear() == pytest.approx(0.75, rel=1e-12)
        assert brute_force_keyword_score("a", p).linear() == pytest.approx(0.75, rel=1e-12)

    def test_no_frames(self):
        p = uniform(Alphabet.from_chars("a"), 0)
        assert score_keyword("a", p).linear() == 0.0
        assert brute_force_keyword_score("a", p).linear() == 0.0

    def test_empty_keyword_rejected(self):
        with pytest.raises(InvalidKeywordError):
            score_keyword("", uniform(Alphabet.from_chars("a"), 2))

    def test_matches_literal_pseudocode(self, rng):
        for _ in range(50):
            a = random_alphabet(rng, int(rng.integers(2, 5)))
            p = random_posteriors(rng, int(rng.integers(1, 40)), a)
            k = random_word(rng, a, 1, 4)
            expected = literal_keyword_score(k, p)
            assert score_keyword(k, p).linear() == pytest.approx(expected, rel=1e-9, abs=1e-300)

    def test_lattice_first_column(self, rng):
        a = Alphabet.from_chars("abc")
        p = random_posteriors(rng, 5, a)
        lat = keyword_lattice("cab", p)
        assert lat.alpha.shape == (7, 5)
        assert np.all(np.isneginf(lat.alpha[2:, 0]))
        assert np.all(lat.alpha <= 0.0)
        col = lat.alpha[:, -1]
        assert score_keyword("cab", p).log_probability == pytest.approx(np.logaddexp(col[-1], col[-2]))

    def test_long_window_is_finite(self):
        a = Alphabet.from_chars("ab")
        rows = np.tile([1e-30, 1e-30, 1 - 2e-30], (1000, 1))
        s = score_keyword("ab", PosteriorMatrix(rows, a)).log_probability
        assert math.isfinite(s)
        assert s < -100


class TestVadScore:
    def test_pure_silence(self):
        p = PosteriorMatrix([[0.0, 1.0]] * 4, Alphabet.from_chars("a"))
        assert vad_score(p, 0, 4).linear() == 0.0

    def test_complement_of_product(self):
        p = PosteriorMatrix([[0.1, 0.9], [0.2, 0.8]], Alphabet.from_chars("a"))
        assert vad_score(p, 0, 2).linear() == pytest.approx(0.28, rel=1e-12)

    def test_zero_blank_frame_means_speech(self):
        p = PosteriorMatrix([[0.1, 0.9], [1.0, 0.0], [0.2, 0.8]], Alphabet.from_chars("a"))
        assert vad_score(p, 0, 3).linear() == 1.0

    @pytest.mark.parametrize("start,length", [(-1, 2), (0, 0), (2, 2), (0, 4)])
    def test_window_out_of_range(self, start, length):
        p = uniform(Alphabet.from_chars("a"), 3)
        with pytest.raises(WindowError):
            vad_score(p, start, length)

    def test_monotone_in_blank(self, rng):
        a = Alphabet.from_chars("abc")
        for _ in range(100):
            rows = rng.dirichlet(np.ones(4), size=6)
            before = vad_score(PosteriorMatrix(rows, a), 1, 4).linear()
            i = int(rng.integers(1, 5))
            new_blank = rows[i, 3] + rng.uniform(0, 1 - rows[i, 3])
            rest = rows[i, :3]
            rows[i, :3] = rest / rest.sum() * (1 - new_blank) if rest.sum() > 0 else rest
            rows[i, 3] = new_blank
            assert vad_score(PosteriorMatrix(rows, a), 1, 4).linear() <= before + 1e-15


class TestOracles:
    def test_collapse(self):
        assert collapse([0, 0, 2, 0, 1, 1, 2, 1], blank=2) == [0, 0, 1, 1]

    def test_guard(self):
        with pytest.raises(InstanceTooLargeError):
            brute_force_label_score("a", uniform(Alphabet.from_chars("a"), 9))
        with pytest.raises(InstanceTooLargeError):
            brute_force_keyword_score("a", uniform(Alphabet.from_chars("abcde"), 2))

    def test_label_longer_than_frames(self):
        assert brute_force_label_score("aba", uniform(Alphabet.from_chars("ab"), 2)).linear() == 0.0

    def test_empty_label_counts_all_blank_only(self):
        p = PosteriorMatrix([[0.6, 0.4], [0.5, 0.5], [0.3, 0.7]], Alphabet.from_chars("a"))
        assert brute_force_label_score("", p).linear() == pytest.approx(0.4 * 0.5 * 0.7, rel=1e-12)

    @pytest.mark.parametrize(
        "rows,label",
        [([[0.6, 0.4]], "a"), ([[0.5, 0.5]] * 2, "a"), ([[0.6, 0.4], [0.5, 0.5]], "")],
    )
    def test_label_oracle_agrees_with_dp(self, rows, label):
        p = PosteriorMatrix(rows, Alphabet.from_chars("a"))
        assert brute_force_label_score(label, p).linear() == pytest.approx(
            ctc_label_score(label, p).linear(), rel=1e-12
        )


@st.composite
def scoring_instances(draw):
    size = draw(st.integers(2, 4))
    blank = draw(st.integers(0, size - 1))
    alphabet = Alphabet.from_chars("abc"[: size - 1], blank_index=blank)
    n_frames = draw(st.integers(0, 6))
    raw = draw(
        st.lists(
            st.lists(st.floats(0.01, 1.0), min_size=size, max_size=size),
            min_size=n_frames,
            max_size=n_frames,
        )
    )
    rows = np.array(raw).reshape(n_frames, size)
    if n_frames:
        rows /= rows.sum(axis=1, keepdims=True)
    word = draw(st.text(alphabet="abc"[: size - 1], min_size=1, max_size=3))
    return PosteriorMatrix(rows, alphabet), word


@settings(max_examples=150, deadline=None)
@given(scoring_instances())
def test_dp_matches_enumeration(instance):
    p, word = instance
    for dp, oracle in (
        (score_keyword, brute_force_keyword_score),
        (ctc_label_score, brute_force_label_score),
    ):
        got, want = dp(word, p).linear(), oracle(word, p).linear()
        assert abs(got - want) <= 1e-9 * want + 1e-300


@settings(max_examples=150, deadline=None)
@given(scoring_instances())
def test_keyword_bounds(instance):
    p, word = instance
    kw = score_keyword(word, p).linear()
    assert kw >= ctc_label_score(word, p).linear() - 1e-12
    first = p.alphabet.index(word[0])
    assert kw <= 1.0 - np.prod(1.0 - p.probs[:, first]) + 1e-12
    assert 0.0 <= kw <= 1.0


@settings(max_examples=100, deadline=None)
@given(scoring_instances())
def test_vad_identity(instance):
    p, _ = instance
    if p.num_frames == 0:
        return
    speech = vad_score(p, 0, p.num_frames).linear()
    assert abs(speech - (1.0 - ctc_label_score("", p).linear())) <= 1e-12


def test_score_from_linear():
    assert Score.from_linear(0.0).log_probability == LOG_ZERO
    assert Score.from_linear(0.5).linear() == pytest.approx(0.5)
