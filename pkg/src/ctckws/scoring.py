"""CTC label scoring, windowed keyword scoring and VAD scoring.

All lattice arithmetic runs in the natural-log domain. Unreachable states hold
``LOG_ZERO`` (negative infinity), which ``np.logaddexp`` propagates exactly.
The brute-force functions enumerate every symbol sequence in the linear
domain and exist only as test oracles.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass

import numpy as np

from .core import Alphabet, ExpandedLabel, PosteriorMatrix, expand_label, normalize_text

LOG_ZERO = -math.inf

BRUTE_FORCE_MAX_FRAMES = 8
BRUTE_FORCE_MAX_SYMBOLS = 5


class InstanceTooLargeError(ValueError):
    pass


class WindowError(ValueError):
    pass


@dataclass(frozen=True)
class Score:
    log_probability: float

    def linear(self) -> float:
        return math.exp(self.log_probability)

    @classmethod
    def from_linear(cls, p: float) -> Score:
        return cls(math.log(p) if p > 0 else LOG_ZERO)


@dataclass(frozen=True)
class ScoreLattice:
    """Full S x T table of log forward variables (debug view)."""

    alpha: np.ndarray
    label: ExpandedLabel


def _log1mexp(x):
    """log(1 - exp(x)) for x <= 0, accurate at both ends."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    with np.errstate(divide="ignore"):
        small = x > -math.log(2.0)
        out[small] = np.log(-np.expm1(x[small]))
        out[~small] = np.log1p(-np.exp(x[~small]))
    return out


def _log_complement(probs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log1p(-np.clip(probs, 0.0, 1.0))


def _skip_mask(states: tuple[int, ...], blank: int) -> np.ndarray:
    # s-2 -> s only onto a character that differs from the one two states back;
    # state 0 never skips since state 2 is always a blank.
    mask = np.zeros(len(states), dtype=bool)
    for s in range(2, len(states)):
        if states[s] != blank and states[s] != states[s - 2]:
            mask[s] = True
    return mask


def _forward(emit: np.ndarray, init: np.ndarray, skip: np.ndarray, keep_lattice: bool):
    """Run the log-domain forward recursion.

    ``emit`` is T x S log emission scores, ``init`` the log values at t=0.
    Returns the last column, plus the full lattice when requested.
    """
    n_frames, n_states = emit.shape
    alpha = init.copy()
    table = None
    if keep_lattice:
        table = np.full((n_states, n_frames), LOG_ZERO)
        table[:, 0] = alpha
    stay = np.empty(n_states)
    for t in range(1, n_frames):
        stay[:] = alpha
        stay[1:] = np.logaddexp(alpha[1:], alpha[:-1])
        stay[2:][skip[2:]] = np.logaddexp(stay[2:][skip[2:]], alpha[:-2][skip[2:]])
        alpha = stay + emit[t]
        if keep_lattice:
            table[:, t] = alpha
    return alpha, table


def _label_indices(text: str, alphabet: Alphabet) -> list[int]:
    return alphabet.encode(normalize_text(text))


def ctc_label_score(transcript: str, p: PosteriorMatrix) -> Score:
    """Total probability of ``transcript`` over all CTC alignments of ``p``."""
    indices = _label_indices(transcript, p.alphabet)
    logp = p.log_probs
    blank = p.alphabet.blank_index
    if not indices:
        return Score(float(logp[:, blank].sum()) if p.num_frames else 0.0)
    if p.num_frames == 0:
        return Score(LOG_ZERO)
    label = expand_label(transcript, p.alphabet)
    states = np.array(label.states)
    emit = logp[:, states]
    init = np.full(len(states), LOG_ZERO)
    init[:2] = emit[0, :2]
    alpha, _ = _forward(emit, init, _skip_mask(label.states, blank), False)
    return Score(float(np.logaddexp(alpha[-1], alpha[-2])))


def _keyword_emissions(label: ExpandedLabel, p: PosteriorMatrix) -> np.ndarray:
    states = np.array(label.states)
    emit = p.log_probs[:, states].copy()
    emit[:, 0] = _log_complement(p.probs[:, states[1]])
    emit[:, -1] = _log_complement(p.probs[:, states[-2]])
    return emit


def _keyword_forward(keyword: str, p: PosteriorMatrix, keep_lattice: bool):
    label = expand_label(keyword, p.alphabet)
    if p.num_frames == 0:
        return label, np.full(len(label), LOG_ZERO), None
    emit = _keyword_emissions(label, p)
    init = np.full(len(label), LOG_ZERO)
    init[0] = emit[0, 0]
    init[1] = emit[0, 1]
    skip = _skip_mask(label.states, label.blank_index)
    alpha, table = _forward(emit, init, skip, keep_lattice)
    return label, alpha, table


def score_keyword(keyword: str, p: PosteriorMatrix) -> Score:
    """Probability that the window matches ``[^k0]* k [^kn]*`` under CTC.

    The first and last lattice states absorb any symbol other than the
    keyword's first (resp. last) character, so the keyword may sit anywhere
    inside the window.
    """
    _, alpha, _ = _keyword_forward(keyword, p, keep_lattice=False)
    return Score(float(np.logaddexp(alpha[-1], alpha[-2])))


def keyword_lattice(keyword: str, p: PosteriorMatrix) -> ScoreLattice:
    label, alpha, table = _keyword_forward(keyword, p, keep_lattice=True)
    if table is None:
        table = np.full((len(label), 0), LOG_ZERO)
    return ScoreLattice(table, label)


def vad_score(p: PosteriorMatrix, start: int, length: int) -> Score:
    """Speech probability of a window: one minus the product of blank probabilities."""
    if length < 1 or start < 0 or start + length > p.num_frames:
        raise WindowError(
            f"window [{start}, {start + length}) does not fit in {p.num_frames} frames"
        )
    silence = float(p.log_probs[start:start + length, p.alphabet.blank_index].sum())
    return Score(float(_log1mexp(silence)))


# --- brute-force oracles -------------------------------------------------


def _check_size(p: PosteriorMatrix) -> None:
    if p.num_frames > BRUTE_FORCE_MAX_FRAMES or len(p.alphabet) > BRUTE_FORCE_MAX_SYMBOLS:
        raise InstanceTooLargeError(
            f"brute force limited to T <= {BRUTE_FORCE_MAX_FRAMES} and "
            f"|alphabet| <= {BRUTE_FORCE_MAX_SYMBOLS}, got T={p.num_frames}, "
            f"|alphabet|={len(p.alphabet)}"
        )


def _sequences(p: PosteriorMatrix):
    """Yield (symbol sequence, linear probability) for every sequence of length T."""
    probs = p.probs
    for seq in itertools.product(range(len(p.alphabet)), repeat=p.num_frames):
        prob = 1.0
        for t, sym in enumerate(seq):
            prob *= probs[t, sym]
        yield seq, prob


def collapse(seq, blank: int) -> list[int]:
    out = []
    prev = None
    for sym in seq:
        if sym != prev and sym != blank:
            out.append(sym)
        prev = sym
    return out


def brute_force_label_score(transcript: str, p: PosteriorMatrix) -> Score:
    _check_size(p)
    target = _label_indices(transcript, p.alphabet)
    blank = p.alphabet.blank_index
    total = 0.0
    for seq, prob in _sequences(p):
        if collapse(seq, blank) == target:
            total += prob
    return Score.from_linear(total)


def _keyword_regex(keyword: list[int], blank: int) -> re.Pattern:
    def sym(i):
        return re.escape(chr(0x41 + i))

    core = sym(keyword[0]) + "+"
    for prev, cur in zip(keyword, keyword[1:]):
        gap = "+" if prev == cur else "*"
        core += f"{sym(blank)}{gap}{sym(cur)}+"
    return re.compile(f"[^{sym(keyword[0])}]*{core}[^{sym(keyword[-1])}]*")


def brute_force_keyword_score(keyword: str, p: PosteriorMatrix) -> Score:
    """Sum the probability of every sequence matched by the keyword regex."""
    _check_size(p)
    indices = _label_indices(keyword, p.alphabet)
    if not indices:
        raise ValueError("keyword must be non-empty")
    pattern = _keyword_regex(indices, p.alphabet.blank_index)
    total = 0.0
    for seq, prob in _sequences(p):
        if pattern.fullmatch("".join(chr(0x41 + s) for s in seq)):
            total += prob
    return Score.from_linear(total)
