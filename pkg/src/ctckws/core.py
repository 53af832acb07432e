"""Alphabet, posterior matrices, label expansion and the posterior file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BLANK = "\x00"
DEFAULT_CHARS = "abcdefghijklmnopqrstuvwxyz '"

POSTERIOR_MAGIC = b"CTCP"
POSTERIOR_VERSION = 1
ROW_SUM_TOLERANCE = 1e-5


class CtcKwsError(Exception):
    """Base class for all package errors."""


class InvalidKeywordError(CtcKwsError, ValueError):
    pass


class PosteriorFormatError(CtcKwsError):
    """A posterior file could not be decoded."""


class BadMagicError(PosteriorFormatError):
    pass


class VersionMismatchError(PosteriorFormatError):
    pass


class TruncatedPayloadError(PosteriorFormatError):
    pass


class RowLengthMismatchError(PosteriorFormatError):
    pass


@dataclass(frozen=True)
class Alphabet:
    """Ordered output symbols of the acoustic model, including the CTC blank.

    The blank is stored as ``BLANK`` (NUL) at ``blank_index``; it never occurs
    in user text.
    """

    symbols: tuple[str, ...]
    blank_index: int

    def __post_init__(self):
        symbols = tuple(self.symbols)
        object.__setattr__(self, "symbols", symbols)
        if len(set(symbols)) != len(symbols):
            raise ValueError("alphabet symbols must be unique")
        if any(len(s) != 1 for s in symbols):
            raise ValueError("alphabet symbols must be single code points")
        if not 0 <= self.blank_index < len(symbols):
            raise ValueError(f"blank_index {self.blank_index} out of range")
        if symbols[self.blank_index] != BLANK:
            raise ValueError("symbol at blank_index must be the blank marker")
        object.__setattr__(self, "_lookup", {s: i for i, s in enumerate(symbols)})

    @classmethod
    def from_chars(cls, chars: str, blank_index: int | None = None) -> Alphabet:
        """Build an alphabet from user characters, inserting the blank.

        By default the blank goes last.
        """
        if BLANK in chars:
            raise ValueError("chars must not contain the blank marker")
        syms = list(chars)
        if blank_index is None:
            blank_index = len(syms)
        syms.insert(blank_index, BLANK)
        return cls(tuple(syms), blank_index)

    @classmethod
    def default(cls) -> Alphabet:
        return cls.from_chars(DEFAULT_CHARS)

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def space_index(self) -> int | None:
        return self._lookup.get(" ")

    def index(self, ch: str) -> int:
        if ch == BLANK or ch not in self._lookup:
            raise InvalidKeywordError(f"character {ch!r} is not in the alphabet")
        return self._lookup[ch]

    def encode(self, text: str) -> list[int]:
        return [self.index(ch) for ch in text]

    def display(self, i: int) -> str:
        return "ε" if i == self.blank_index else self.symbols[i]

    def to_string(self) -> str:
        return "".join(self.symbols)


def normalize_text(text: str) -> str:
    return text.lower()


@dataclass(frozen=True)
class PosteriorMatrix:
    """Per-frame distributions over an alphabet (T rows by |alphabet| columns).

    Values are held as float64 in the linear domain; ``log_probs`` gives the
    natural-log view used by the scorers.
    """

    probs: np.ndarray
    alphabet: Alphabet
    frame_duration: float = 0.03
    _log: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64)
        if probs.ndim == 1 and probs.size == 0:
            probs = probs.reshape(0, len(self.alphabet))
        if probs.ndim != 2:
            raise ValueError("posterior matrix must be two-dimensional")
        if probs.shape[1] != len(self.alphabet):
            raise RowLengthMismatchError(
                f"rows have {probs.shape[1]} entries, alphabet has {len(self.alphabet)}"
            )
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def num_frames(self) -> int:
        return self.probs.shape[0]

    def __len__(self) -> int:
        return self.num_frames

    @property
    def log_probs(self) -> np.ndarray:
        if self._log is None:
            with np.errstate(divide="ignore"):
                logp = np.log(self.probs)
            logp.setflags(write=False)
            object.__setattr__(self, "_log", logp)
        return self._log

    def window(self, start: int, length: int) -> PosteriorMatrix:
        return PosteriorMatrix(self.probs[start:start + length], self.alphabet, self.frame_duration)

    def __eq__(self, other):
        if not isinstance(other, PosteriorMatrix):
            return NotImplemented
        return (
            self.alphabet == other.alphabet
            and self.frame_duration == other.frame_duration
            and np.array_equal(self.probs, other.probs)
        )

    __hash__ = None


@dataclass(frozen=True)
class ExpandedLabel:
    """Keyword states with the blank interleaved: ε k1 ε k2 ... kn ε."""

    states: tuple[int, ...]
    blank_index: int

    def __len__(self) -> int:
        return len(self.states)


def expand_label(keyword: str, alphabet: Alphabet) -> ExpandedLabel:
    indices = alphabet.encode(normalize_text(keyword))
    if not indices:
        raise InvalidKeywordError("keyword must be non-empty")
    b = alphabet.blank_index
    states = [b]
    for i in indices:
        states += [i, b]
    return ExpandedLabel(tuple(states), b)


@dataclass
class RowProblem:
    row: int
    row_sum: float
    reason: str


@dataclass
class ValidationReport:
    ok: bool
    problems: list[RowProblem]

    def __bool__(self) -> bool:
        return self.ok


def validate_posteriors(p: PosteriorMatrix, tol: float = ROW_SUM_TOLERANCE) -> ValidationReport:
    problems = []
    sums = p.probs.sum(axis=1)
    for r in range(p.num_frames):
        row = p.probs[r]
        reasons = []
        if not np.all(np.isfinite(row)) or row.min() < 0.0 or row.max() > 1.0:
            reasons.append("entry outside [0, 1]")
        if not abs(sums[r] - 1.0) <= tol:
            reasons.append("row does not sum to 1")
        if reasons:
            problems.append(RowProblem(r, float(sums[r]), "; ".join(reasons)))
    return ValidationReport(not problems, problems)


# Posterior file layout (little-endian):
#   "CTCP" | u32 version | u32 T | u32 A | u32 alphabet byte length | alphabet utf-8
#   | u32 blank index | f64 frame duration | T*A float32, frame-major
_HEADER = struct.Struct("<4sIIII")


def posteriors_to_bytes(p: PosteriorMatrix) -> bytes:
    alpha = p.alphabet.to_string().encode("utf-8")
    parts = [
        _HEADER.pack(POSTERIOR_MAGIC, POSTERIOR_VERSION, p.num_frames, len(p.alphabet), len(alpha)),
        alpha,
        struct.pack("<Id", p.alphabet.blank_index, p.frame_duration),
        np.ascontiguousarray(p.probs, dtype="<f4").tobytes(),
    ]
    return b"".join(parts)


def posteriors_from_bytes(data: bytes) -> PosteriorMatrix:
    if len(data) < 4 or data[:4] != POSTERIOR_MAGIC:
        raise BadMagicError("not a posterior file (bad magic)")
    if len(data) < _HEADER.size:
        raise TruncatedPayloadError("header is truncated")
    _, version, n_frames, width, alpha_len = _HEADER.unpack_from(data)
    if version != POSTERIOR_VERSION:
        raise VersionMismatchError(f"unsupported posterior file version {version}")
    off = _HEADER.size
    if len(data) < off + alpha_len + 12:
        raise TruncatedPayloadError("alphabet block is truncated")
    chars = data[off:off + alpha_len].decode("utf-8")
    off += alpha_len
    blank_index, frame_duration = struct.unpack_from("<Id", data, off)
    off += 12
    if len(chars) != width:
        raise RowLengthMismatchError(
            f"header declares rows of {width} entries but the alphabet has {len(chars)} symbols"
        )
    alphabet = Alphabet(tuple(chars), blank_index)
    expected = n_frames * width * 4
    payload = data[off:]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"declared {n_frames} frames but payload holds {len(payload) // 4} of {n_frames * width} values"
        )
    if len(payload) > expected:
        raise PosteriorFormatError(f"{len(payload) - expected} trailing bytes after payload")
    probs = np.frombuffer(payload, dtype="<f4").reshape(n_frames, width)
    return PosteriorMatrix(probs, alphabet, frame_duration)


def write_posteriors(p: PosteriorMatrix, path: str | Path) -> None:
    Path(path).write_bytes(posteriors_to_bytes(p))


def read_posteriors(path: str | Path) -> PosteriorMatrix:
    return posteriors_from_bytes(Path(path).read_bytes())

