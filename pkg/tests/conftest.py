import numpy as np
import pytest

from ctckws.core import Alphabet, PosteriorMatrix

LETTERS = "abcd"


def random_alphabet(rng, size):
    """Alphabet of ``size`` symbols (blank included) with the blank at a random slot."""
    return Alphabet.from_chars(LETTERS[: size - 1], blank_index=int(rng.integers(0, size)))


def random_posteriors(rng, n_frames, alphabet, concentration=1.0):
    rows = rng.dirichlet(np.full(len(alphabet), concentration), size=n_frames)
    return PosteriorMatrix(rows.reshape(n_frames, len(alphabet)), alphabet)


def random_word(rng, alphabet, min_len=1, max_len=3):
    chars = [s for i, s in enumerate(alphabet.symbols) if i != alphabet.blank_index]
    n = int(rng.integers(min_len, max_len + 1))
    return "".join(rng.choice(chars, size=n))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_acceptance_results = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _acceptance_results.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance_results:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
