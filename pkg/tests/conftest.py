from pathlib import Path

import pytest

from kbgrammar import DATA_DIR
from kbgrammar.candexpr import load_candidates
from kbgrammar.constrain import Constraints
from kbgrammar.grammar import Vocabulary, load_grammar
from kbgrammar.learn import MiniKB, Setup

FIXTURES = Path(__file__).parent / "fixtures"
G0 = DATA_DIR / "g0"


def load_g0():
    vocab = Vocabulary.load(G0 / "g0.vocab")
    g = load_grammar(G0 / "g0.gdsl", vocab)
    tries = load_candidates(G0 / "g0.cand", vocab).for_domain("default")
    return g, Constraints(g, tries)


def load_kqa():
    vocab = Vocabulary.load(FIXTURES / "kqa_mini.vocab")
    g = load_grammar(FIXTURES / "kqa_mini.gdsl", vocab)
    tries = load_candidates(FIXTURES / "kqa_mini.cand", vocab).for_domain("default")
    return g, Constraints(g, tries)


@pytest.fixture(scope="session")
def g0():
    return load_g0()[0]


@pytest.fixture(scope="session")
def g0ctx():
    return load_g0()[1]


@pytest.fixture(scope="session")
def kqa():
    return load_kqa()[0]


@pytest.fixture(scope="session")
def kqactx():
    return load_kqa()[1]


@pytest.fixture(scope="session")
def kb():
    return MiniKB.load(G0 / "g0.kb")


@pytest.fixture()
def setup(g0ctx, kb):
    return Setup(g0ctx, kb)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
