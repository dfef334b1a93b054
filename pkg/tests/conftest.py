import pytest

from chunkstore import FlatIndex, build_datastore, train_toy
from chunkstore.synth import two_domain_corpus


@pytest.fixture(scope="session")
def small_corpus():
    return two_domain_corpus(seed=0, n_out=600, n_in_train=300, n_in_test=40)


@pytest.fixture(scope="session")
def toy_model(small_corpus):
    return train_toy(small_corpus.out_domain, seed=0, vocab_size=len(small_corpus.vocab))


@pytest.fixture(scope="session")
def small_ds(toy_model, small_corpus):
    return build_datastore(toy_model, small_corpus.in_train, c=4, d_key=16, d_cache=8)


@pytest.fixture(scope="session")
def small_index(small_ds):
    return FlatIndex(small_ds.keys)


@pytest.fixture(scope="session")
def test_sources(small_corpus):
    return [p.source for p in small_corpus.in_test]


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record a one-line verdict for an acceptance criterion."""
    def _report(number: int, ok: bool, text: str, soft: bool = False):
        tag = "PASS" if ok else ("SOFT-FAIL" if soft else "FAIL")
        ACCEPTANCE_LINES.append(f"[criterion {number:>2}] {tag}: {text}")
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
