import numpy as np
import pytest

from spdlab.models import TransformerConfig, init_transformer, random_table_lm


def tiny_transformer(vocab=12, d_model=16, n_layers=1, n_heads=2, d_ff=32, max_context=64, seed=0):
    return init_transformer(TransformerConfig(vocab, d_model, n_layers, n_heads, d_ff, max_context, seed))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def table_pair():
    rng = np.random.default_rng(7)
    return random_table_lm(rng, 8, order=1), random_table_lm(rng, 8, order=1)


# acceptance criteria record here; the summary prints one line each
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] C{n:<2} {name}: {detail}")
