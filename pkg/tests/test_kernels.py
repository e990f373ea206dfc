import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spdlab import _kernels

py = _kernels.python
cy = _kernels.compiled

needs_compiled = pytest.mark.skipif(cy is None, reason="compiled kernels not built")

probs_st = arrays(np.float64, st.integers(1, 24), elements=st.floats(0.0, 1.0)).filter(lambda a: a.sum() > 1e-6)
tokens_st = st.lists(st.integers(0, 4), max_size=40)


def normalized(a):
    return a / a.sum()


def test_backend_name():
    assert _kernels.BACKEND in ("cython", "python")


@needs_compiled
@settings(max_examples=200)
@given(probs_st, st.floats(0.01, 1.0))
def test_top_p_identical(p, top):
    p = normalized(p)
    assert py.top_p_filter(p, top).tobytes() == cy.top_p_filter(p, top).tobytes()


@needs_compiled
@settings(max_examples=200)
@given(st.integers(1, 24).flatmap(lambda k: st.tuples(*[arrays(np.float64, k, elements=st.floats(0.01, 1.0))] * 2)))
def test_residual_identical(pair):
    a, b = map(normalized, pair)
    d1, m1 = py.residual(a, b)
    d2, m2 = cy.residual(a, b)
    assert d1.tobytes() == d2.tobytes() and m1 == m2


@needs_compiled
@settings(max_examples=200)
@given(probs_st, st.floats(0.0, 1.0, exclude_max=True))
def test_sample_index_identical(p, u):
    p = normalized(p)
    i = py.sample_index(p, u)
    assert i == cy.sample_index(p, u)
    assert p[i] > 0


@needs_compiled
@given(tokens_st, tokens_st)
def test_lcs_identical(a, b):
    assert py.lcs_length(a, b) == cy.lcs_length(np.array(a, np.int64), np.array(b, np.int64))


@needs_compiled
@given(tokens_st, st.integers(1, 6))
def test_suffix_match_identical(toks, order):
    assert py.suffix_match(toks, order) == cy.suffix_match(np.array(toks, np.int64), order)


def test_suffix_match_prefers_most_recent():
    # suffix "1 2" occurs at 0 and 3; the later one is followed by 9
    assert py.suffix_match([1, 2, 7, 1, 2, 9, 1, 2], 2) == (5, 2)
    assert py.suffix_match([1, 2, 3], 2) == (-1, 0)
