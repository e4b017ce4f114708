import numpy as np
import pytest
from hypothesis import given, strategies as st

from rfcw.studies import random_chain, richardson_limit, study_secular


@given(st.floats(-5, 5), st.floats(0.5, 3), st.floats(0.1, 0.9))
def test_richardson_limit_is_exact_for_geometric_increments(limit, c, q):
    seq = [limit - c * q ** k for k in range(5)]
    assert richardson_limit(seq) == pytest.approx(limit, abs=1e-9)


def test_richardson_limit_falls_back_to_last_term():
    assert richardson_limit([1.0, 2.0]) == 2.0
    assert richardson_limit([1.0, 2.0, 4.0]) == 4.0  # growing increments


@given(st.integers(0, 10_000), st.integers(2, 80))
def test_random_chain_is_connected_and_substochastic(seed, n):
    ch = random_chain(np.random.default_rng(seed), n)
    assert ch.check_substochastic() <= 1e-12
    from scipy.sparse.csgraph import connected_components
    from scipy.sparse import coo_matrix
    adj = coo_matrix((np.ones(ch.n_edges), (ch.edges[:, 0], ch.edges[:, 1])), shape=(n, n))
    assert connected_components(adj, directed=False)[0] == 1


def test_secular_study_is_deterministic():
    a = study_secular(instances=20, seed=1)
    b = study_secular(instances=20, seed=1)
    assert a.passed and a.data == b.data
    assert a.line().startswith("[PASS] 8 ")
