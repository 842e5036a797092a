import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spingarch.graph import (DisconnectedGraphError, GraphError, SelfLoopError, SiteIndexError,
                             from_edge_list, torus_grid, zeta_bounds)


def test_torus_degrees_and_edge_count():
    g = torus_grid(4, 5)
    assert g.n_sites == 20
    assert np.all(g.degree == 4)
    assert g.n_edges == 40


def test_torus_neighbors_wrap():
    g = torus_grid(3, 4)
    # site 0 = (row 0, col 0): right 1, left 3, down 4, up 8
    assert list(g.neighbors(0)) == [1, 3, 4, 8]


def test_torus_too_small():
    with pytest.raises(GraphError):
        torus_grid(2, 5)


def test_zeta_bounds_torus():
    b = zeta_bounds(torus_grid(20, 20))
    assert b.upper == pytest.approx(0.25)
    assert b.lower == pytest.approx(-0.25)
    assert b.contains(0.245) and not b.contains(0.2501)


def test_zeta_bounds_odd_torus_asymmetric():
    # a 5x5 torus is not bipartite, so the smallest eigenvalue is above -4
    b = zeta_bounds(torus_grid(5, 5))
    assert b.upper == pytest.approx(0.25)
    assert b.lower < -0.25


def test_path_graph_spectrum():
    g = from_edge_list(4, [(0, 1), (1, 2), (2, 3)])
    expected = np.sort(2 * np.cos(np.pi * np.arange(1, 5) / 5))
    np.testing.assert_allclose(g.eigenvalues, expected, atol=1e-12)


def test_errors():
    with pytest.raises(SiteIndexError):
        from_edge_list(3, [(0, 3)])
    with pytest.raises(SelfLoopError):
        from_edge_list(3, [(0, 1), (1, 1)])
    with pytest.raises(DisconnectedGraphError):
        from_edge_list(4, [(0, 1), (2, 3)])
    with pytest.raises(GraphError):
        from_edge_list(1, [])


def test_duplicates_collapse():
    g = from_edge_list(3, [(0, 1), (1, 0), (1, 2), (1, 2)])
    assert g.edges == ((0, 1), (1, 2))


def test_spectrum_is_read_only():
    g = torus_grid(3, 3)
    with pytest.raises(ValueError):
        g.eigenvalues[0] = 1.0


def test_normalized_spectrum_in_unit_interval():
    g = from_edge_list(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)])
    assert g.normalized_eigenvalues.max() == pytest.approx(1.0)
    assert g.normalized_eigenvalues.min() >= -1.0 - 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 6), st.integers(3, 6), st.randoms(use_true_random=False))
def test_spectrum_invariant_under_relabelling(rows, cols, rnd):
    g = torus_grid(rows, cols)
    perm = list(range(g.n_sites))
    rnd.shuffle(perm)
    h = g.permuted(perm)
    np.testing.assert_allclose(h.eigenvalues, g.eigenvalues, atol=1e-10)
    a, b = g.dense_adjacency(), h.dense_adjacency()
    np.testing.assert_array_equal(b, a[np.ix_(perm, perm)])


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 12), st.data())
def test_random_connected_graph_bounds(n, data):
    # random spanning tree plus extra edges
    pairs = [(data.draw(st.integers(0, k - 1)), k) for k in range(1, n)]
    extra = data.draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=10))
    pairs += [(i, j) for i, j in extra if i != j]
    g = from_edge_list(n, pairs)
    b = zeta_bounds(g)
    assert b.lower < 0 < b.upper
    assert np.all(g.degree >= 1)
    assert g.degree.sum() == 2 * g.n_edges
