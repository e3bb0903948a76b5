import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heisenlab.lattice import (
    LatticeError,
    LatticeSpec,
    build_lattice,
    graph_distance,
    laplacian_apply,
    parse_lattice,
)


@pytest.mark.parametrize("text, sites, edges", [
    ("chain:4:open", 4, 3),
    ("chain:4:periodic", 4, 4),
    ("box2d:3x3:periodic", 9, 18),
    ("box3d:3x3x3:periodic", 27, 81),
    ("box2d:3x4:open", 12, 17),
])
def test_site_and_edge_counts(text, sites, edges):
    lat = parse_lattice(text)
    assert lat.site_count == sites
    assert lat.n_edges == edges
    assert lat.degrees.sum() == 2 * lat.n_edges


def test_two_wide_torus_deduplicates_wrap_edges():
    # the cube graph: every site has 3 neighbours
    lat = parse_lattice("box3d:2x2x2:periodic")
    assert lat.n_edges == 12
    assert set(lat.degrees) == {3}


@pytest.mark.parametrize("bad", ["chain:1:open", "chain:2:periodic", "box2d:3:open",
                                 "ring:3:open", "chain:4:twisted", "chain"])
def test_rejects_invalid_specs(bad):
    with pytest.raises(LatticeError):
        parse_lattice(bad)


def test_spec_round_trip():
    spec = LatticeSpec.parse("box2d:3x4:open")
    assert LatticeSpec.from_dict(spec.to_dict()) == spec
    assert LatticeSpec.parse(str(spec)) == spec
    assert LatticeSpec.parse("chain:5").boundary == "periodic"


def test_row_major_indexing():
    lat = parse_lattice("box2d:3x4:open")
    assert lat.site_index((1, 2)) == 6
    assert lat.coords(6) == (1, 2)


def test_edges_clean():
    for text in ["chain:5:periodic", "box2d:3x3:periodic", "box3d:2x3x3:open"]:
        lat = parse_lattice(text)
        pairs = [tuple(e) for e in lat.edges]
        assert all(i < j for i, j in pairs)
        assert len(set(pairs)) == len(pairs)
        for i, j in pairs:
            assert j in lat.adjacency[i] and i in lat.adjacency[j]


def test_laplacian_examples():
    tri = parse_lattice("chain:3:periodic")
    np.testing.assert_array_equal(laplacian_apply(tri, [1, 0, 0]), [-2, 1, 1])
    pair = parse_lattice("chain:2:open")
    np.testing.assert_array_equal(laplacian_apply(pair, [1, 0]), [-1, 1])
    grid = parse_lattice("box2d:3x3:open")
    np.testing.assert_array_equal(laplacian_apply(grid, np.full(9, 2.5)), np.zeros(9))


def test_laplacian_length_mismatch():
    with pytest.raises(LatticeError):
        laplacian_apply(parse_lattice("chain:4:open"), np.ones(3))


def test_laplacian_matches_matrix(small_lattices, rng):
    for lat in small_lattices:
        f = rng.standard_normal(lat.site_count)
        np.testing.assert_allclose(laplacian_apply(lat, f), lat.laplacian_matrix @ f, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(["chain:6:open", "chain:7:periodic", "box2d:3x3:periodic", "box2d:2x4:open"]),
       st.integers(0, 2**32 - 1))
def test_laplacian_symmetric_nonpositive(text, seed):
    lat = parse_lattice(text)
    r = np.random.default_rng(seed)
    f, g = r.standard_normal((2, lat.site_count))
    lf, lg = laplacian_apply(lat, f), laplacian_apply(lat, g)
    assert abs(f @ lg - lf @ g) <= 1e-12
    assert f @ lf <= 1e-12
    assert abs(lf.sum()) <= 1e-12


def test_laplacian_commutes_with_translations(rng):
    for text in ["chain:7:periodic", "box2d:3x4:periodic", "box3d:3x3x3:periodic"]:
        lat = parse_lattice(text)
        # integer-valued fields keep every partial sum exact regardless of edge order
        f = rng.integers(-1000, 1000, lat.site_count).astype(float)
        g = rng.standard_normal(lat.site_count)
        for perm in lat.translations():
            for field, check in ((f, np.testing.assert_array_equal),
                                 (g, lambda a, b: np.testing.assert_allclose(a, b, atol=1e-14))):
                moved = np.empty_like(field)
                moved[perm] = field
                out = np.empty_like(field)
                out[perm] = laplacian_apply(lat, field)
                check(laplacian_apply(lat, moved), out)


def test_translations_need_periodic():
    with pytest.raises(LatticeError):
        parse_lattice("chain:4:open").translations()


def test_distance_examples():
    assert graph_distance(parse_lattice("chain:5:open"), 0, 4) == 4
    assert graph_distance(parse_lattice("chain:6:periodic"), 0, 4) == 2
    lat = parse_lattice("box2d:3x3:periodic")
    assert all(graph_distance(lat, i, i) == 0 for i in range(9))
    with pytest.raises(LatticeError):
        graph_distance(lat, 0, 9)


def test_distance_metric_axioms(small_lattices):
    for lat in small_lattices:
        d = lat.distances
        assert (d == d.T).all()
        n = lat.site_count
        for k in range(n):
            assert (d <= d[:, [k]] + d[[k], :]).all()


def test_lattice_is_immutable():
    lat = parse_lattice("chain:4:open")
    with pytest.raises(Exception):
        lat.site_count = 5
    with pytest.raises(ValueError):
        lat.edges[0, 0] = 3
