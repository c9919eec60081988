import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from conftest import brute_force_chain

from emdemosaic.core import B, G, HALF_PI, R, DomainError, PolarImage, h_factor, unit_vectors
from emdemosaic.mstep import (SurrogateTerms, angle_levels, binary_search_max, chain_objective,
                              coordinate_max_2d, independent_sets, local_surrogate_2d,
                              surrogate_2d, surrogate_constant, viterbi_chain)
from emdemosaic.prior import LinkGraph, cross_norm


def grid_argmax(f, n):
    t = np.linspace(0.0, HALF_PI, n)
    return t[np.argmax(f(t))]


def chain_terms(rng, n, weight, sigma=1.0):
    P = rng.uniform(-1, 4, n)
    D2 = rng.uniform(0, 4, n)
    return SurrogateTerms(P[None], D2[None], LinkGraph.chain(n, weight), sigma,
                          np.where(np.arange(n) % 2 == 0, G, R)[None])


def test_surrogate_constant_examples():
    assert binary_search_max(lambda t: surrogate_constant(t, 1.5, 1.5, 1.0, 1.0)) == \
        pytest.approx(np.pi / 4, abs=1e-8)
    assert binary_search_max(lambda t: surrogate_constant(t, 1.0, 0.0, 0.0, 0.0)) == \
        pytest.approx(0.0, abs=1e-8)
    f = lambda t: surrogate_constant(t, 2.0, 3.0, 1.0, 2.0)  # noqa: E731
    spacing = HALF_PI / (1e5 - 1)
    assert binary_search_max(f, 1e-9) == pytest.approx(grid_argmax(f, 100000), abs=spacing)


def test_surrogate_constant_formula():
    t = 0.37
    val = surrogate_constant(t, 2.0, 3.0, 1.0, 2.0)
    assert val == pytest.approx(2 * np.cos(t) + 3 * np.sin(t) - 0.5 * (np.cos(t) ** 2 + 2 * np.sin(t) ** 2))


def test_binary_search_examples():
    assert binary_search_max(np.cos, 1e-9) == pytest.approx(0.0, abs=1e-9)
    assert binary_search_max(lambda t: -(t - 0.7) ** 2, 1e-9) == pytest.approx(0.7, abs=1e-9)
    assert binary_search_max(np.sin, 1e-9) == pytest.approx(HALF_PI, abs=1e-9)
    with pytest.raises(DomainError):
        binary_search_max(np.cos, 0.0)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 10.0), st.floats(0.0, 10.0), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_binary_search_matches_fine_grid(Pe, Po, De2, Do2):
    f = lambda t: surrogate_constant(t, Pe, Po, De2, Do2)  # noqa: E731
    got = binary_search_max(f, 1e-6)
    t = np.linspace(0.0, HALF_PI, 10 ** 6)
    v = f(t)
    # compare values: flat tops make the argmax itself ill-conditioned
    assert f(got) >= v.max() - 1e-9 * max(1.0, abs(v.max()))
    k = np.argmax(v)
    if 0 < k < len(t) - 1:
        curv = v[k - 1] + v[k + 1] - 2 * v[k]
        if curv < -1e-14:
            assert abs(got - t[k]) <= 1e-6 + 2 * HALF_PI / 10 ** 6


def test_viterbi_decoupled_sites(rng):
    terms = chain_terms(rng, 9, 0.0)
    got = viterbi_chain(terms, 16)
    grid = angle_levels(16)
    for j in range(9):
        h = h_factor(grid, 0.0, terms.channels[0, j])
        vals = h * terms.P[0, j] - 0.5 * h * h * terms.Delta2[0, j]
        assert got[j] == grid[np.argmax(vals)]


def test_viterbi_matches_brute_force(rng):
    for _ in range(3):
        terms = chain_terms(rng, 6, rng.uniform(0, 2, 5))
        best, seq = brute_force_chain(terms, 12)
        got = viterbi_chain(terms, 12)
        assert chain_objective(got, terms) == pytest.approx(best, abs=1e-12)
        np.testing.assert_array_equal(got, seq)


def test_viterbi_strong_coupling_gives_one_color(rng):
    terms = chain_terms(rng, 6, 1e6)
    got = viterbi_chain(terms, 12)
    assert np.ptp(got) == 0
    best, seq = brute_force_chain(terms, 12)
    np.testing.assert_array_equal(got, seq)


def test_viterbi_tie_break_lowest_level():
    # no data at all: every sequence scores 0, so all-zero wins
    terms = SurrogateTerms(np.zeros((1, 4)), np.zeros((1, 4)), LinkGraph.chain(4, 1.0), 1.0,
                           np.array([[G, R, G, R]]))
    np.testing.assert_array_equal(viterbi_chain(terms, 8), 0.0)


def test_viterbi_rejects_loops():
    g = LinkGraph((1, 3), [0, 1, 0], [1, 2, 2], [1.0, 1.0, 1.0])
    terms = SurrogateTerms(np.zeros((1, 3)), np.zeros((1, 3)), g, 1.0, np.array([[G, R, G]]))
    with pytest.raises(DomainError):
        viterbi_chain(terms)


def test_chain_objective_equals_global_surrogate(rng):
    terms = chain_terms(rng, 7, rng.uniform(0, 1, 6), sigma=0.7)
    theta = rng.uniform(0, HALF_PI, 7)
    angles = PolarImage(np.ones((1, 7)), theta[None])
    assert chain_objective(theta, terms) == pytest.approx(surrogate_2d(angles, terms), rel=1e-12)


def test_local_surrogate_no_neighbors_green_site():
    f = lambda t: local_surrogate_2d(t, 0.3, "G", [], 1.0, 0.0, 1.0)  # noqa: E731
    assert grid_argmax(np.vectorize(f), 1001) == 0.0


def test_local_surrogate_formula(rng):
    nb = [(unit_vectors(0.4, 0.9), 2.0), (unit_vectors(1.1, 0.2), 0.5)]
    t, p, P, D2, s = 0.8, 0.6, 3.0, 5.0, 1.5
    h = np.sin(t) * np.sin(p)
    u = unit_vectors(t, p)
    expect = h * P - 0.5 * h * h * D2 - s ** 2 * sum(w * np.linalg.norm(np.cross(u, v)) for v, w in nb)
    assert local_surrogate_2d(t, p, "B", nb, P, D2, s) == pytest.approx(expect, rel=1e-12)
    with pytest.raises(DomainError):
        local_surrogate_2d(t, p, "B", [(u, -1.0)], P, D2, s)


def test_local_surrogate_pinned_by_heavy_neighbor():
    target = (0.9, 0.35)
    u_nb = unit_vectors(*target)
    nb = [(u_nb, 1e6)]
    t = np.linspace(0, HALF_PI, 801)
    T, Pp = np.meshgrid(t, t, indexing="ij")
    # fine-grid oracle evaluated straight from the definition
    h = np.sin(T) * np.cos(Pp)
    cross = np.linalg.norm(np.cross(unit_vectors(T, Pp), u_nb), axis=-1)
    vals = h * 2.0 - 0.5 * h * h - 1e6 * cross
    k = np.unravel_index(np.argmax(vals), vals.shape)
    assert T[k] == pytest.approx(target[0], abs=t[1])
    assert Pp[k] == pytest.approx(target[1], abs=t[1])
    best = local_surrogate_2d(T[k], Pp[k], "R", nb, 2.0, 1.0, 1.0)
    assert best == pytest.approx(vals[k], rel=1e-12)
    assert best > local_surrogate_2d(target[0] + 0.05, target[1], "R", nb, 2.0, 1.0, 1.0)


def test_local_terms_sum_to_global(rng):
    shape = (4, 5)
    n = 20
    theta = rng.uniform(0, HALF_PI, shape)
    phi = rng.uniform(0, HALF_PI, shape)
    i = rng.integers(0, n, 30)
    j = (i + rng.integers(1, n, 30)) % n
    keep = i != j
    graph = LinkGraph(shape, i[keep], j[keep], rng.uniform(0, 2, keep.sum()))
    ch = np.array([[R, G], [G, B]])[np.arange(4)[:, None] % 2, np.arange(5)[None, :] % 2]
    terms = SurrogateTerms(rng.uniform(0, 3, shape), rng.uniform(0, 3, shape), graph, 0.8, ch)
    total = 0.0
    u = unit_vectors(theta, phi).reshape(-1, 3)
    for s in range(n):
        total += local_surrogate_2d(theta.flat[s], phi.flat[s], ch.flat[s], [], terms.P.flat[s],
                                    terms.Delta2.flat[s], 0.8)
    for a, b, w in zip(graph.i, graph.j, graph.w):
        total -= 0.8 ** 2 * w * np.linalg.norm(np.cross(u[a], u[b]))
    angles = PolarImage(np.ones(shape), theta, phi)
    assert surrogate_2d(angles, terms) == pytest.approx(total, rel=1e-12)


def test_one_site_reduces_to_constant_surrogate():
    for theta in np.linspace(0, HALF_PI, 7):
        assert local_surrogate_2d(theta, 0.0, "G", [], 2.0, 3.0, 1.0) == \
            pytest.approx(surrogate_constant(theta, 2.0, 0.0, 3.0, 0.0), abs=1e-14)
        assert local_surrogate_2d(theta, 0.0, "R", [], 2.0, 3.0, 1.0) == \
            pytest.approx(surrogate_constant(theta, 0.0, 2.0, 0.0, 3.0), abs=1e-14)


def bayer_terms(rng, shape=(8, 8), weight_scale=1.0, sigma=1.0):
    h, w = shape
    ch = np.array([[R, G], [G, B]])[np.arange(h)[:, None] % 2, np.arange(w)[None, :] % 2]
    flat = np.arange(h * w).reshape(shape)
    i = np.concatenate([flat[:, :-1].ravel(), flat[:-1, :].ravel(), flat[:-1, :-1].ravel()])
    j = np.concatenate([flat[:, 1:].ravel(), flat[1:, :].ravel(), flat[1:, 1:].ravel()])
    graph = LinkGraph(shape, i, j, weight_scale * rng.uniform(0, 1, len(i)))
    P = rng.uniform(0, 5, shape)
    D2 = rng.uniform(0.5, 5, shape)
    return SurrogateTerms(P, D2, graph, sigma, ch)


def random_angles(rng, shape):
    return PolarImage(np.ones(shape), rng.uniform(0, HALF_PI, shape), rng.uniform(0, HALF_PI, shape))


@pytest.mark.parametrize("order", ["raster", "colored"])
def test_sweep_increases_surrogate_per_update(rng, order):
    terms = bayer_terms(rng)
    angles = random_angles(rng, (8, 8))
    log = []
    new = coordinate_max_2d(angles, terms, order, callback=lambda s, b, a: log.append((b, a)))
    assert all(np.all(a >= b) for b, a in log)
    assert surrogate_2d(new, terms) > surrogate_2d(angles, terms)


def test_raster_callback_tracks_global_value(rng):
    terms = bayer_terms(rng, (6, 6))
    angles = random_angles(rng, (6, 6))
    start = surrogate_2d(angles, terms)
    gains = []
    new = coordinate_max_2d(angles, terms, "raster", reverse=True,
                            callback=lambda s, b, a: gains.append(float(a[0] - b[0])))
    assert len(gains) == 36
    assert surrogate_2d(new, terms) == pytest.approx(start + sum(gains), rel=1e-10)


def test_fixed_point_is_unchanged(rng):
    # every site's data term peaks at one shared color and the penalty vanishes there
    terms = bayer_terms(rng)
    t0, p0 = 0.9, 0.4
    h = h_factor(t0, p0, terms.channels)
    terms = SurrogateTerms(h * terms.Delta2, terms.Delta2, terms.graph, terms.sigma, terms.channels)
    angles = PolarImage(np.ones((8, 8)), np.full((8, 8), t0), np.full((8, 8), p0))
    for order in ("raster", "colored"):
        new = coordinate_max_2d(angles, terms, order)
        np.testing.assert_array_equal(new.theta, angles.theta)
        np.testing.assert_array_equal(new.phi, angles.phi)
        assert surrogate_2d(new, terms) == surrogate_2d(angles, terms)


def test_decoupled_sites_match_fine_grid_oracle(rng):
    terms = bayer_terms(rng, (4, 4), weight_scale=0.0)
    angles = random_angles(rng, (4, 4))
    new = coordinate_max_2d(angles, terms, "colored")
    grid = np.linspace(0, HALF_PI, 100001)
    for s in range(16):
        ch, P, D2 = terms.channels.flat[s], terms.P.flat[s], terms.Delta2.flat[s]

        def f(t, p):
            h = h_factor(t, p, ch)
            return h * P - 0.5 * h * h * D2

        t_star = grid[np.argmax(f(grid, angles.phi.flat[s]))]
        p_star = grid[np.argmax(f(t_star, grid))]
        assert f(new.theta.flat[s], new.phi.flat[s]) >= f(t_star, p_star) - 1e-9


def test_independent_sets_share_no_links(rng):
    terms = bayer_terms(rng)
    sets = independent_sets(terms.graph)
    assert sorted(np.concatenate(sets).tolist()) == list(range(64))
    g = terms.graph
    for s in sets:
        inside = np.isin(g.i, s) & np.isin(g.j, s) & (g.w > 0)
        assert not inside.any()


def test_cross_norm_matches_numpy(rng):
    u = rng.standard_normal((10, 3))
    v = rng.standard_normal((10, 3))
    np.testing.assert_allclose(cross_norm(u, v), np.linalg.norm(np.cross(u, v), axis=-1), rtol=1e-12)
