import math

import numpy as np
import pytest

from oracles import (
    beta_networkx,
    knn_total_length,
    nn_dist,
    nx_graph,
    rsa_naive,
    sig_degrees,
    sig_edge_census,
    voronoi_finite_length_delaunay,
)
from stablab.functionals import (
    ColorThreshold,
    FunctionalDescriptor,
    colors_of,
    evaluate,
    evaluate_rescaled,
    evaluate_scaled,
    independence_ratio_xi,
    knn_distance_indicator,
    knn_xi,
    rsa_packing_xi,
    sig_edges,
    sig_xi,
    two_color_mismatch,
    voronoi_half_length_xi,
)
from stablab.geometry import ComponentTooLarge, distance_matrix, geometric_graph, independence_number
from stablab.point_process import MarkedConfiguration, sample_poisson, Density


def cfg(points, marks=None):
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return MarkedConfiguration(pts, marks)


def random_cfg(n, d=2, seed=0):
    rng = np.random.default_rng(seed)
    return MarkedConfiguration(rng.random((n, d)), rng.random(n))


# knn


def test_knn_single_edge():
    xi = knn_xi(cfg([(0, 0), (3, 4)]), 1)
    assert xi.values.tolist() == [2.5, 2.5]
    assert xi.total == 5.0


def test_knn_line():
    xi = knn_xi(cfg([0.0, 1.0, 3.0]), 1)
    assert xi.total == 3.0
    assert xi.values[1] == 1.5


def test_knn_total_matches_whole_graph():
    for seed in range(5):
        c = random_cfg(100, seed=seed)
        assert math.isclose(knn_xi(c, 3).total, knn_total_length(c.positions, 3), rel_tol=1e-9)


def test_knn_needs_enough_points():
    with pytest.raises(ValueError):
        knn_xi(cfg([0.0, 1.0]), 2)


def test_knn_distance_indicator_examples():
    assert knn_distance_indicator(cfg([0.0, 0.5]), 1.0).values.tolist() == [1.0, 1.0]
    assert knn_distance_indicator(cfg([0.0, 0.5]), 0.3).values.tolist() == [0.0, 0.0]
    # strict: distance equal to s does not count
    assert knn_distance_indicator(cfg([0.0, 0.5]), 0.5).total == 0.0


def test_knn_distance_indicator_brute_force():
    c = random_cfg(200, seed=3)
    r, _ = nn_dist(c.positions)
    assert knn_distance_indicator(c, 0.1).total == float(np.sum(r < 0.1))


# two-color


def test_two_color_monochrome():
    c = random_cfg(50, seed=1)
    assert two_color_mismatch(c, ColorThreshold(0.0)).total == 0.0


def test_two_color_pair():
    c = cfg([(0, 0), (1, 0)], [0.2, 0.9])
    assert two_color_mismatch(c, ColorThreshold(0.5)).values.tolist() == [1.0, 1.0]


def test_two_color_brute_force():
    c = random_cfg(100, seed=4)
    q = ColorThreshold(0.0, (1.0,))
    red = [c.marks[i] <= min(max(c.positions[i, 0], 0), 1) for i in range(len(c))]
    _, dm = nn_dist(c.positions)
    want = [float(red[i] != red[int(np.argmin(dm[i]))]) for i in range(len(c))]
    assert two_color_mismatch(c, q).values.tolist() == want


def test_two_color_needs_q_or_colors():
    with pytest.raises(ValueError):
        two_color_mismatch(random_cfg(3))


# Voronoi


def test_voronoi_two_points_zero():
    assert voronoi_half_length_xi(cfg([(0, 0), (1, 1)])).values.tolist() == [0.0, 0.0]


def test_voronoi_center_value():
    c = cfg([(0, 0), (2, 0), (0, 2), (2, 2), (1, 1)])
    assert math.isclose(voronoi_half_length_xi(c).values[4], 2 * math.sqrt(2), rel_tol=1e-12)


def test_voronoi_total_matches_census():
    c = random_cfg(100, seed=7)
    assert math.isclose(voronoi_half_length_xi(c).total, voronoi_finite_length_delaunay(c.positions), rel_tol=1e-9)


def test_voronoi_rejects_other_dimensions():
    with pytest.raises(ValueError):
        voronoi_half_length_xi(random_cfg(10, d=3))


# sphere of influence


def test_sig_two_points():
    xi = sig_xi(cfg([(0, 0), (5, 1)]))
    assert xi.values.tolist() == [0.5, 0.5]
    assert len(sig_edges(cfg([(0, 0), (5, 1)]))) == 1


def test_sig_closed_rule_triple():
    c = cfg([(0, 0), (1, 0), (0, 3)])
    assert len(sig_edges(c)) == 3
    assert sig_xi(c).values.tolist() == [1.0, 1.0, 1.0]


def test_sig_matches_brute_force():
    for seed in range(5):
        c = random_cfg(100, seed=seed)
        assert sig_xi(c).total == sig_edge_census(c.positions)
        assert sig_xi(c, "degree-indicator", 2).total == float(np.sum(sig_degrees(c.positions) == 2))


def test_sig_bad_mode():
    with pytest.raises(ValueError):
        sig_xi(random_cfg(5), "median")
    with pytest.raises(ValueError):
        sig_xi(random_cfg(5), "degree-indicator")


# random sequential packing


def test_rsa_pair():
    assert rsa_packing_xi(cfg([0.0, 1.0], [0.1, 0.5]), 0.6).values.tolist() == [1.0, 0.0]


def test_rsa_far_points_all_accepted():
    assert rsa_packing_xi(cfg([0.0, 10.0, 20.0], [0.3, 0.2, 0.1]), 1.0).total == 3.0


def test_rsa_order_sensitivity():
    xi = rsa_packing_xi(cfg([0.0, 1.0, 2.0], [0.9, 0.1, 0.5]), 0.6)
    assert xi.values.tolist() == [0.0, 1.0, 0.0]


def test_rsa_boundary_contact_accepted():
    assert rsa_packing_xi(cfg([0.0, 1.0], [0.1, 0.2]), 0.5).total == 2.0


def test_rsa_duplicate_marks_named():
    with pytest.raises(ValueError, match="points 0 and 2"):
        rsa_packing_xi(cfg([0.0, 5.0, 9.0], [0.4, 0.1, 0.4]), 1.0)


def test_rsa_matches_naive_and_excludes():
    for seed in range(10):
        c = random_cfg(150, seed=seed)
        r = 0.03
        got = rsa_packing_xi(c, r).values.astype(bool)
        assert got.tolist() == rsa_naive(c.positions, c.marks, r).tolist()
        acc = c.positions[got]
        dm = distance_matrix(acc)
        np.fill_diagonal(dm, np.inf)
        assert np.all(dm >= 2 * r)


# independence ratio


def test_independence_pair_and_path():
    assert independence_ratio_xi(cfg([0.0, 1.0]), 1.0).values.tolist() == [0.5, 0.5]
    xi = independence_ratio_xi(cfg([0.0, 1.0, 2.0]), 1.0)
    assert np.allclose(xi.values, 2 / 3, rtol=0, atol=1e-15)
    assert math.isclose(xi.total, 2.0, rel_tol=1e-12)


def test_independence_total_is_beta():
    for seed in range(10):
        c = random_cfg(30, seed=seed)
        b = 0.15
        assert math.isclose(independence_ratio_xi(c, b).total, beta_networkx(nx_graph(c.positions, b)), rel_tol=1e-9)


def test_independence_oversized_component():
    with pytest.raises(ComponentTooLarge):
        independence_ratio_xi(cfg(np.arange(60.0)), 1.0)


def test_add_one_cost_both_values_occur():
    base = cfg([(0, 0), (1, 0)])
    g0 = geometric_graph(base.positions, 1.0)
    beta0 = independence_number(g0)
    isolated = cfg([(0, 0), (1, 0), (10, 10)])
    joined = cfg([(0, 0), (1, 0), (0.5, 0)])
    assert independence_number(geometric_graph(isolated.positions, 1.0)) - beta0 == 1
    assert independence_number(geometric_graph(joined.positions, 1.0)) - beta0 == 0


# descriptors and rescaling


def test_descriptor_validation():
    assert FunctionalDescriptor("knn-edge-length").k == 1
    with pytest.raises(ValueError):
        FunctionalDescriptor("knn-edge-length", k=0)
    with pytest.raises(ValueError):
        FunctionalDescriptor("rsa-packing")
    with pytest.raises(ValueError):
        FunctionalDescriptor("sig-half-degree", b=1.0)
    with pytest.raises(ValueError):
        FunctionalDescriptor("mst-length")


def all_descriptors(scale=1.0):
    return [
        FunctionalDescriptor("knn-edge-length", k=2),
        FunctionalDescriptor("knn-distance-indicator", s=0.08 * scale),
        FunctionalDescriptor("voronoi-half-length"),
        FunctionalDescriptor("sig-half-degree"),
        FunctionalDescriptor("sig-degree-indicator", delta=3),
        FunctionalDescriptor("rsa-packing", r=0.04 * scale),
        FunctionalDescriptor("independence-ratio", b=0.07 * scale),
    ]


def test_scale_equivariance():
    c = random_cfg(120, seed=11)
    c2 = MarkedConfiguration(3.0 * c.positions, c.marks)
    for d0, d1 in zip(all_descriptors(), all_descriptors(3.0)):
        a, b = evaluate(d0, c).values, evaluate(d1, c2).values
        if d0.kind in ("knn-edge-length", "voronoi-half-length"):
            assert np.allclose(b, 3.0 * a, rtol=1e-9, atol=1e-12)
        else:
            assert b.tolist() == a.tolist()
    q = FunctionalDescriptor("two-color-mismatch", q=ColorThreshold(0.5))
    assert evaluate(q, c).values.tolist() == evaluate(q, c2).values.tolist()


def test_translation_invariance():
    c = random_cfg(120, seed=12)
    shift = np.array([0.25, -0.5])
    moved = MarkedConfiguration(c.positions + shift, c.marks)
    for desc in all_descriptors():
        assert desc.translation_invariant
        assert np.allclose(evaluate(desc, moved).values, evaluate(desc, c).values, rtol=1e-9, atol=1e-12)


def test_two_color_changes_under_translation():
    desc = FunctionalDescriptor("two-color-mismatch", q=ColorThreshold(0.0, (1.0,)))
    assert not desc.translation_invariant
    c = random_cfg(100, seed=13)
    moved = MarkedConfiguration(c.positions + [0.5, 0.0], c.marks)
    assert evaluate(desc, moved).values.tolist() != evaluate(desc, c).values.tolist()


def test_rescaled_identity_at_lambda_one():
    c = random_cfg(40, seed=14)
    for desc in all_descriptors():
        vals = evaluate(desc, c).values
        for i in (0, 17, 39):
            assert evaluate_rescaled(desc, 1.0, c, i) == vals[i]


def test_rescaled_knn_doubles():
    c = random_cfg(40, seed=15)
    desc = FunctionalDescriptor("knn-edge-length")
    vals = knn_xi(c).values
    for i in range(0, 40, 7):
        assert math.isclose(evaluate_rescaled(desc, 4.0, c, i), 2 * vals[i], rel_tol=1e-12)


def test_rescaled_two_color_equals_unscaled():
    c = random_cfg(60, seed=16)
    desc = FunctionalDescriptor("two-color-mismatch", q=ColorThreshold(0.0, (1.0, 0.0)))
    vals = evaluate(desc, c).values
    for i in range(60):
        assert evaluate_rescaled(desc, 500.0, c, i) == vals[i]


def test_rescaled_matches_global_scaling():
    lam = 300.0
    c = sample_poisson(lam, Density.uniform(), 5)
    for desc in all_descriptors(scale=10.0):
        glob = evaluate_scaled(desc, lam, c).values
        for i in range(0, len(c), 37):
            assert math.isclose(evaluate_rescaled(desc, lam, c, i), glob[i], rel_tol=1e-9, abs_tol=1e-12)


def test_rescaled_rejects_bad_index():
    with pytest.raises(ValueError):
        evaluate_rescaled(FunctionalDescriptor("knn-edge-length"), 1.0, random_cfg(5), 5)


def test_colors_use_marks():
    c = cfg([(0, 0), (1, 1)], [0.3, 0.8])
    assert colors_of(c, ColorThreshold(0.5)).tolist() == [True, False]
