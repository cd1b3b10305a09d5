import numpy as np
import pytest

from lanefree.dynamics import VehicleParams
from lanefree.geometry import (ConvexPolytope, Pose, axis_aligned_box,
                               base_body_polytope, build_intersection,
                               closest_points, min_distance_oracle,
                               polygon_area, polytope_at_pose, rotation)


def rect_vertices(cx, cy, length, width, theta):
    """Brute-force vertex oracle: rotate and shift the corner points."""
    half = np.array([[length / 2, width / 2], [-length / 2, width / 2],
                     [-length / 2, -width / 2], [length / 2, -width / 2]])
    return half @ rotation(theta).T + np.array([cx, cy])


def random_rect(rng, span=8.0):
    return (rng.uniform(-span, span), rng.uniform(-span, span),
            rng.uniform(0.8, 5.0), rng.uniform(0.5, 3.0),
            rng.uniform(-np.pi, np.pi))


def posed_rect(cx, cy, length, width, theta):
    base = axis_aligned_box(0.0, 0.0, length, width)
    return polytope_at_pose(base, Pose(cx, cy, theta))


def dense_boundary_points(vertices, per_edge=200):
    pts = []
    for k in range(len(vertices)):
        a, b = vertices[k], vertices[(k + 1) % len(vertices)]
        t = np.linspace(0.0, 1.0, per_edge, endpoint=False)[:, None]
        pts.append(a + t * (b - a))
    return np.vstack(pts)


def test_base_body_polytope_shape():
    poly = base_body_polytope(VehicleParams(body_length=4.6, body_width=2.0))
    np.testing.assert_allclose(poly.b, [2.3, 2.3, 1.0, 1.0])
    np.testing.assert_allclose(poly.a, [[1, 0], [-1, 0], [0, 1], [0, -1]])
    assert np.all(poly.a @ np.zeros(2) < poly.b)
    active = np.isclose(poly.a @ np.array([2.3, 1.0]), poly.b)
    assert active.sum() == 2
    assert poly.contains([2.3, 1.0])


def test_identity_pose_is_noop():
    base = axis_aligned_box(0, 0, 4.0, 2.0)
    posed = polytope_at_pose(base, Pose(0.0, 0.0, 0.0))
    np.testing.assert_allclose(posed.a, base.a)
    np.testing.assert_allclose(posed.b, base.b)


def test_pure_translation_rule():
    base = axis_aligned_box(0, 0, 4.0, 2.0)
    p = np.array([1.0, 2.0])
    posed = polytope_at_pose(base, Pose(1.0, 2.0, 0.0))
    np.testing.assert_allclose(posed.a, base.a)
    np.testing.assert_allclose(posed.b, base.b + base.a @ p)


def test_posed_vertices_match_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(50):
        cx, cy, length, width, theta = random_rect(rng)
        poly = posed_rect(cx, cy, length, width, theta)
        want = rect_vertices(cx, cy, length, width, theta)
        got = poly.vertices()
        assert got.shape == (4, 2)
        # compare as sets: order both by angle around the centroid
        for v in want:
            assert np.min(np.linalg.norm(got - v, axis=1)) < 1e-12


def test_pose_preserves_area():
    rng = np.random.default_rng(4)
    for _ in range(30):
        cx, cy, length, width, theta = random_rect(rng)
        poly = posed_rect(cx, cy, length, width, theta)
        assert polygon_area(poly.vertices()) == pytest.approx(length * width,
                                                              abs=1e-9)


def test_centroid_inside_posed_polytope():
    rng = np.random.default_rng(5)
    base = axis_aligned_box(0, 0, 4.6, 2.0)
    for _ in range(30):
        pose = Pose(rng.uniform(-30, 30), rng.uniform(-30, 30),
                    rng.uniform(-np.pi, np.pi))
        assert polytope_at_pose(base, pose).contains(pose.position)


def test_intersection_memberships():
    layout = build_intersection(lane_width=5.0, arm_length=30.0)
    assert len(layout.blocks) == 4
    hits = [blk.contains([20.0, 20.0]) for blk in layout.blocks]
    assert sum(hits) == 1
    assert not any(blk.contains([0.0, 0.0]) for blk in layout.blocks)
    # off the road cross means inside exactly one corner block
    point = [6.0, 20.0]
    assert not layout.on_road(point)
    assert sum(blk.contains(point) for blk in layout.blocks) == 1


def test_blocks_are_disjoint():
    layout = build_intersection(5.0, 35.0)
    for i in range(4):
        for j in range(i + 1, 4):
            assert min_distance_oracle(layout.blocks[i], layout.blocks[j]) > 0


def test_unit_square_gap():
    p = posed_rect(0, 0, 1.0, 1.0, 0.0)
    q = posed_rect(3, 0, 1.0, 1.0, 0.0)
    assert min_distance_oracle(p, q) == pytest.approx(2.0, abs=1e-12)


def test_overlapping_squares_zero():
    p = posed_rect(0, 0, 2.0, 2.0, 0.0)
    q = posed_rect(1.0, 0.5, 2.0, 2.0, 0.3)
    assert min_distance_oracle(p, q) == 0.0


def test_oracle_against_dense_sampling():
    rng = np.random.default_rng(6)
    checked = 0
    while checked < 25:
        pa = posed_rect(*random_rect(rng))
        qa = posed_rect(*random_rect(rng))
        d = min_distance_oracle(pa, qa)
        if d <= 1e-6:
            continue
        checked += 1
        dense_p = dense_boundary_points(pa.vertices())
        dense_q = dense_boundary_points(qa.vertices())
        sampled = np.min(np.linalg.norm(
            dense_p[:, None, :] - dense_q[None, :, :], axis=2))
        # dense sampling can only overestimate the true minimum
        assert d <= sampled + 1e-12
        assert sampled - d <= 1e-4 * max(1.0, sampled) + 2e-2


def test_oracle_symmetry_and_translation_monotonicity():
    rng = np.random.default_rng(8)
    for _ in range(20):
        pa = posed_rect(*random_rect(rng))
        qa = posed_rect(*random_rect(rng))
        d = min_distance_oracle(pa, qa)
        assert min_distance_oracle(qa, pa) == pytest.approx(d, abs=1e-12)
        if d <= 1e-9:
            continue
        x, y, gap = closest_points(pa, qa)
        assert gap == pytest.approx(d, abs=1e-12)
        u = (y - x) / gap
        for t in (0.5, 2.0):
            shifted = ConvexPolytope(qa.a, qa.b + qa.a @ (t * u))
            assert min_distance_oracle(pa, shifted) == pytest.approx(
                d + t, abs=1e-9)


def test_closest_points_are_members():
    rng = np.random.default_rng(9)
    for _ in range(20):
        pa = posed_rect(*random_rect(rng))
        qa = posed_rect(*random_rect(rng))
        if min_distance_oracle(pa, qa) <= 1e-9:
            continue
        x, y, _ = closest_points(pa, qa)
        assert pa.contains(x, tol=1e-9)
        assert qa.contains(y, tol=1e-9)
