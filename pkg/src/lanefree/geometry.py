"""Convex polytopes for vehicle bodies and road corner blocks.

Polytopes are stored in half-space form {X : A X <= b} with unit-norm rows,
so every entry of b is the signed distance of the corresponding face from
the origin. A primal minimum-distance routine (vertex/edge enumeration) is
provided purely as a verification oracle; the planner itself never calls it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import VehicleParams


@dataclass(frozen=True)
class ConvexPolytope:
    a: np.ndarray   # (k, 2) outward unit normals
    b: np.ndarray   # (k,) offsets, metres

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if a.ndim != 2 or a.shape[1] != 2 or a.shape[0] < 3:
            raise ValueError("A must be (k, 2) with k >= 3")
        if b.shape != (a.shape[0],):
            raise ValueError("b length must match the rows of A")
        norms = np.linalg.norm(a, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise ValueError("rows of A must be unit-normalized")

    @property
    def nfaces(self) -> int:
        return self.a.shape[0]

    def contains(self, point, tol: float = 1e-9) -> bool:
        return bool(np.all(self.a @ np.asarray(point, dtype=float) <= self.b + tol))

    def vertices(self) -> np.ndarray:
        """Vertices ordered counter-clockwise, from pairwise face intersections."""
        return polytope_vertices(self.a, self.b)


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @staticmethod
    def from_array(arr) -> "Pose":
        x, y, theta = np.asarray(arr, dtype=float)
        return Pose(x=x, y=y, theta=theta)


@dataclass(frozen=True)
class IntersectionLayout:
    """Four-arm cross intersection; the blocked regions are the corner squares.

    The drivable cross has total width 2w (an incoming and an outgoing lane
    of width w per approach); each corner block is an L-by-L square starting
    at offset w from both axes.
    """

    lane_width: float = 5.0
    arm_length: float = 35.0
    blocks: tuple[ConvexPolytope, ...] = field(init=False)

    def __post_init__(self):
        if self.lane_width <= 0.0 or self.arm_length <= 0.0:
            raise ValueError("lane width and arm length must be > 0")
        w, ell = self.lane_width, self.arm_length
        blocks = tuple(
            axis_aligned_box(cx, cy, ell, ell)
            for cx in (w + ell / 2.0, -(w + ell / 2.0))
            for cy in (w + ell / 2.0, -(w + ell / 2.0))
        )
        object.__setattr__(self, "blocks", blocks)

    @property
    def half_extent(self) -> float:
        """Distance from the centre to the outer edge of the footprint."""
        return self.lane_width + self.arm_length

    def on_road(self, point, tol: float = 0.0) -> bool:
        x, y = point
        w = self.lane_width + tol
        return (abs(x) <= w or abs(y) <= w) and \
            abs(x) <= self.half_extent + tol and abs(y) <= self.half_extent + tol


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def axis_aligned_box(cx: float, cy: float,
                     length: float, width: float) -> ConvexPolytope:
    """Axis-aligned rectangle centred at (cx, cy); faces ordered +x,-x,+y,-y."""
    a = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    b = np.array([cx + length / 2.0, -cx + length / 2.0,
                  cy + width / 2.0, -cy + width / 2.0])
    return ConvexPolytope(a, b)


def base_body_polytope(params: VehicleParams) -> ConvexPolytope:
    """Vehicle footprint rectangle at the origin, heading +x."""
    return axis_aligned_box(0.0, 0.0, params.body_length, params.body_width)


def polytope_at_pose(base: ConvexPolytope, pose: Pose) -> ConvexPolytope:
    """Rigidly transform a polytope: the result is {R(theta) X + p : A X <= b}."""
    a_rot = base.a @ rotation(pose.theta).T
    return ConvexPolytope(a_rot, base.b + a_rot @ pose.position)


def build_intersection(lane_width: float = 5.0,
                       arm_length: float = 35.0) -> IntersectionLayout:
    return IntersectionLayout(lane_width=lane_width, arm_length=arm_length)


def polytope_vertices(a: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """All feasible pairwise face intersections, ordered counter-clockwise."""
    k = a.shape[0]
    pts = []
    for i in range(k):
        for j in range(i + 1, k):
            m = a[[i, j]]
            det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
            if abs(det) < 1e-12:
                continue
            v = np.linalg.solve(m, b[[i, j]])
            if np.all(a @ v <= b + max(tol, 1e-7 * max(1.0, np.abs(b).max()))):
                pts.append(v)
    if len(pts) < 3:
        raise ValueError("polytope is empty or degenerate")
    pts = np.array(pts)
    # deduplicate coincident intersections before ordering by angle
    centroid = pts.mean(axis=0)
    order = np.argsort(np.arctan2(pts[:, 1] - centroid[1], pts[:, 0] - centroid[0]))
    pts = pts[order]
    keep = [0]
    for i in range(1, len(pts)):
        if np.linalg.norm(pts[i] - pts[keep[-1]]) > 1e-9:
            keep.append(i)
    if np.linalg.norm(pts[keep[-1]] - pts[keep[0]]) <= 1e-9 and len(keep) > 1:
        keep.pop()
    return pts[keep]


def polygon_area(vertices: np.ndarray) -> float:
    """Shoelace area of a counter-clockwise vertex loop."""
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segment_point_distances(points: np.ndarray, seg_a: np.ndarray,
                             seg_b: np.ndarray) -> np.ndarray:
    """Distance of each point (n, 2) to each segment (m, 2)-(m, 2): (n, m)."""
    d = seg_b - seg_a                                   # (m, 2)
    len2 = np.maximum(np.einsum("md,md->m", d, d), 1e-300)
    ap = points[:, None, :] - seg_a[None, :, :]         # (n, m, 2)
    t = np.clip(np.einsum("nmd,md->nm", ap, d) / len2, 0.0, 1.0)
    closest = seg_a[None, :, :] + t[..., None] * d[None, :, :]
    return np.linalg.norm(points[:, None, :] - closest, axis=2)


def _polygons_overlap(vp: np.ndarray, vq: np.ndarray) -> bool:
    """Separating-axis test for two convex CCW polygons."""
    for verts in (vp, vq):
        edges = np.roll(verts, -1, axis=0) - verts
        axes = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
        for ax in axes:
            p_proj = vp @ ax
            q_proj = vq @ ax
            if p_proj.max() < q_proj.min() or q_proj.max() < p_proj.min():
                return False
    return True


def min_distance_oracle(p: ConvexPolytope, q: ConvexPolytope) -> float:
    """Exact minimum Euclidean distance between two bounded convex polytopes.

    Exhaustive vertex-to-edge enumeration, with a separating-axis overlap
    test so intersecting sets report exactly 0. Verification oracle only.
    """
    vp, vq = p.vertices(), q.vertices()
    if _polygons_overlap(vp, vq):
        return 0.0
    eq_a, eq_b = vq, np.roll(vq, -1, axis=0)
    ep_a, ep_b = vp, np.roll(vp, -1, axis=0)
    d1 = _segment_point_distances(vp, eq_a, eq_b).min()
    d2 = _segment_point_distances(vq, ep_a, ep_b).min()
    return float(min(d1, d2))


def closest_points(p: ConvexPolytope, q: ConvexPolytope) -> tuple[np.ndarray, np.ndarray, float]:
    """A realizing pair (X in P, Y in Q) of the minimum distance, plus the value."""
    vp, vq = p.vertices(), q.vertices()
    if _polygons_overlap(vp, vq):
        # any common point would do; not needed by callers when distance is 0
        raise ValueError("polytopes overlap; closest pair is not unique")
    best = (None, None, np.inf)
    for pts, verts in ((vp, vq), (vq, vp)):
        seg_a, seg_b = verts, np.roll(verts, -1, axis=0)
        d = seg_b - seg_a
        len2 = np.maximum(np.einsum("md,md->m", d, d), 1e-300)
        for x in pts:
            t = np.clip((d @ x - np.einsum("md,md->m", seg_a, d)) / len2, 0.0, 1.0)
            cand = seg_a + t[:, None] * d
            dist = np.linalg.norm(cand - x, axis=1)
            k = int(np.argmin(dist))
            if dist[k] < best[2]:
                if pts is vp:
                    best = (x.copy(), cand[k].copy(), float(dist[k]))
                else:
                    best = (cand[k].copy(), x.copy(), float(dist[k]))
    return best
