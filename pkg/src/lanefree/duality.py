"""Dual-form collision-avoidance residuals and separating hyperplanes.

For two convex sets {X : A_i X <= b_i} and {Y : A_j Y <= b_j}, the minimum
distance equals the optimum of

    max  -b_i' lam_fwd - b_j' lam_rev
    s.t. A_i' lam_fwd + s = 0,   A_j' lam_rev - s = 0,
         ||s||_2 <= 1,           lam_fwd, lam_rev >= 0.

Any feasible block whose value reaches d_min therefore certifies a
separation of at least d_min; the planner imposes exactly that existence
condition. This module evaluates the residuals, their derivatives with
respect to both poses and all dual variables, and recovers the separating
hyperplane from a feasible block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ConvexPolytope, rotation


@dataclass(frozen=True)
class DualBlock:
    """Dual variables certifying separation of one pair at one time point."""

    lam_fwd: np.ndarray   # (k_first,) >= 0
    lam_rev: np.ndarray   # (k_second,) >= 0
    s: np.ndarray         # (2,), ||s|| <= 1 at feasibility

    def __post_init__(self):
        object.__setattr__(self, "lam_fwd", np.asarray(self.lam_fwd, dtype=float))
        object.__setattr__(self, "lam_rev", np.asarray(self.lam_rev, dtype=float))
        object.__setattr__(self, "s", np.asarray(self.s, dtype=float))
        if self.s.shape != (2,):
            raise ValueError("s must be a 2-vector")


@dataclass(frozen=True)
class SeparatingHyperplane:
    """Line {X : normal . X = offset} with the first body on the <= side."""

    normal: np.ndarray
    offset: float

    def side(self, point) -> float:
        return float(self.normal @ np.asarray(point, dtype=float) - self.offset)


@dataclass(frozen=True)
class ResidualBundle:
    """Signed residuals of one dual block; feasibility is gap >= 0,
    eq_first = eq_second = 0, norm_margin >= 0."""

    gap: float              # dual value minus the required clearance
    eq_first: np.ndarray    # (2,) A_i' lam_fwd + s
    eq_second: np.ndarray   # (2,) A_j' lam_rev - s
    norm_margin: float      # 1 - ||s||_2

    def max_equality_error(self) -> float:
        return float(max(np.abs(self.eq_first).max(), np.abs(self.eq_second).max()))


def pair_residuals(first: ConvexPolytope, second: ConvexPolytope,
                   block: DualBlock, d_min: float) -> ResidualBundle:
    """Residuals of the separation certificate for a body/body pair."""
    _check_dims(first, second, block)
    value = -float(first.b @ block.lam_fwd) - float(second.b @ block.lam_rev)
    return ResidualBundle(
        gap=value - d_min,
        eq_first=first.a.T @ block.lam_fwd + block.s,
        eq_second=second.a.T @ block.lam_rev - block.s,
        norm_margin=1.0 - float(np.linalg.norm(block.s)),
    )


def road_residuals(body: ConvexPolytope, block_poly: ConvexPolytope,
                   block: DualBlock, d_rmin: float) -> ResidualBundle:
    """Residuals for a body/road-boundary pair; same certificate template."""
    return pair_residuals(body, block_poly, block, d_rmin)


def recover_hyperplane(first: ConvexPolytope, second: ConvexPolytope,
                       block: DualBlock, eq_tol: float = 1e-6) -> SeparatingHyperplane:
    """Separating hyperplane of a feasible block with a positive gap.

    The normal points from the first body toward the second and the offset
    sits midway between the two supporting levels, so the bodies' margins
    sum to (dual value)/||s||.
    """
    bundle = pair_residuals(first, second, block, d_min=0.0)
    if bundle.max_equality_error() > eq_tol:
        raise ValueError("dual block does not satisfy the equality residuals")
    if bundle.gap <= 0.0:
        raise ValueError("dual block has no positive separation value")
    s_norm = float(np.linalg.norm(block.s))
    if s_norm < 1e-9:
        raise ValueError("degenerate dual block: s is numerically zero")
    normal = -block.s / s_norm
    level_first = float(first.b @ block.lam_fwd) / s_norm
    level_second = -float(second.b @ block.lam_rev) / s_norm
    return SeparatingHyperplane(normal=normal,
                                offset=0.5 * (level_first + level_second))


@dataclass(frozen=True)
class ResidualJacobians:
    """Derivatives of (gap, eq_first, eq_second, norm) for one pair.

    Pose derivatives are with respect to [x, y, theta] of each body given
    its base polytope; the posed polytopes are A(z) = A R(theta)' and
    b(z) = b + A R(theta)' p.
    """

    gap_lam_fwd: np.ndarray     # (k1,)
    gap_lam_rev: np.ndarray     # (k2,)
    gap_pose_first: np.ndarray  # (3,)
    gap_pose_second: np.ndarray  # (3,)
    eq_first_lam: np.ndarray    # (2, k1)
    eq_first_theta: np.ndarray  # (2,)
    eq_second_lam: np.ndarray   # (2, k2)
    eq_second_theta: np.ndarray  # (2,)
    norm_s: np.ndarray          # (2,) derivative of (1 - s's)


def _rot_prime(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[-s, -c], [c, -s]])


def pair_residual_jacobians(base_first: ConvexPolytope, pose_first,
                            base_second: ConvexPolytope, pose_second,
                            block: DualBlock) -> ResidualJacobians:
    """Analytic derivatives of the residual bundle.

    ``pose_second`` may be None for a fixed obstacle (road block), in which
    case ``base_second`` is taken in world frame and its pose derivatives
    are zero. The norm residual here is the smooth form 1 - s's used by the
    optimizer.
    """
    x1, y1, th1 = pose_first.x, pose_first.y, pose_first.theta
    r1, r1p = rotation(th1), _rot_prime(th1)
    w1 = base_first.a.T @ block.lam_fwd
    a1_world = base_first.a @ r1.T
    b1_world = base_first.b + a1_world @ np.array([x1, y1])

    if pose_second is not None:
        th2 = pose_second.theta
        r2, r2p = rotation(th2), _rot_prime(th2)
        w2 = base_second.a.T @ block.lam_rev
        a2_world = base_second.a @ r2.T
        b2_world = base_second.b + a2_world @ pose_second.position
        gap_pose_second = np.array([
            -(a2_world.T @ block.lam_rev)[0],
            -(a2_world.T @ block.lam_rev)[1],
            -float(pose_second.position @ (r2p @ w2)),
        ])
        eq_second_lam = r2 @ base_second.a.T
        eq_second_theta = r2p @ w2
    else:
        b2_world = base_second.b
        gap_pose_second = np.zeros(3)
        eq_second_lam = base_second.a.T.astype(float)
        eq_second_theta = np.zeros(2)

    grad1 = a1_world.T @ block.lam_fwd
    return ResidualJacobians(
        gap_lam_fwd=-b1_world,
        gap_lam_rev=-b2_world,
        gap_pose_first=np.array([-grad1[0], -grad1[1],
                                 -float(np.array([x1, y1]) @ (r1p @ w1))]),
        gap_pose_second=gap_pose_second,
        eq_first_lam=r1 @ base_first.a.T,
        eq_first_theta=r1p @ w1,
        eq_second_lam=eq_second_lam,
        eq_second_theta=eq_second_theta,
        norm_s=-2.0 * block.s,
    )


def face_aligned_block(first: ConvexPolytope, second: ConvexPolytope,
                       direction: np.ndarray, scale: float = 1.0) -> DualBlock:
    """Feasible dual block whose s lies along ``-direction``.

    ``direction`` must be a unit vector from the first body toward the
    second. Multipliers are the positive parts of each face normal's
    component along the direction; for rectangles (whose normals come in
    orthogonal +/- pairs) this satisfies both equality residuals exactly.
    """
    u = np.asarray(direction, dtype=float)
    lam_fwd = np.maximum(first.a @ u, 0.0) * scale
    lam_rev = np.maximum(second.a @ (-u), 0.0) * scale
    return DualBlock(lam_fwd=lam_fwd, lam_rev=lam_rev, s=-u * scale)


def _check_dims(first: ConvexPolytope, second: ConvexPolytope, block: DualBlock):
    if block.lam_fwd.shape != (first.nfaces,):
        raise ValueError(
            f"lam_fwd has {block.lam_fwd.shape[0]} entries, "
            f"first polytope has {first.nfaces} faces")
    if block.lam_rev.shape != (second.nfaces,):
        raise ValueError(
            f"lam_rev has {block.lam_rev.shape[0]} entries, "
            f"second polytope has {second.nfaces} faces")
