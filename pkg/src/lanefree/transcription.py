"""Direct collocation transcription of the free-final-time crossing problem.

Time is rescaled to tau in [0, 1] via t = t0 + tau * (t_f - t0), which turns
the free final time into an ordinary decision variable multiplying the
dynamics. States live on a collocation node grid, inputs are piecewise
constant per interval, and one dual block (lam_fwd, lam_rev, s) per
vehicle pair and per vehicle/road-boundary pair is attached to every node.

The planner's cost is

    alpha * (t_f - t0)^2
      + sum_i  mean over tau of (z_i - z_i_goal)' Q (z_i - z_i_goal)
      + terminal_weight * sum_i (z_i(t_f) - z_i_goal)' Q (z_i(t_f) - z_i_goal)

The running deviation is averaged over the crossing (not accumulated in
real time) and the final pose carries a stiff anchor: accumulating it
instead would reward shrinking t_f toward zero, since nothing else in the
problem forces the vehicles to cross. Weakening Q trades final-pose
accuracy for crossing time, which is exactly the tuning behaviour the
domain calls for.

The resulting problem is a sparse NLP

    min  f(x)   s.t.  cl <= c(x) <= cu,  xl <= x <= xu

with analytic gradient, Jacobian and Lagrangian Hessian callbacks whose
sparsity patterns are fixed across evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import SimpleNamespace
from typing import Callable

import numpy as np
from scipy import sparse

from .dynamics import (INPUT_DIM, STATE_DIM, StabilityDerivatives,
                       hessian_kernel, jacobian_kernel, rate_kernel,
                       stability_derivatives)
from .geometry import base_body_polytope
from .scenario import POSE_DIMS, CrossingSolution, Scenario

IDELTA_COMBINED = STATE_DIM + 1   # steering column in the [state; input] block


# ---------------------------------------------------------------------------
# Collocation basis helpers

def collocation_points(degree: int, scheme: str = "radau") -> np.ndarray:
    """The degree collocation points on (0, 1]; Radau includes the endpoint."""
    if not 1 <= degree <= 9:
        raise ValueError("collocation degree must be in [1, 9]")
    if scheme == "radau":
        # roots of P_{d-1} - P_d on [-1, 1], mapped to (0, 1]
        coeffs = np.zeros(degree + 1)
        coeffs[degree - 1] = 1.0
        coeffs[degree] = -1.0
        roots = np.sort(np.polynomial.legendre.legroots(coeffs))
        pts = (roots + 1.0) / 2.0
        pts[-1] = 1.0
        return pts
    if scheme == "legendre":
        roots, _ = np.polynomial.legendre.leggauss(degree)
        return (np.sort(roots) + 1.0) / 2.0
    raise ValueError(f"unknown collocation scheme {scheme!r}")


def lagrange_basis(nodes: np.ndarray) -> list[np.poly1d]:
    polys = []
    for r, node in enumerate(nodes):
        p = np.poly1d([1.0])
        for s, other in enumerate(nodes):
            if s != r:
                p *= np.poly1d([1.0, -other]) / (node - other)
        polys.append(p)
    return polys


def derivative_matrix(nodes: np.ndarray) -> np.ndarray:
    """C[j, r] = dL_r/dtau evaluated at nodes[j] (full square matrix)."""
    basis = lagrange_basis(nodes)
    return np.column_stack([p.deriv()(nodes) for p in basis])


def quadrature_weights(nodes: np.ndarray) -> np.ndarray:
    """Integral of each Lagrange basis polynomial over [0, 1]."""
    return np.array([p.integ()(1.0) - p.integ()(0.0)
                     for p in lagrange_basis(nodes)])


def end_weights(nodes: np.ndarray) -> np.ndarray:
    """L_r(1) for each basis polynomial (continuity extrapolation)."""
    return np.array([p(1.0) for p in lagrange_basis(nodes)])


def lagrange_eval(nodes: np.ndarray, values: np.ndarray,
                  queries: np.ndarray) -> np.ndarray:
    """Evaluate the interpolating polynomial at query points.

    values is (len(nodes), dims); returns (len(queries), dims).
    Barycentric form, exact at the nodes.
    """
    weights = np.empty(len(nodes))
    for r, node in enumerate(nodes):
        weights[r] = 1.0 / np.prod(node - np.delete(nodes, r))
    out = np.empty((len(queries), values.shape[1]))
    for qi, t in enumerate(queries):
        diff = t - nodes
        hit = np.argmin(np.abs(diff))
        if abs(diff[hit]) < 1e-13:
            out[qi] = values[hit]
            continue
        coeff = weights / diff
        out[qi] = (coeff @ values) / coeff.sum()
    return out


# ---------------------------------------------------------------------------
# Problem configuration and layout

@dataclass(frozen=True)
class TranscriptionConfig:
    n_intervals: int = 15     # prediction horizon N_p
    degree: int = 5           # collocation points per interval
    scheme: str = "radau"     # "radau" | "legendre"
    scale_time: bool = True   # keep the free-final-time rescaling on
    tf_min: float = 0.1
    tf_max: float = 60.0
    dense_dt: float = 0.01    # resolution of extracted trajectories
    # clearance pad enforced on top of d_min/d_rmin inside the NLP only,
    # absorbing the dips a trajectory can take between enforcement points
    safety_margin: float = 0.05
    # state boxes (V, r, beta) are tightened by this much at the nodes so
    # the interpolated trajectory cannot wiggle past the true limits
    bound_margin: float = 2e-3

    def __post_init__(self):
        if self.n_intervals < 1:
            raise ValueError("need at least one interval")
        if self.scheme not in ("radau", "legendre"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.safety_margin < 0.0 or self.bound_margin < 0.0:
            raise ValueError("margins must be >= 0")
        collocation_points(self.degree, self.scheme)


@dataclass
class PairInfo:
    key: str
    first: str              # cav id
    second: str | int       # cav id or road block index
    k_first: int
    k_second: int
    dual_offset: int        # start of this pair's dual variables
    row_offset: int         # start of this pair's constraint rows
    extra_taus: tuple[float, ...] = ()   # refinement enforcement points

    @property
    def block(self) -> int:
        return self.k_first + self.k_second + 2

    @property
    def is_road(self) -> bool:
        return isinstance(self.second, int)

    @property
    def n_extra(self) -> int:
        return len(self.extra_taus)


@dataclass
class VariableLayout:
    """Named slices of the decision vector and of the constraint vector."""

    total: int
    n_rows: int
    tf_index: int
    n_nodes: int
    tau_nodes: np.ndarray
    node_weights: np.ndarray                 # quadrature weight per node
    input_slices: dict[str, slice]
    state_slices: dict[str, slice]
    defect_slices: dict[str, slice]
    continuity_slices: dict[str, slice]
    pairs: list[PairInfo]
    bound_slices: dict[str, slice] = field(default_factory=dict)
    bound_taus: dict[str, tuple[float, ...]] = field(default_factory=dict)

    def state_index(self, cav_id: str, node: int, dim: int) -> int:
        return self.state_slices[cav_id].start + node * STATE_DIM + dim

    def input_index(self, cav_id: str, interval: int, dim: int) -> int:
        return self.input_slices[cav_id].start + interval * INPUT_DIM + dim

    def dual_slice(self, pair: PairInfo, point: int) -> slice:
        start = pair.dual_offset + point * pair.block
        return slice(start, start + pair.block)

    def describe_row(self, row: int) -> str:
        for cav_id, sl in self.defect_slices.items():
            if sl.start <= row < sl.stop:
                return f"defect[{cav_id}]@{row - sl.start}"
        for cav_id, sl in self.continuity_slices.items():
            if sl.start <= row < sl.stop:
                return f"continuity[{cav_id}]@{row - sl.start}"
        for pair in self.pairs:
            n_rows = 6 * (self.n_nodes + pair.n_extra)
            if pair.row_offset <= row < pair.row_offset + n_rows:
                local = row - pair.row_offset
                point, kind = divmod(local, 6)
                name = ["gap", "eq1x", "eq1y", "eq2x", "eq2y", "norm"][kind]
                where = (f"node{point}" if point < self.n_nodes
                         else f"extra{point - self.n_nodes}")
                return f"dual[{pair.key}]@{where}:{name}"
        for cav_id, sl in self.bound_slices.items():
            if sl.start <= row < sl.stop:
                local = row - sl.start
                point, kind = divmod(local, 6)
                name = ["r_lo", "r_hi", "beta_lo", "beta_hi",
                        "V_lo", "V_hi"][kind]
                return f"bound[{cav_id}]@extra{point}:{name}"
        return f"row{row}"


@dataclass
class NlpProblem:
    """Sparse NLP with analytic derivatives and a fixed sparsity pattern."""

    n: int
    m: int
    layout: VariableLayout
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    constraints: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], sparse.csr_matrix]
    hessian: Callable[[np.ndarray, float, np.ndarray], sparse.csr_matrix]
    x_lower: np.ndarray
    x_upper: np.ndarray
    c_lower: np.ndarray
    c_upper: np.ndarray
    jacobian_pattern: tuple[np.ndarray, np.ndarray] = None
    scenario: Scenario = None
    config: TranscriptionConfig = None


# ---------------------------------------------------------------------------
# Assembler

class _Grid:
    """Node bookkeeping for one collocation scheme."""

    def __init__(self, cfg: TranscriptionConfig):
        self.cfg = cfg
        self.np_ = cfg.n_intervals
        self.d = cfg.degree
        self.h = 1.0 / cfg.n_intervals
        pts = collocation_points(cfg.degree, cfg.scheme)
        self.local_nodes = np.concatenate([[0.0], pts])     # d+1 local points
        self.basis = lagrange_basis(self.local_nodes)
        self.cmat = derivative_matrix(self.local_nodes)     # (d+1, d+1)
        self.bvec = quadrature_weights(self.local_nodes)
        self.endw = end_weights(self.local_nodes)
        self.shared_endpoint = cfg.scheme == "radau"

        if self.shared_endpoint:
            self.n_nodes = self.np_ * self.d + 1
            self.local_index = np.array(
                [[k * self.d + r for r in range(self.d + 1)]
                 for k in range(self.np_)])
        else:
            self.n_nodes = self.np_ * (self.d + 1) + 1
            self.local_index = np.array(
                [[k * (self.d + 1) + r for r in range(self.d + 1)]
                 for k in range(self.np_)])
        self.knot_index = np.array(
            [self.local_index[k, 0] for k in range(self.np_)]
            + [self.n_nodes - 1])

        tau = np.zeros(self.n_nodes)
        for k in range(self.np_):
            tau[self.local_index[k]] = (k + self.local_nodes) * self.h
        tau[-1] = 1.0
        self.tau_nodes = tau

        weights = np.zeros(self.n_nodes)
        for k in range(self.np_):
            weights[self.local_index[k]] += self.h * self.bvec
        self.node_weights = weights

    def interval_of(self, tau: float) -> int:
        return min(int(tau * self.np_), self.np_ - 1)

    def point_weights(self, tau: float) -> tuple[int, np.ndarray]:
        """Interval index and Lagrange weights of an arbitrary tau in [0,1]."""
        k = self.interval_of(tau)
        local = tau * self.np_ - k
        return k, np.array([p(local) for p in self.basis])


class _Assembler:
    def __init__(self, sc: Scenario, cfg: TranscriptionConfig,
                 extra_duality=None, extra_bounds=None):
        self.sc = sc
        self.cfg = cfg
        self.grid = _Grid(cfg)
        self.t0 = sc.t0
        self.extra_duality = {k: tuple(sorted(v))
                              for k, v in (extra_duality or {}).items() if v}
        self.extra_bounds = {k: tuple(sorted(v))
                             for k, v in (extra_bounds or {}).items() if v}
        self.derivs: dict[str, StabilityDerivatives] = {
            c.cav_id: stability_derivatives(c.params) for c in sc.cavs}
        self.bodies = {c.cav_id: base_body_polytope(c.params) for c in sc.cavs}
        self.goals = {c.cav_id: c.goal.as_array() for c in sc.cavs}
        self._build_layout()
        # per-node deviation weights: quadrature mean plus terminal anchor
        self.obj_weights = self.grid.node_weights.copy()
        self.obj_weights[-1] += sc.terminal_weight
        self._build_bounds()
        self._build_patterns()

    # -- layout ------------------------------------------------------------

    def _build_layout(self):
        g = self.grid
        sc = self.sc
        pos = 1                      # x[0] is t_f
        input_slices, state_slices = {}, {}
        for cav in sc.cavs:
            input_slices[cav.cav_id] = slice(pos, pos + g.np_ * INPUT_DIM)
            pos += g.np_ * INPUT_DIM
            state_slices[cav.cav_id] = slice(pos, pos + g.n_nodes * STATE_DIM)
            pos += g.n_nodes * STATE_DIM

        pairs: list[PairInfo] = []
        ids = [c.cav_id for c in sc.cavs]

        def add_pair(key, first, second, k1, k2):
            nonlocal pos
            extras = self.extra_duality.get(key, ())
            pairs.append(PairInfo(key, first, second, k1, k2, pos, -1,
                                  extra_taus=extras))
            pos += (g.n_nodes + len(extras)) * (k1 + k2 + 2)

        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                add_pair(f"{ids[i]}|{ids[j]}", ids[i], ids[j],
                         self.bodies[ids[i]].nfaces,
                         self.bodies[ids[j]].nfaces)
        for cav_id in ids:
            for r, block in enumerate(sc.layout.blocks):
                add_pair(f"{cav_id}|road{r}", cav_id, r,
                         self.bodies[cav_id].nfaces, block.nfaces)
        total = pos

        row = 0
        defect_slices, continuity_slices = {}, {}
        for cav in sc.cavs:
            n_def = g.np_ * g.d * STATE_DIM
            defect_slices[cav.cav_id] = slice(row, row + n_def)
            row += n_def
            if not g.shared_endpoint:
                continuity_slices[cav.cav_id] = slice(
                    row, row + g.np_ * STATE_DIM)
                row += g.np_ * STATE_DIM
        for pair in pairs:
            pair.row_offset = row
            row += 6 * (g.n_nodes + pair.n_extra)
        bound_slices, bound_taus = {}, {}
        for cav in sc.cavs:
            taus = self.extra_bounds.get(cav.cav_id, ())
            if taus:
                bound_slices[cav.cav_id] = slice(row, row + 6 * len(taus))
                bound_taus[cav.cav_id] = taus
                row += 6 * len(taus)

        # precomputed interpolation data for every extra enforcement point
        self._pair_interp = {}
        for pair in pairs:
            if pair.n_extra:
                ks, ws = zip(*(g.point_weights(t) for t in pair.extra_taus))
                self._pair_interp[pair.key] = (np.array(ks),
                                               np.array(ws))
        self._bound_interp = {}
        for cav_id, taus in bound_taus.items():
            ks, ws = zip(*(g.point_weights(t) for t in taus))
            self._bound_interp[cav_id] = (np.array(ks), np.array(ws))

        self.layout = VariableLayout(
            total=total, n_rows=row, tf_index=0, n_nodes=g.n_nodes,
            tau_nodes=g.tau_nodes, node_weights=g.node_weights,
            input_slices=input_slices, state_slices=state_slices,
            defect_slices=defect_slices, continuity_slices=continuity_slices,
            pairs=pairs, bound_slices=bound_slices, bound_taus=bound_taus)

    # -- bounds ------------------------------------------------------------

    def _build_bounds(self):
        lay = self.layout
        sc = self.sc
        inf = np.inf
        xl = np.full(lay.total, -inf)
        xu = np.full(lay.total, inf)
        xl[0] = self.t0 + self.cfg.tf_min
        xu[0] = self.t0 + self.cfg.tf_max
        bm = self.cfg.bound_margin
        for cav in sc.cavs:
            b = cav.bounds
            u = lay.input_slices[cav.cav_id]
            ushape = np.reshape(np.arange(u.start, u.stop), (-1, INPUT_DIM))
            xl[ushape[:, 0]], xu[ushape[:, 0]] = -b.a_max, b.a_max
            xl[ushape[:, 1]], xu[ushape[:, 1]] = -b.delta_max, b.delta_max
            s = lay.state_slices[cav.cav_id]
            sshape = np.reshape(np.arange(s.start, s.stop), (-1, STATE_DIM))
            xl[sshape[:, 0]], xu[sshape[:, 0]] = -b.r_max + bm, b.r_max - bm
            xl[sshape[:, 1]], xu[sshape[:, 1]] = \
                -b.beta_max + bm, b.beta_max - bm
            xl[sshape[:, 2]], xu[sshape[:, 2]] = b.v_min + bm, b.v_max - bm
            x0 = np.array([0.0, 0.0, cav.v0,
                           cav.start.x, cav.start.y, cav.start.theta])
            xl[sshape[0]] = xu[sshape[0]] = x0
        for pair in lay.pairs:
            lam_len = pair.k_first + pair.k_second
            for point in range(lay.n_nodes + pair.n_extra):
                sl = lay.dual_slice(pair, point)
                xl[sl.start:sl.start + lam_len] = 0.0
        self.x_lower, self.x_upper = xl, xu

        cl = np.zeros(lay.n_rows)
        cu = np.zeros(lay.n_rows)
        for pair in lay.pairs:
            rows = np.arange(pair.row_offset, pair.row_offset
                             + 6 * (lay.n_nodes + pair.n_extra))
            rows = rows.reshape(-1, 6)
            cu[rows[:, 0]] = inf      # gap row: >= 0
            cu[rows[:, 5]] = inf      # norm row: >= 0
        for cav in sc.cavs:
            sl = lay.bound_slices.get(cav.cav_id)
            if sl is None:
                continue
            rows = np.arange(sl.start, sl.stop).reshape(-1, 6)
            b = cav.bounds
            cl[rows[:, 0]], cu[rows[:, 0]] = -b.r_max + bm, inf
            cl[rows[:, 1]], cu[rows[:, 1]] = -inf, b.r_max - bm
            cl[rows[:, 2]], cu[rows[:, 2]] = -b.beta_max + bm, inf
            cl[rows[:, 3]], cu[rows[:, 3]] = -inf, b.beta_max - bm
            cl[rows[:, 4]], cu[rows[:, 4]] = b.v_min + bm, inf
            cl[rows[:, 5]], cu[rows[:, 5]] = -inf, b.v_max - bm
        self.c_lower, self.c_upper = cl, cu

    # -- fixed index patterns ------------------------------------------------

    def _state_grid(self, cav_id: str) -> np.ndarray:
        s = self.layout.state_slices[cav_id]
        return np.arange(s.start, s.stop).reshape(-1, STATE_DIM)

    def _input_grid(self, cav_id: str) -> np.ndarray:
        s = self.layout.input_slices[cav_id]
        return np.arange(s.start, s.stop).reshape(-1, INPUT_DIM)

    def _build_patterns(self):
        g, lay = self.grid, self.layout
        jrows, jcols = [], []
        hrows, hcols = [], []
        self._dyn_hess_keys = [(0, 2), (1, 2), (2, 2), (2, 5), (5, 5),
                               (2, IDELTA_COMBINED)]

        # objective Hessian pattern: (tf, tf) and per-node pose blocks
        hrows.append([0])
        hcols.append([0])
        for cav in self.sc.cavs:
            sg = self._state_grid(cav.cav_id)
            pose_cols = sg[:, POSE_DIMS]                      # (n_nodes, 3)
            rr = np.repeat(pose_cols, 3, axis=1).ravel()      # row-major 3x3
            cc = np.tile(pose_cols, (1, 3)).ravel()
            hrows.append(rr)
            hcols.append(cc)

        for cav in self.sc.cavs:
            cav_id = cav.cav_id
            sg = self._state_grid(cav_id)
            ug = self._input_grid(cav_id)
            dsl = lay.defect_slices[cav_id]
            drows = np.arange(dsl.start, dsl.stop).reshape(
                g.np_, g.d, STATE_DIM)
            node_cols = sg[g.local_index]              # (np, d+1, 6)
            coll_cols = node_cols[:, 1:, :]            # (np, d, 6)

            # interpolation-derivative part: rows (k,m,i) x cols (k,r,i)
            r1 = np.broadcast_to(drows[:, :, :, None],
                                 (g.np_, g.d, STATE_DIM, g.d + 1))
            c1 = np.broadcast_to(
                np.transpose(node_cols, (0, 2, 1))[:, None, :, :],
                (g.np_, g.d, STATE_DIM, g.d + 1))
            jrows.append(r1.ravel())
            jcols.append(c1.ravel())

            # dynamics Jacobian wrt states at the collocation node
            r2 = np.broadcast_to(drows[:, :, :, None],
                                 (g.np_, g.d, STATE_DIM, STATE_DIM))
            c2 = np.broadcast_to(coll_cols[:, :, None, :],
                                 (g.np_, g.d, STATE_DIM, STATE_DIM))
            jrows.append(r2.ravel())
            jcols.append(c2.ravel())

            # dynamics Jacobian wrt inputs
            r3 = np.broadcast_to(drows[:, :, :, None],
                                 (g.np_, g.d, STATE_DIM, INPUT_DIM))
            c3 = np.broadcast_to(ug[:, None, None, :],
                                 (g.np_, g.d, STATE_DIM, INPUT_DIM))
            jrows.append(r3.ravel())
            jcols.append(c3.ravel())

            # t_f column
            jrows.append(drows.ravel())
            jcols.append(np.zeros(drows.size, dtype=np.int64))

            if not g.shared_endpoint:
                csl = lay.continuity_slices[cav_id]
                crows = np.arange(csl.start, csl.stop).reshape(
                    g.np_, STATE_DIM)
                r4 = np.broadcast_to(crows[:, :, None],
                                     (g.np_, STATE_DIM, g.d + 1))
                c4 = np.broadcast_to(
                    np.transpose(node_cols, (0, 2, 1)),
                    (g.np_, STATE_DIM, g.d + 1))
                jrows.append(r4.ravel())
                jcols.append(c4.ravel())
                knot_cols = sg[g.knot_index[1:]]       # (np, 6)
                jrows.append(crows.ravel())
                jcols.append(knot_cols.ravel())

            # defect Hessian pattern: cross tf-x, tf-u, and curvature entries
            flat_states = coll_cols.reshape(-1, STATE_DIM)
            flat_inputs = np.broadcast_to(
                ug[:, None, :], (g.np_, g.d, INPUT_DIM)).reshape(-1, INPUT_DIM)
            for block in (flat_states, flat_inputs):
                f = block.ravel()
                hrows.append(np.zeros(f.size, dtype=np.int64))
                hcols.append(f)
                hrows.append(f)
                hcols.append(np.zeros(f.size, dtype=np.int64))
            combined = np.concatenate([flat_states, flat_inputs], axis=1)
            for (i, j) in self._dyn_hess_keys:
                hrows.append(combined[:, i])
                hcols.append(combined[:, j])
                if i != j:
                    hrows.append(combined[:, j])
                    hcols.append(combined[:, i])

        for pair in lay.pairs:
            k1, k2 = pair.k_first, pair.k_second
            n = lay.n_nodes
            rows = np.arange(pair.row_offset,
                             pair.row_offset + 6 * n).reshape(n, 6)
            dual_cols = np.arange(
                pair.dual_offset,
                pair.dual_offset + n * pair.block).reshape(n, pair.block)
            lam1 = dual_cols[:, :k1]
            lam2 = dual_cols[:, k1:k1 + k2]
            s_cols = dual_cols[:, k1 + k2:]
            pose1 = self._state_grid(pair.first)[:, POSE_DIMS]
            pose2 = (None if pair.is_road
                     else self._state_grid(pair.second)[:, POSE_DIMS])

            gap = rows[:, 0]
            eq1 = rows[:, 1:3]
            eq2 = rows[:, 3:5]
            norm = rows[:, 5]

            def emit(r, c):
                jrows.append(np.asarray(r).ravel())
                jcols.append(np.asarray(c).ravel())

            emit(np.repeat(gap, k1), lam1)
            emit(np.repeat(gap, k2), lam2)
            emit(np.repeat(gap, 3), pose1)
            if pose2 is not None:
                emit(np.repeat(gap, 3), pose2)
            emit(np.repeat(eq1, k1, axis=1), np.tile(lam1, (1, 2)))
            emit(eq1, np.broadcast_to(pose1[:, 2:3], (n, 2)))
            emit(eq1, s_cols)
            emit(np.repeat(eq2, k2, axis=1), np.tile(lam2, (1, 2)))
            if pose2 is not None:
                emit(eq2, np.broadcast_to(pose2[:, 2:3], (n, 2)))
            emit(eq2, s_cols)
            emit(np.repeat(norm, 2), s_cols)

            def hemit(r, c, sym=True):
                r = np.asarray(r).ravel()
                c = np.asarray(c).ravel()
                hrows.append(r)
                hcols.append(c)
                if sym:
                    hrows.append(c)
                    hcols.append(r)

            for poseN, lamN, kN in (((pose1, lam1, k1),)
                                    + (() if pose2 is None
                                       else ((pose2, lam2, k2),))):
                p_cols = poseN[:, :2]
                th_col = poseN[:, 2]
                hemit(p_cols, np.broadcast_to(th_col[:, None], (n, 2)))
                hemit(th_col, th_col, sym=False)
                hemit(np.repeat(p_cols, kN, axis=1),
                      np.concatenate([lamN, lamN], axis=1))
                hemit(np.broadcast_to(th_col[:, None], (n, kN)), lamN)
            hemit(s_cols, s_cols, sym=False)          # diagonal -2*mu_norm

            if pair.n_extra:
                self._emit_extra_pair_pattern(pair, emit, hemit)

        for cav_id, sl in lay.bound_slices.items():
            ks, ws = self._bound_interp[cav_id]
            n_b = ks.size
            sg = self._state_grid(cav_id)
            node_ids = self.grid.local_index[ks]            # (n_b, d+1)
            rows_b = np.arange(sl.start, sl.stop).reshape(n_b, 6)
            dims = np.array([0, 0, 1, 1, 2, 2])
            # rows (n_b, 6, d+1); cols = state var of (node r, dim q)
            rr = np.broadcast_to(rows_b[:, :, None],
                                 (n_b, 6, ws.shape[1]))
            cols_q = np.stack([sg[node_ids][:, :, d] for d in dims],
                              axis=1)                       # (n_b, 6, d+1)
            jrows.append(rr.ravel())
            jcols.append(cols_q.ravel())

        self._jpattern = (np.concatenate(jrows), np.concatenate(jcols))
        self._hpattern = (np.concatenate(hrows), np.concatenate(hcols))

    def _extra_pair_cols(self, pair: PairInfo):
        """Index arrays for one pair's extra enforcement points."""
        lay = self.layout
        ks, ws = self._pair_interp[pair.key]
        n_e = ks.size
        d1 = ws.shape[1]
        node_ids = self.grid.local_index[ks]                 # (n_e, d+1)
        pose1 = self._state_grid(pair.first)[node_ids][:, :, POSE_DIMS]
        pose2 = (None if pair.is_road else
                 self._state_grid(pair.second)[node_ids][:, :, POSE_DIMS])
        base_row = pair.row_offset + 6 * lay.n_nodes
        rows = np.arange(base_row, base_row + 6 * n_e).reshape(n_e, 6)
        dual_start = pair.dual_offset + lay.n_nodes * pair.block
        dual_cols = np.arange(dual_start,
                              dual_start + n_e * pair.block).reshape(
            n_e, pair.block)
        k1, k2 = pair.k_first, pair.k_second
        return SimpleNamespace(
            n_e=n_e, d1=d1, ws=ws, rows=rows,
            pose1=pose1, pose2=pose2,
            lam1=dual_cols[:, :k1], lam2=dual_cols[:, k1:k1 + k2],
            s_cols=dual_cols[:, k1 + k2:])

    def _emit_extra_pair_pattern(self, pair: PairInfo, emit, hemit):
        ec = self._extra_pair_cols(pair)
        n_e, d1 = ec.n_e, ec.d1
        k1, k2 = pair.k_first, pair.k_second
        gap = ec.rows[:, 0]
        eq1 = ec.rows[:, 1:3]
        eq2 = ec.rows[:, 3:5]
        norm = ec.rows[:, 5]

        emit(np.repeat(gap, k1), ec.lam1)
        emit(np.repeat(gap, k2), ec.lam2)
        emit(np.repeat(gap, d1 * 3), ec.pose1)
        if ec.pose2 is not None:
            emit(np.repeat(gap, d1 * 3), ec.pose2)
        emit(np.repeat(eq1, k1, axis=1), np.tile(ec.lam1, (1, 2)))
        # eq1 wrt theta of every contributing node: (n_e, 2, d+1)
        th1 = ec.pose1[:, :, 2]
        emit(np.broadcast_to(eq1[:, :, None], (n_e, 2, d1)),
             np.broadcast_to(th1[:, None, :], (n_e, 2, d1)))
        emit(eq1, ec.s_cols)
        emit(np.repeat(eq2, k2, axis=1), np.tile(ec.lam2, (1, 2)))
        if ec.pose2 is not None:
            th2 = ec.pose2[:, :, 2]
            emit(np.broadcast_to(eq2[:, :, None], (n_e, 2, d1)),
                 np.broadcast_to(th2[:, None, :], (n_e, 2, d1)))
        emit(eq2, ec.s_cols)
        emit(np.repeat(norm, 2), ec.s_cols)

        sides = [(ec.pose1, ec.lam1, k1)]
        if ec.pose2 is not None:
            sides.append((ec.pose2, ec.lam2, k2))
        for poseN, lamN, kN in sides:
            p_xy = poseN[:, :, :2]                           # (n_e, d+1, 2)
            th = poseN[:, :, 2]                              # (n_e, d+1)
            # (p_r, theta_s) for all r, s: (n_e, r, s, 2)
            rr = np.broadcast_to(p_xy[:, :, None, :], (n_e, d1, d1, 2))
            cc = np.broadcast_to(th[:, None, :, None], (n_e, d1, d1, 2))
            hemit(rr, cc)
            # (theta_r, theta_s) full grid covers both triangles
            hemit(np.broadcast_to(th[:, :, None], (n_e, d1, d1)),
                  np.broadcast_to(th[:, None, :], (n_e, d1, d1)), sym=False)
            # (p_r, lam_k): (n_e, r, 2, k)
            rr = np.broadcast_to(p_xy[:, :, :, None], (n_e, d1, 2, kN))
            cc = np.broadcast_to(lamN[:, None, None, :], (n_e, d1, 2, kN))
            hemit(rr, cc)
            # (theta_r, lam_k): (n_e, r, k)
            rr = np.broadcast_to(th[:, :, None], (n_e, d1, kN))
            cc = np.broadcast_to(lamN[:, None, :], (n_e, d1, kN))
            hemit(rr, cc)
        hemit(ec.s_cols, ec.s_cols, sym=False)

    # -- evaluation ----------------------------------------------------------

    def _split(self, x):
        lay = self.layout
        tf = x[0]
        states = {cid: x[sl].reshape(-1, STATE_DIM)
                  for cid, sl in lay.state_slices.items()}
        inputs = {cid: x[sl].reshape(-1, INPUT_DIM)
                  for cid, sl in lay.input_slices.items()}
        return tf, states, inputs

    def objective(self, x) -> float:
        tf, states, _ = self._split(x)
        t_span = tf - self.t0
        val = self.sc.alpha * t_span * t_span
        for cav in self.sc.cavs:
            z = states[cav.cav_id][:, POSE_DIMS]
            dz = z - self.goals[cav.cav_id][None, :]
            q = np.einsum("ni,ij,nj->n", dz, self.sc.q, dz)
            val += float(self.obj_weights @ q)
        return float(val)

    def gradient(self, x) -> np.ndarray:
        lay = self.layout
        tf, states, _ = self._split(x)
        t_span = tf - self.t0
        grad = np.zeros(lay.total)
        grad[0] = 2.0 * self.sc.alpha * t_span
        qsym = self.sc.q + self.sc.q.T
        for cav in self.sc.cavs:
            sg = self._state_grid(cav.cav_id)
            dz = states[cav.cav_id][:, POSE_DIMS] - self.goals[cav.cav_id]
            grad[sg[:, POSE_DIMS]] += self.obj_weights[:, None] * (dz @ qsym)
        return grad

    def _dynamics_eval(self, x, want_jac=False):
        g = self.grid
        tf, states, inputs = self._split(x)
        out = {}
        for cav in self.sc.cavs:
            cid = cav.cav_id
            xloc = states[cid][g.local_index]          # (np, d+1, 6)
            xc = xloc[:, 1:, :]
            u = np.broadcast_to(inputs[cid][:, None, :],
                                (g.np_, g.d, INPUT_DIM))
            f = rate_kernel(xc, u, self.derivs[cid], cav.params)
            jx = ju = None
            if want_jac:
                jx = np.zeros((g.np_, g.d, STATE_DIM, STATE_DIM))
                ju = np.zeros((g.np_, g.d, STATE_DIM, INPUT_DIM))
                jacobian_kernel(xc, u, self.derivs[cid], cav.params, jx, ju)
            out[cid] = (xloc, xc, u, f, jx, ju)
        return tf, out

    def constraints(self, x) -> np.ndarray:
        g, lay = self.grid, self.layout
        tf, dyn = self._dynamics_eval(x)
        t_span = tf - self.t0
        c = np.zeros(lay.n_rows)
        for cav in self.sc.cavs:
            cid = cav.cav_id
            xloc, _, _, f, _, _ = dyn[cid]
            defect = np.einsum("mr,kri->kmi", g.cmat[1:], xloc) \
                - g.h * t_span * f
            c[lay.defect_slices[cid]] = defect.ravel()
            if not g.shared_endpoint:
                states = x[lay.state_slices[cid]].reshape(-1, STATE_DIM)
                endval = np.einsum("r,kri->ki", g.endw, xloc)
                knots = states[g.knot_index[1:]]
                c[lay.continuity_slices[cid]] = (endval - knots).ravel()
        for pair in lay.pairs:
            base = pair.row_offset
            c[base:base + 6 * lay.n_nodes] = self._pair_rows(pair, x)
            if pair.n_extra:
                c[base + 6 * lay.n_nodes:
                  base + 6 * (lay.n_nodes + pair.n_extra)] = \
                    self._pair_rows(pair, x, extra=True)
        for cav_id, sl in lay.bound_slices.items():
            st = self._interp_states(cav_id, x, self._bound_interp[cav_id])
            c[sl] = st[:, [0, 0, 1, 1, 2, 2]].ravel()
        return c

    def _interp_states(self, cav_id: str, x, interp) -> np.ndarray:
        """States at interpolated points: (n_pts, STATE_DIM)."""
        ks, ws = interp
        states = x[self.layout.state_slices[cav_id]].reshape(-1, STATE_DIM)
        local = states[self.grid.local_index[ks]]      # (n_pts, d+1, 6)
        return np.einsum("er,erd->ed", ws, local)

    def _pair_geometry(self, pair: PairInfo, x, extra: bool = False):
        """World-frame data for one pair, at the nodes or the extra points."""
        lay = self.layout
        if extra:
            n = pair.n_extra
            interp = self._pair_interp[pair.key]
            pose1 = self._interp_states(pair.first, x, interp)[:, POSE_DIMS]
            dual_start = pair.dual_offset + lay.n_nodes * pair.block
        else:
            n = lay.n_nodes
            states1 = x[lay.state_slices[pair.first]].reshape(-1, STATE_DIM)
            pose1 = states1[:, POSE_DIMS]
            dual_start = pair.dual_offset
        body1 = self.bodies[pair.first]
        duals = x[dual_start:dual_start + n * pair.block].reshape(
            n, pair.block)
        k1, k2 = pair.k_first, pair.k_second
        lam1, lam2 = duals[:, :k1], duals[:, k1:k1 + k2]
        s = duals[:, k1 + k2:]
        th1 = pose1[:, 2]
        rot1 = _rot_batch(th1)
        a1w = np.einsum("kd,ned->nke", body1.a, rot1)
        b1w = body1.b[None, :] + np.einsum("nke,ne->nk", a1w, pose1[:, :2])
        if pair.is_road:
            road = self.sc.layout.blocks[pair.second]
            a2w = np.broadcast_to(road.a[None], (n,) + road.a.shape)
            b2w = np.broadcast_to(road.b[None], (n,) + road.b.shape)
            pose2 = rot2 = None
            base2 = road
        else:
            if extra:
                pose2 = self._interp_states(pair.second, x,
                                            self._pair_interp[pair.key])[
                    :, POSE_DIMS]
            else:
                states2 = x[lay.state_slices[pair.second]].reshape(
                    -1, STATE_DIM)
                pose2 = states2[:, POSE_DIMS]
            base2 = self.bodies[pair.second]
            rot2 = _rot_batch(pose2[:, 2])
            a2w = np.einsum("kd,ned->nke", base2.a, rot2)
            b2w = base2.b[None, :] + np.einsum("nke,ne->nk", a2w,
                                               pose2[:, :2])
        return dict(pose1=pose1, pose2=pose2, rot1=rot1, rot2=rot2,
                    a1w=a1w, b1w=b1w, a2w=a2w, b2w=b2w,
                    lam1=lam1, lam2=lam2, s=s, base1=body1, base2=base2)

    def _pair_rows(self, pair: PairInfo, x, extra: bool = False) -> np.ndarray:
        geo = self._pair_geometry(pair, x, extra=extra)
        d_req = (self.sc.d_rmin if pair.is_road else self.sc.d_min) \
            + self.cfg.safety_margin
        gap = (-np.einsum("nk,nk->n", geo["b1w"], geo["lam1"])
               - np.einsum("nk,nk->n", geo["b2w"], geo["lam2"]) - d_req)
        eq1 = np.einsum("nke,nk->ne", geo["a1w"], geo["lam1"]) + geo["s"]
        eq2 = np.einsum("nke,nk->ne", geo["a2w"], geo["lam2"]) - geo["s"]
        norm = 1.0 - np.einsum("ne,ne->n", geo["s"], geo["s"])
        rows = np.empty((gap.size, 6))
        rows[:, 0] = gap
        rows[:, 1:3] = eq1
        rows[:, 3:5] = eq2
        rows[:, 5] = norm
        return rows.ravel()

    def jacobian_data(self, x) -> np.ndarray:
        g, lay = self.grid, self.layout
        tf, dyn = self._dynamics_eval(x, want_jac=True)
        t_span = tf - self.t0
        data = []
        for cav in self.sc.cavs:
            cid = cav.cav_id
            xloc, _, _, f, jx, ju = dyn[cid]
            cpart = np.broadcast_to(
                g.cmat[1:][None, :, None, :],
                (g.np_, g.d, STATE_DIM, g.d + 1)).copy()
            data.append(cpart.ravel())
            data.append((-g.h * t_span * jx).ravel())
            data.append((-g.h * t_span * ju).ravel())
            data.append((-g.h * f).ravel())
            if not g.shared_endpoint:
                endpart = np.broadcast_to(
                    g.endw[None, None, :], (g.np_, STATE_DIM, g.d + 1))
                data.append(endpart.ravel())
                data.append(np.full(g.np_ * STATE_DIM, -1.0))
        for pair in lay.pairs:
            data.append(self._pair_jacobian_data(pair, x))
            if pair.n_extra:
                data.append(self._pair_extra_jacobian_data(pair, x))
        for cav_id in lay.bound_slices:
            ks, ws = self._bound_interp[cav_id]
            data.append(np.broadcast_to(
                ws[:, None, :], (ks.size, 6, ws.shape[1])).ravel())
        return np.concatenate(data)

    def _pair_jacobian_data(self, pair: PairInfo, x) -> np.ndarray:
        n = self.layout.n_nodes
        geo = self._pair_geometry(pair, x)
        rot1p = _rot_prime_batch(geo["pose1"][:, 2])
        w1 = np.einsum("kd,nk->nd", geo["base1"].a, geo["lam1"])
        parts = [(-geo["b1w"]).ravel(), (-geo["b2w"]).ravel()]

        grad_p1 = -np.einsum("nke,nk->ne", geo["a1w"], geo["lam1"])
        grad_th1 = -np.einsum("ne,ne->n", geo["pose1"][:, :2],
                              np.einsum("ned,nd->ne", rot1p, w1))
        parts.append(np.concatenate(
            [grad_p1, grad_th1[:, None]], axis=1).ravel())

        if not pair.is_road:
            rot2p = _rot_prime_batch(geo["pose2"][:, 2])
            w2 = np.einsum("kd,nk->nd", geo["base2"].a, geo["lam2"])
            grad_p2 = -np.einsum("nke,nk->ne", geo["a2w"], geo["lam2"])
            grad_th2 = -np.einsum("ne,ne->n", geo["pose2"][:, :2],
                                  np.einsum("ned,nd->ne", rot2p, w2))
            parts.append(np.concatenate(
                [grad_p2, grad_th2[:, None]], axis=1).ravel())

        # eq1 wrt lam1: rows (n, 2, k1) = a1w transposed per node
        parts.append(np.transpose(geo["a1w"], (0, 2, 1)).ravel())
        parts.append(np.einsum("ned,nd->ne", rot1p, w1).ravel())
        parts.append(np.ones(n * 2))
        parts.append(np.transpose(geo["a2w"], (0, 2, 1)).ravel())
        if not pair.is_road:
            parts.append(np.einsum("ned,nd->ne", rot2p, w2).ravel())
        parts.append(np.full(n * 2, -1.0))
        parts.append((-2.0 * geo["s"]).ravel())
        return np.concatenate(parts)

    def _pair_extra_jacobian_data(self, pair: PairInfo, x) -> np.ndarray:
        geo = self._pair_geometry(pair, x, extra=True)
        ks, ws = self._pair_interp[pair.key]
        n_e, d1 = ws.shape
        rot1p = _rot_prime_batch(geo["pose1"][:, 2])
        w1 = np.einsum("kd,nk->nd", geo["base1"].a, geo["lam1"])
        rpw1 = np.einsum("ned,nd->ne", rot1p, w1)
        parts = [(-geo["b1w"]).ravel(), (-geo["b2w"]).ravel()]

        grad1 = np.concatenate(
            [-np.einsum("nke,nk->ne", geo["a1w"], geo["lam1"]),
             -np.einsum("ne,ne->n", geo["pose1"][:, :2], rpw1)[:, None]],
            axis=1)                                        # (n_e, 3)
        parts.append((ws[:, :, None] * grad1[:, None, :]).ravel())

        if not pair.is_road:
            rot2p = _rot_prime_batch(geo["pose2"][:, 2])
            w2 = np.einsum("kd,nk->nd", geo["base2"].a, geo["lam2"])
            rpw2 = np.einsum("ned,nd->ne", rot2p, w2)
            grad2 = np.concatenate(
                [-np.einsum("nke,nk->ne", geo["a2w"], geo["lam2"]),
                 -np.einsum("ne,ne->n", geo["pose2"][:, :2],
                            rpw2)[:, None]], axis=1)
            parts.append((ws[:, :, None] * grad2[:, None, :]).ravel())

        parts.append(np.transpose(geo["a1w"], (0, 2, 1)).ravel())
        parts.append((rpw1[:, :, None] * ws[:, None, :]).ravel())
        parts.append(np.ones(n_e * 2))
        parts.append(np.transpose(geo["a2w"], (0, 2, 1)).ravel())
        if not pair.is_road:
            parts.append((rpw2[:, :, None] * ws[:, None, :]).ravel())
        parts.append(np.full(n_e * 2, -1.0))
        parts.append((-2.0 * geo["s"]).ravel())
        return np.concatenate(parts)

    def jacobian(self, x) -> sparse.csr_matrix:
        rows, cols = self._jpattern
        data = self.jacobian_data(x)
        mat = sparse.coo_matrix((data, (rows, cols)),
                                shape=(self.layout.n_rows, self.layout.total))
        return mat.tocsr()

    def hessian(self, x, sigma_f: float, mult: np.ndarray) -> sparse.csr_matrix:
        g, lay = self.grid, self.layout
        tf, states, inputs = self._split(x)
        t_span = tf - self.t0
        data = []

        data.append(np.array([2.0 * self.sc.alpha * sigma_f]))
        qsym = self.sc.q + self.sc.q.T
        for cav in self.sc.cavs:
            zz = (sigma_f * self.obj_weights[:, None, None]
                  * qsym[None, :, :])
            data.append(zz.ravel())

        for cav in self.sc.cavs:
            cid = cav.cav_id
            dsl = lay.defect_slices[cid]
            mu = mult[dsl].reshape(g.np_, g.d, STATE_DIM)
            xloc = states[cid][g.local_index]
            xc = xloc[:, 1:, :]
            u = np.broadcast_to(inputs[cid][:, None, :],
                                (g.np_, g.d, INPUT_DIM))
            jx = np.zeros((g.np_, g.d, STATE_DIM, STATE_DIM))
            ju = np.zeros((g.np_, g.d, STATE_DIM, INPUT_DIM))
            jacobian_kernel(xc, u, self.derivs[cid], cav.params, jx, ju)
            cross_x = -g.h * np.einsum("kmi,kmij->kmj", mu, jx)
            cross_u = -g.h * np.einsum("kmi,kmij->kmj", mu, ju)
            data.append(cross_x.ravel())
            data.append(cross_x.ravel())
            data.append(cross_u.ravel())
            data.append(cross_u.ravel())
            hk = hessian_kernel(xc, u, mu, self.derivs[cid], cav.params)
            for key in self._dyn_hess_keys:
                entry = -g.h * t_span * hk[key]
                data.append(entry.ravel())
                if key[0] != key[1]:
                    data.append(entry.ravel())

        for pair in lay.pairs:
            data.append(self._pair_hessian_data(pair, x, mult))
            if pair.n_extra:
                data.append(self._pair_extra_hessian_data(pair, x, mult))
        rows, cols = self._hpattern
        vals = np.concatenate(data)
        mat = sparse.coo_matrix((vals, (rows, cols)),
                                shape=(lay.total, lay.total))
        return mat.tocsr()

    def _pair_hessian_data(self, pair: PairInfo, x, mult) -> np.ndarray:
        lay = self.layout
        n = lay.n_nodes
        geo = self._pair_geometry(pair, x)
        rows = mult[pair.row_offset:pair.row_offset + 6 * n].reshape(n, 6)
        mu_gap = rows[:, 0]
        mu_e1 = rows[:, 1:3]
        mu_e2 = rows[:, 3:5]
        mu_norm = rows[:, 5]
        parts = []
        sides = [(geo["pose1"], geo["base1"], geo["rot1"], geo["lam1"], mu_e1)]
        if not pair.is_road:
            sides.append((geo["pose2"], geo["base2"], geo["rot2"],
                          geo["lam2"], mu_e2))
        for pose, base, rot, lam, mu_eq in sides:
            th = pose[:, 2]
            rotp = _rot_prime_batch(th)
            w = np.einsum("kd,nk->nd", base.a, lam)
            rw = np.einsum("ned,nd->ne", rot, w)
            rpw = np.einsum("ned,nd->ne", rotp, w)
            # gap: (p, theta) cross = -mu_gap * R' w
            cross_pt = -mu_gap[:, None] * rpw
            parts.append(cross_pt.ravel())
            parts.append(cross_pt.ravel())
            # gap: (theta, theta) = +mu_gap * p . R w ; eq: -mu_eq . R w
            tt = mu_gap * np.einsum("ne,ne->n", pose[:, :2], rw) \
                - np.einsum("ne,ne->n", mu_eq, rw)
            parts.append(tt.ravel())
            # gap: (p, lam) = -mu_gap * (R A'), shape (n, 2, k)
            ra = np.einsum("ned,kd->nek", rot, base.a)
            p_lam = -mu_gap[:, None, None] * ra
            parts.append(p_lam.ravel())
            parts.append(p_lam.ravel())
            # (theta, lam): -mu_gap * p' R' A' + mu_eq' R' A'
            rpa = np.einsum("ned,kd->nek", rotp, base.a)
            th_lam = (-mu_gap[:, None] *
                      np.einsum("ne,nek->nk", pose[:, :2], rpa)
                      + np.einsum("ne,nek->nk", mu_eq, rpa))
            parts.append(th_lam.ravel())
            parts.append(th_lam.ravel())
        ss = np.broadcast_to((-2.0 * mu_norm)[:, None], (n, 2))
        parts.append(ss.ravel())
        return np.concatenate(parts)

    def _pair_extra_hessian_data(self, pair: PairInfo, x, mult) -> np.ndarray:
        lay = self.layout
        geo = self._pair_geometry(pair, x, extra=True)
        ks, ws = self._pair_interp[pair.key]
        n_e, d1 = ws.shape
        base_row = pair.row_offset + 6 * lay.n_nodes
        rows = mult[base_row:base_row + 6 * n_e].reshape(n_e, 6)
        mu_gap = rows[:, 0]
        mu_e1 = rows[:, 1:3]
        mu_e2 = rows[:, 3:5]
        mu_norm = rows[:, 5]
        parts = []
        sides = [(geo["pose1"], geo["base1"], geo["rot1"], geo["lam1"],
                  mu_e1)]
        if not pair.is_road:
            sides.append((geo["pose2"], geo["base2"], geo["rot2"],
                          geo["lam2"], mu_e2))
        for pose, base, rot, lam, mu_eq in sides:
            th = pose[:, 2]
            rotp = _rot_prime_batch(th)
            w_vec = np.einsum("kd,nk->nd", base.a, lam)
            rw = np.einsum("ned,nd->ne", rot, w_vec)
            rpw = np.einsum("ned,nd->ne", rotp, w_vec)
            cross_pt = -mu_gap[:, None] * rpw                 # (n_e, 2)
            tt = mu_gap * np.einsum("ne,ne->n", pose[:, :2], rw) \
                - np.einsum("ne,ne->n", mu_eq, rw)
            ra = np.einsum("ned,kd->nek", rot, base.a)
            p_lam = -mu_gap[:, None, None] * ra               # (n_e, 2, k)
            rpa = np.einsum("ned,kd->nek", rotp, base.a)
            th_lam = (-mu_gap[:, None]
                      * np.einsum("ne,nek->nk", pose[:, :2], rpa)
                      + np.einsum("ne,nek->nk", mu_eq, rpa))

            wrs = ws[:, :, None] * ws[:, None, :]             # (n_e, r, s)
            # (p_r, theta_s): value w_r * w_s * cross_pt[xy]
            blk = wrs[:, :, :, None] * cross_pt[:, None, None, :]
            parts.append(blk.ravel())
            parts.append(blk.ravel())
            parts.append((wrs * tt[:, None, None]).ravel())
            blk = ws[:, :, None, None] * p_lam[:, None, :, :]
            parts.append(blk.ravel())
            parts.append(blk.ravel())
            blk = ws[:, :, None] * th_lam[:, None, :]
            parts.append(blk.ravel())
            parts.append(blk.ravel())
        ss = np.broadcast_to((-2.0 * mu_norm)[:, None], (n_e, 2))
        parts.append(ss.ravel())
        return np.concatenate(parts)

    # -- problem handle ------------------------------------------------------

    def problem(self) -> NlpProblem:
        return NlpProblem(
            n=self.layout.total, m=self.layout.n_rows, layout=self.layout,
            objective=self.objective, gradient=self.gradient,
            constraints=self.constraints, jacobian=self.jacobian,
            hessian=self.hessian,
            x_lower=self.x_lower.copy(), x_upper=self.x_upper.copy(),
            c_lower=self.c_lower.copy(), c_upper=self.c_upper.copy(),
            jacobian_pattern=self._jpattern,
            scenario=self.sc, config=self.cfg)


def _rot_batch(theta: np.ndarray) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    out = np.empty(theta.shape + (2, 2))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    return out


def _rot_prime_batch(theta: np.ndarray) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    out = np.empty(theta.shape + (2, 2))
    out[..., 0, 0] = -s
    out[..., 0, 1] = -c
    out[..., 1, 0] = c
    out[..., 1, 1] = -s
    return out


# ---------------------------------------------------------------------------
# Public operations

def transcribe(sc: Scenario, cfg: TranscriptionConfig | None = None,
               extra_duality: dict[str, list[float]] | None = None,
               extra_bounds: dict[str, list[float]] | None = None) -> NlpProblem:
    """Build the sparse NLP for one crossing instance.

    extra_duality maps a pair key (as in layout.pairs) to additional
    enforcement time fractions in (0, 1); extra_bounds does the same per
    vehicle for the state box limits. Both are used by the certify-refine
    loop in the harness to close gaps between collocation nodes.
    """
    cfg = cfg or TranscriptionConfig()
    if sc.n_cavs < 1:
        raise ValueError("scenario has no vehicles")
    return _Assembler(sc, cfg, extra_duality, extra_bounds).problem()


def initial_guess(sc: Scenario, cfg: TranscriptionConfig | None = None,
                  problem: NlpProblem | None = None) -> np.ndarray:
    """Feasible-leaning warm start.

    States interpolate each vehicle's start pose to its goal at constant
    initial speed, inputs are zero, t_f comes from the longest straight-line
    distance at the mean of (V0, V_max), and every dual block is the
    face-aligned construction for the interpolated configuration (scaled
    slightly inside the norm ball).
    """
    cfg = cfg or TranscriptionConfig()
    if problem is None:
        problem = transcribe(sc, cfg)
    lay = problem.layout
    x = np.zeros(lay.total)

    tf_guess = 0.0
    for cav in sc.cavs:
        dist = float(np.linalg.norm(cav.goal.position - cav.start.position))
        pace = 0.5 * (cav.v0 + cav.bounds.v_max)
        tf_guess = max(tf_guess, dist / pace)
    tf_guess = float(np.clip(sc.t0 + tf_guess, problem.x_lower[0],
                             problem.x_upper[0]))
    x[0] = tf_guess

    tau = lay.tau_nodes
    poses = {}
    for cav in sc.cavs:
        z0 = cav.start.as_array()
        zf = cav.goal.as_array()
        dtheta = (zf[2] - z0[2] + np.pi) % (2.0 * np.pi) - np.pi
        z = z0[None, :] + tau[:, None] * (zf - z0)[None, :]
        z[:, 2] = z0[2] + tau * dtheta
        states = np.zeros((lay.n_nodes, STATE_DIM))
        states[:, 2] = cav.v0
        states[:, POSE_DIMS] = z
        x[lay.state_slices[cav.cav_id]] = states.ravel()
        poses[cav.cav_id] = z

    bodies = {c.cav_id: base_body_polytope(c.params) for c in sc.cavs}
    for pair in lay.pairs:
        blocks = _face_aligned_blocks(sc, bodies, pair, poses[pair.first],
                                      None if pair.is_road
                                      else poses[pair.second])
        start = pair.dual_offset
        x[start:start + lay.n_nodes * pair.block] = blocks.ravel()
        if pair.n_extra:
            taus = np.asarray(pair.extra_taus)

            def lerp(cav_id):
                cav = next(c for c in sc.cavs if c.cav_id == cav_id)
                z0 = cav.start.as_array()
                zf = cav.goal.as_array()
                dth = (zf[2] - z0[2] + np.pi) % (2.0 * np.pi) - np.pi
                z = z0[None, :] + taus[:, None] * (zf - z0)[None, :]
                z[:, 2] = z0[2] + taus * dth
                return z

            extra = _face_aligned_blocks(
                sc, bodies, pair, lerp(pair.first),
                None if pair.is_road else lerp(pair.second))
            off = start + lay.n_nodes * pair.block
            x[off:off + pair.n_extra * pair.block] = extra.ravel()
    return x


def _face_aligned_blocks(sc: Scenario, bodies, pair: PairInfo,
                         poses1: np.ndarray,
                         poses2: np.ndarray | None) -> np.ndarray:
    """Feasible dual blocks for one pair at a batch of poses.

    For road pairs the separation direction aims at the nearest point of the
    (axis-aligned) block rather than its centroid: adjacent blocks would
    otherwise get a useless diagonal direction and an infeasible gap row.
    """
    p1 = poses1[:, :2]
    if poses2 is None:
        verts = sc.layout.blocks[pair.second].vertices()
        lo, hi = verts.min(axis=0), verts.max(axis=0)
        centers2 = np.clip(p1, lo[None, :], hi[None, :])
    else:
        centers2 = poses2[:, :2]
    offs = centers2 - p1
    norms = np.linalg.norm(offs, axis=1)
    u = np.where(norms[:, None] > 1e-9,
                 offs / np.maximum(norms, 1e-9)[:, None],
                 np.array([1.0, 0.0])[None, :])
    a1w = np.einsum("kd,ned->nke", bodies[pair.first].a,
                    _rot_batch(poses1[:, 2]))
    lam1 = np.maximum(np.einsum("nke,ne->nk", a1w, u), 0.0)
    if poses2 is None:
        a2 = sc.layout.blocks[pair.second].a
        lam2 = np.maximum(np.einsum("ke,ne->nk", a2, -u), 0.0)
    else:
        a2w = np.einsum("kd,ned->nke", bodies[pair.second].a,
                        _rot_batch(poses2[:, 2]))
        lam2 = np.maximum(np.einsum("nke,ne->nk", a2w, -u), 0.0)
    scale = 0.995
    return np.concatenate([lam1 * scale, lam2 * scale, -u * scale], axis=1)


def warm_start(sc: Scenario, cfg: TranscriptionConfig,
               problem_new: NlpProblem, problem_old: NlpProblem,
               x_old: np.ndarray) -> np.ndarray:
    """Initial point for a refined problem from a previous solution.

    States, inputs, t_f and all dual blocks that exist in both layouts are
    copied; dual blocks of newly added enforcement points are built
    face-aligned from the previous trajectory interpolated at their taus.
    """
    lay_n, lay_o = problem_new.layout, problem_old.layout
    x = initial_guess(sc, cfg, problem_new)
    x[0] = x_old[0]
    for cid in lay_n.state_slices:
        x[lay_n.state_slices[cid]] = x_old[lay_o.state_slices[cid]]
        x[lay_n.input_slices[cid]] = x_old[lay_o.input_slices[cid]]

    bodies = {c.cav_id: base_body_polytope(c.params) for c in sc.cavs}
    grid = _Grid(cfg)
    old_pairs = {p.key: p for p in lay_o.pairs}

    def poses_at(cav_id, taus):
        states = x_old[lay_o.state_slices[cav_id]].reshape(-1, STATE_DIM)
        out = np.empty((len(taus), 3))
        for i, tau in enumerate(taus):
            k, w = grid.point_weights(tau)
            out[i] = (w @ states[grid.local_index[k]])[list(POSE_DIMS)]
        return out

    for pair in lay_n.pairs:
        old = old_pairs[pair.key]
        node_len = lay_n.n_nodes * pair.block
        x[pair.dual_offset:pair.dual_offset + node_len] = \
            x_old[old.dual_offset:old.dual_offset + node_len]
        if not pair.n_extra:
            continue
        old_tau_index = {t: i for i, t in enumerate(old.extra_taus)}
        new_taus = [t for t in pair.extra_taus if t not in old_tau_index]
        if new_taus:
            fresh = _face_aligned_blocks(
                sc, bodies, pair, poses_at(pair.first, new_taus),
                None if pair.is_road else poses_at(pair.second, new_taus))
        fresh_at = 0
        for i, tau in enumerate(pair.extra_taus):
            dst = pair.dual_offset + (lay_n.n_nodes + i) * pair.block
            if tau in old_tau_index:
                src = old.dual_offset \
                    + (lay_o.n_nodes + old_tau_index[tau]) * old.block
                x[dst:dst + pair.block] = x_old[src:src + old.block]
            else:
                x[dst:dst + pair.block] = fresh[fresh_at]
                fresh_at += 1
    return x


def pack_decision(sc: Scenario, cfg: TranscriptionConfig,
                  problem: NlpProblem, tf: float,
                  state_fn, input_fn) -> np.ndarray:
    """Decision vector holding a user-supplied trajectory (test utility).

    state_fn(cav, t) -> 6-state, input_fn(cav, t) -> 2-input; duals are the
    same face-aligned construction as the initial guess.
    """
    lay = problem.layout
    base = initial_guess(sc, cfg, problem)
    x = base.copy()
    x[0] = tf
    times = sc.t0 + lay.tau_nodes * (tf - sc.t0)
    grid = _Grid(cfg)
    interval_starts = sc.t0 + np.arange(grid.np_) / grid.np_ * (tf - sc.t0)
    for cav in sc.cavs:
        states = np.array([state_fn(cav, t) for t in times])
        x[lay.state_slices[cav.cav_id]] = states.ravel()
        inputs = np.array([input_fn(cav, t) for t in interval_starts])
        x[lay.input_slices[cav.cav_id]] = inputs.ravel()
    return x


def extract_solution(x: np.ndarray, sc: Scenario,
                     cfg: TranscriptionConfig | None = None,
                     problem: NlpProblem | None = None,
                     status: str = "unknown", iterations: int = 0,
                     kkt=(np.nan, np.nan, np.nan)) -> CrossingSolution:
    """Sample the collocation polynomials on a uniform dense grid."""
    cfg = cfg or TranscriptionConfig()
    if problem is None:
        problem = transcribe(sc, cfg)
    lay = problem.layout
    grid = _Grid(cfg)
    tf = float(x[0])
    t_span = tf - sc.t0

    n_dense = int(np.floor(t_span / cfg.dense_dt + 1e-9)) + 1
    times = sc.t0 + cfg.dense_dt * np.arange(n_dense)
    if tf - times[-1] > 1e-9:
        times = np.append(times, tf)
    tau_q = np.clip((times - sc.t0) / t_span, 0.0, 1.0)

    intervals = np.minimum((tau_q * grid.np_).astype(int), grid.np_ - 1)
    local = tau_q * grid.np_ - intervals

    states, inputs = {}, {}
    for cav in sc.cavs:
        cid = cav.cav_id
        node_states = x[lay.state_slices[cid]].reshape(-1, STATE_DIM)
        u = x[lay.input_slices[cid]].reshape(-1, INPUT_DIM)
        dense = np.empty((times.size, STATE_DIM))
        for k in range(grid.np_):
            sel = np.where(intervals == k)[0]
            if sel.size == 0:
                continue
            vals = node_states[grid.local_index[k]]
            dense[sel] = lagrange_eval(grid.local_nodes, vals, local[sel])
        states[cid] = dense
        inputs[cid] = u[intervals]

    node_states = {c.cav_id: x[lay.state_slices[c.cav_id]].reshape(
        -1, STATE_DIM).copy() for c in sc.cavs}
    duals = {}
    for pair in lay.pairs:
        start = pair.dual_offset
        duals[pair.key] = x[start:start + lay.n_nodes * pair.block].reshape(
            lay.n_nodes, pair.block).copy()

    return CrossingSolution(
        t_f=tf, t0=sc.t0, cav_ids=[c.cav_id for c in sc.cavs],
        times=times, states=states, inputs=inputs,
        node_times=sc.t0 + lay.tau_nodes * t_span,
        node_states=node_states, node_weights=lay.node_weights.copy(),
        duals=duals, status=status, iterations=iterations,
        kkt_stationarity=float(kkt[0]), kkt_feasibility=float(kkt[1]),
        kkt_complementarity=float(kkt[2]))
