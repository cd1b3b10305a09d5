"""Constrained-NLP solving: a pluggable backend interface and the built-in
primal-dual interior-point reference solver with a filter line search.

The reference solver handles problems in the form produced by the
transcription module:

    min f(x)   s.t.  cl <= c(x) <= cu,  xl <= x <= xu

where every row of c is either an equality (cl == cu) or one-sided.
Fixed variables (xl == xu) are eliminated up front. Inequalities receive
slacks, bounds and slacks carry log barriers, and the condensed symmetric
KKT system is solved with sparse LU plus iterative refinement (target
relative residual 1e-10).

Step acceptance is the Wächter-Biegler filter: a trial point must not be
dominated by any filter entry and must sufficiently decrease either the
constraint violation theta or the barrier objective phi_mu. The accepted
(theta, phi_mu) pairs are recorded per barrier stage in
SolveOutcome.merit_history; the filter guarantees that no accepted step
increases both components within a stage, which is the invariant the test
suite asserts. (No single scalar merit is monotone for a filter method;
that is the point of using a filter.)

Everything is deterministic: no randomization anywhere, and all reductions
run in a fixed order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .transcription import NlpProblem

_INF = np.inf

# Wächter-Biegler constants (their recommended values)
_KAPPA_EPS = 10.0
_KAPPA_MU = 0.2
_THETA_MU = 1.5
_TAU_MIN = 0.99
_GAMMA_THETA = 1e-5
_GAMMA_PHI = 1e-5
_DELTA_SWITCH = 1.0
_S_THETA = 1.1
_S_PHI = 2.3
_ETA_PHI = 1e-4
_KAPPA_SOC = 0.99
_P_SOC_MAX = 4
_KAPPA_SIGMA = 1e10
_GAMMA_ALPHA = 0.05
_DELTA_W0 = 1e-4
_DELTA_WMIN = 1e-20
_DELTA_WMAX = 1e40
_KAPPA_WMINUS = 1.0 / 3.0
_KAPPA_WPLUS = 8.0
_KAPPA_WPLUS_BAR = 100.0
_DELTA_C_BAR = 1e-8
_KAPPA_C = 0.25
_SMAX = 100.0


@dataclass(frozen=True)
class SolverConfig:
    kkt_tol: float = 1e-6
    feas_tol: float = 1e-6
    max_iter: int = 3000
    mu_init: float = 0.1
    resto_damping: float = 1e-4     # initial LM damping in restoration
    derivative_mode: str = "analytic"   # "analytic" | "finite-difference-check"
    backend: str = "reference"
    seed: int = 0
    verbose: bool = False

    def __post_init__(self):
        if self.kkt_tol <= 0 or self.feas_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.derivative_mode not in ("analytic", "finite-difference-check"):
            raise ValueError(f"unknown derivative mode {self.derivative_mode!r}")


@dataclass
class SolveOutcome:
    status: str                      # optimal | acceptable | max-iter |
                                     # infeasible | numerical-failure
    iterations: int
    kkt_stationarity: float
    kkt_feasibility: float
    kkt_complementarity: float
    wall_time: float
    objective: float
    seed: int = 0
    mu_final: float = float("nan")
    offending_row: int | None = None
    message: str = ""
    clipped_start_vars: int = 0
    log: list[str] = field(default_factory=list)
    # accepted (stage, theta, phi_mu) triples; within one stage no step
    # increases both theta and phi_mu
    merit_history: list[tuple[int, float, float]] = field(
        default_factory=list)

    @property
    def success(self) -> bool:
        return self.status in ("optimal", "acceptable")


class _NumericalFailure(Exception):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class _ReducedProblem:
    """The user problem with fixed variables eliminated and rows classified
    into equalities (shifted to 0) and inequalities (oriented as >= 0)."""

    def __init__(self, problem: NlpProblem):
        self.problem = problem
        xl, xu = problem.x_lower, problem.x_upper
        self.fixed = xl == xu
        self.free = ~self.fixed
        self.free_idx = np.where(self.free)[0]
        self.fixed_values = xl[self.fixed]
        self.n = int(self.free.sum())
        self.xl = xl[self.free]
        self.xu = xu[self.free]
        self.proj = sparse.csc_matrix(
            (np.ones(self.n), (self.free_idx, np.arange(self.n))),
            shape=(problem.n, self.n))

        cl, cu = problem.c_lower, problem.c_upper
        eq = cl == cu
        lower = (~eq) & np.isfinite(cl) & ~np.isfinite(cu)
        upper = (~eq) & np.isfinite(cu) & ~np.isfinite(cl)
        if not np.all(eq | lower | upper):
            bad = int(np.where(~(eq | lower | upper))[0][0])
            raise ValueError(
                f"constraint row {bad} is ranged or free; the reference "
                "solver supports equalities and one-sided rows")
        self.eq_rows = np.where(eq)[0]
        self.in_rows = np.where(lower | upper)[0]
        self.in_sign = np.where(np.isfinite(cu[self.in_rows]), -1.0, 1.0)
        self.in_shift = np.where(np.isfinite(cu[self.in_rows]),
                                 cu[self.in_rows], cl[self.in_rows])
        self.eq_shift = cl[self.eq_rows]
        self.m_eq = self.eq_rows.size
        self.m_in = self.in_rows.size
        self.m = problem.m

    def full_x(self, x_red):
        x = np.empty(self.problem.n)
        x[self.free] = x_red
        x[self.fixed] = self.fixed_values
        return x

    @staticmethod
    def _check_finite(arr, what):
        arr = np.atleast_1d(np.asarray(arr))
        if not np.all(np.isfinite(arr)):
            row = int(np.where(~np.isfinite(arr))[0][0])
            raise _NumericalFailure(f"non-finite {what}", row=row)

    def objective(self, x_red):
        val = float(self.problem.objective(self.full_x(x_red)))
        if not np.isfinite(val):
            raise _NumericalFailure("non-finite objective value")
        return val

    def gradient(self, x_red):
        g = self.problem.gradient(self.full_x(x_red))
        self._check_finite(g, "objective gradient entry")
        return g[self.free]

    def constraints(self, x_red):
        c = self.problem.constraints(self.full_x(x_red))
        self._check_finite(c, "constraint value")
        c_eq = c[self.eq_rows] - self.eq_shift
        c_in = self.in_sign * (c[self.in_rows] - self.in_shift)
        return c_eq, c_in

    def jacobians(self, x_red):
        jac = self.problem.jacobian(self.full_x(x_red))
        self._check_finite(jac.data, "constraint Jacobian entry")
        jac = (jac @ self.proj).tocsr()
        j_eq = jac[self.eq_rows]
        j_in = jac[self.in_rows]
        if self.m_in:
            j_in = sparse.diags(self.in_sign) @ j_in
        return j_eq.tocsr(), j_in.tocsr()

    def hessian(self, x_red, sigma, y_eq, y_in):
        mult = np.zeros(self.m)
        mult[self.eq_rows] = y_eq
        if self.m_in:
            mult[self.in_rows] = self.in_sign * y_in
        h = self.problem.hessian(self.full_x(x_red), sigma, mult)
        self._check_finite(h.data, "Hessian entry")
        return (self.proj.T @ h @ self.proj).tocsr()

    def original_row(self, kind, local):
        rows = self.eq_rows if kind == "eq" else self.in_rows
        return int(rows[local])


class _ReferenceIpm:
    """One solve of the reduced problem; see the module docstring."""

    def __init__(self, problem: NlpProblem, cfg: SolverConfig):
        self.cfg = cfg
        self.red = _ReducedProblem(problem)
        self.stage = 0
        self.merit_history: list[tuple[int, float, float]] = []
        self.log: list[str] = []
        self.iters = 0
        self.has_lb = np.isfinite(self.red.xl)
        self.has_ub = np.isfinite(self.red.xu)
        self.theta_min = 1e-4

    # -- small helpers -------------------------------------------------------

    def _push_inside(self, x):
        red = self.red
        k1, k2 = 1e-2, 1e-2
        both = self.has_lb & self.has_ub
        width = np.where(both, red.xu - red.xl, _INF)
        pad_l = np.minimum(k1 * np.maximum(1.0, np.abs(
            np.where(self.has_lb, red.xl, 0.0))), k2 * width)
        pad_u = np.minimum(k1 * np.maximum(1.0, np.abs(
            np.where(self.has_ub, red.xu, 0.0))), k2 * width)
        lo = np.where(self.has_lb, red.xl + pad_l, -_INF)
        hi = np.where(self.has_ub, red.xu - pad_u, _INF)
        swapped = lo > hi
        if np.any(swapped):
            mid = 0.5 * (red.xl + red.xu)
            lo = np.where(swapped, mid, lo)
            hi = np.where(swapped, mid, hi)
        return np.minimum(np.maximum(x, lo), hi)

    def _theta(self, c_eq, c_in, s):
        val = float(np.abs(c_eq).sum())
        if c_in.size:
            val += float(np.abs(c_in - s).sum())
        return val

    def _phi(self, fval, x, s, mu):
        val = fval
        if np.any(self.has_lb):
            gap = x[self.has_lb] - self.red.xl[self.has_lb]
            if np.any(gap <= 0.0):
                return _INF
            val -= mu * float(np.log(gap).sum())
        if np.any(self.has_ub):
            gap = self.red.xu[self.has_ub] - x[self.has_ub]
            if np.any(gap <= 0.0):
                return _INF
            val -= mu * float(np.log(gap).sum())
        if s.size:
            if np.any(s <= 0.0):
                return _INF
            val -= mu * float(np.log(s).sum())
        return float(val)

    def _open_stage(self, st, mu):
        """New barrier stage: re-anchor the merit trace at this point."""
        self.stage += 1
        self.merit_history.append(
            (self.stage, st.theta, self._phi(st.fval, st.x, st.s, mu)))

    def _kkt_error(self, st, mu):
        red = self.red
        r_d = st.grad.copy()
        if red.m_eq:
            r_d += st.j_eq.T @ st.y_eq
        if red.m_in:
            r_d += st.j_in.T @ st.y_in
        r_d -= st.z_l
        r_d += st.z_u
        r_ds = (-st.y_in - st.z_s) if red.m_in else np.zeros(0)

        mults = np.concatenate([st.y_eq, st.y_in, st.z_l[self.has_lb],
                                st.z_u[self.has_ub], st.z_s])
        s_d = max(_SMAX, np.abs(mults).sum() / max(1, mults.size)) / _SMAX
        zs = np.concatenate([st.z_l[self.has_lb], st.z_u[self.has_ub],
                             st.z_s])
        s_c = max(_SMAX, np.abs(zs).sum() / max(1, zs.size)) / _SMAX

        stat = max(np.abs(r_d).max(initial=0.0),
                   np.abs(r_ds).max(initial=0.0)) / s_d
        feas = max(np.abs(st.c_eq).max(initial=0.0),
                   np.abs(st.c_in - st.s).max(initial=0.0)
                   if red.m_in else 0.0)
        comp_parts = []
        if np.any(self.has_lb):
            comp_parts.append((st.x[self.has_lb]
                               - red.xl[self.has_lb]) * st.z_l[self.has_lb]
                              - mu)
        if np.any(self.has_ub):
            comp_parts.append((red.xu[self.has_ub]
                               - st.x[self.has_ub]) * st.z_u[self.has_ub]
                              - mu)
        if st.s.size:
            comp_parts.append(st.s * st.z_s - mu)
        comp = (np.abs(np.concatenate(comp_parts)).max()
                if comp_parts else 0.0) / s_c
        return max(stat, feas, comp), stat, feas, comp

    def _boundary_alpha(self, v, dv, tau):
        neg = dv < -1e-300
        if not np.any(neg):
            return 1.0
        return float(min(1.0, (tau * v[neg] / -dv[neg]).min()))

    def _alpha_primal_max(self, x, s, dx, ds, tau):
        alpha = 1.0
        if np.any(self.has_lb):
            alpha = min(alpha, self._boundary_alpha(
                x[self.has_lb] - self.red.xl[self.has_lb],
                dx[self.has_lb], tau))
        if np.any(self.has_ub):
            alpha = min(alpha, self._boundary_alpha(
                self.red.xu[self.has_ub] - x[self.has_ub],
                -dx[self.has_ub], tau))
        if s.size:
            alpha = min(alpha, self._boundary_alpha(s, ds, tau))
        return alpha

    # -- KKT solve ------------------------------------------------------------

    def _factor_kkt(self, w_block, j_eq, j_in, sigma_s_inv, delta_c):
        red = self.red
        blocks = [[w_block]]
        if red.m_eq:
            blocks[0].append(j_eq.T)
        if red.m_in:
            blocks[0].append(j_in.T)
        if red.m_eq:
            row = [j_eq, sparse.diags(np.full(red.m_eq, -delta_c))]
            if red.m_in:
                row.append(None)
            blocks.append(row)
        if red.m_in:
            row = [j_in]
            if red.m_eq:
                row.append(None)
            row.append(sparse.diags(-(sigma_s_inv + delta_c)))
            blocks.append(row)
        kkt = sparse.bmat(blocks, format="csc")
        try:
            return kkt, splu(kkt), None
        except RuntimeError as err:
            return kkt, None, str(err)

    def _refined_solve(self, kkt, lu, rhs):
        sol = lu.solve(rhs)
        for _ in range(3):
            resid = kkt @ sol - rhs
            rel = np.abs(resid).max() / max(1.0, np.abs(rhs).max())
            if rel <= 1e-10:
                break
            sol = sol - lu.solve(resid)
        resid = kkt @ sol - rhs
        rel = np.abs(resid).max() / max(1.0, np.abs(rhs).max())
        if not np.isfinite(rel) or rel > 1e-6:
            return None
        return sol

    # -- restoration ------------------------------------------------------------

    def _restoration(self, x):
        """Levenberg-Marquardt descent on the constraint violation."""
        red = self.red
        eps_in = 1e-8

        def viol(xq):
            c_eq, c_in = red.constraints(xq)
            if red.m_in:
                return np.concatenate([c_eq, np.minimum(c_in - eps_in, 0.0)])
            return c_eq

        v = viol(x)
        theta0 = np.abs(v).sum()
        if theta0 <= 1e-14:
            return x, theta0
        lam = self.cfg.resto_damping
        for _ in range(40):
            if np.abs(v).sum() <= max(1e-12, 0.05 * theta0):
                break
            j_eq, j_in = red.jacobians(x)
            c_eq, c_in = red.constraints(x)
            if red.m_in:
                active = (c_in - eps_in) < 0.0
                jac = sparse.vstack([j_eq, j_in[active]]).tocsr()
                res = np.concatenate([c_eq, (c_in - eps_in)[active]])
            else:
                jac, res = j_eq, c_eq
            normal = (jac.T @ jac
                      + sparse.diags(np.full(red.n, lam))).tocsc()
            try:
                dx = splu(normal).solve(-(jac.T @ res))
            except RuntimeError:
                lam *= 10.0
                continue
            alpha = self._alpha_primal_max(x, np.zeros(0), dx, np.zeros(0),
                                           0.995)
            trial = self._push_inside(x + alpha * dx)
            v_trial = viol(trial)
            if np.abs(v_trial).sum() < np.abs(v).sum() * (1.0 - 1e-4):
                x, v = trial, v_trial
                lam = max(lam * 0.5, 1e-10)
            else:
                lam *= 10.0
                if lam > 1e10:
                    break
        return x, float(np.abs(v).sum())

    # -- main ------------------------------------------------------------------

    def solve(self, x_full_0):
        t_start = time.perf_counter()
        red = self.red
        x0 = np.asarray(x_full_0, dtype=float)[red.free]
        clipped = int(np.sum((x0 < red.xl) | (x0 > red.xu)))
        try:
            x, outcome = self._iterate(self._push_inside(x0), clipped,
                                       t_start)
            return red.full_x(x), outcome
        except _NumericalFailure as err:
            return None, SolveOutcome(
                status="numerical-failure", iterations=self.iters,
                kkt_stationarity=np.nan, kkt_feasibility=np.nan,
                kkt_complementarity=np.nan,
                wall_time=time.perf_counter() - t_start,
                objective=np.nan, seed=self.cfg.seed,
                offending_row=err.row, message=str(err),
                clipped_start_vars=clipped, log=self.log,
                merit_history=self.merit_history)

    def _refresh(self, st):
        st.fval = self.red.objective(st.x)
        st.grad = self.red.gradient(st.x)
        st.c_eq, st.c_in = self.red.constraints(st.x)
        st.j_eq, st.j_in = self.red.jacobians(st.x)
        st.theta = self._theta(st.c_eq, st.c_in, st.s)

    def _iterate(self, x, clipped, t_start):
        cfg = self.cfg
        red = self.red
        mu = cfg.mu_init
        tau = max(_TAU_MIN, 1.0 - mu)

        st = SimpleNamespace(x=x, s=np.zeros(0))
        st.c_eq, st.c_in = red.constraints(x)
        st.s = np.maximum(st.c_in, 1e-2) if red.m_in else np.zeros(0)
        st.fval = red.objective(x)
        st.grad = red.gradient(x)
        st.j_eq, st.j_in = red.jacobians(x)
        st.z_l = np.where(self.has_lb, np.clip(
            mu / np.maximum(x - red.xl, 1e-8), 1e-8, 1e8), 0.0)
        st.z_u = np.where(self.has_ub, np.clip(
            mu / np.maximum(red.xu - x, 1e-8), 1e-8, 1e8), 0.0)
        st.z_s = mu / st.s if red.m_in else np.zeros(0)
        st.y_eq = np.zeros(red.m_eq)
        st.y_in = -st.z_s.copy()
        st.theta = self._theta(st.c_eq, st.c_in, st.s)

        theta_max = 1e4 * max(1.0, st.theta)
        self.theta_min = 1e-4 * max(1.0, st.theta)
        filt = [(theta_max, -_INF)]
        self.merit_history.append(
            (self.stage, st.theta, self._phi(st.fval, st.x, st.s, mu)))
        delta_w_last = 0.0

        status, message, offending = "max-iter", "", None
        alpha = 0.0

        for it in range(cfg.max_iter + 1):
            self.iters = it
            err_mu, *_ = self._kkt_error(st, mu)
            err_0, stat0, feas0, comp0 = self._kkt_error(st, 0.0)

            self.log.append(f"{it} {float(st.fval)!r} {float(st.theta)!r} "
                            f"{float(stat0)!r} {float(alpha)!r}")
            if cfg.verbose:
                print(f"[ipm] {it:4d} f={st.fval:.8e} th={st.theta:.3e} "
                      f"du={stat0:.3e} mu={mu:.1e} a={alpha:.2e}")

            if err_0 <= cfg.kkt_tol and feas0 <= cfg.feas_tol:
                status = "optimal"
                break
            if it == cfg.max_iter:
                status = ("acceptable"
                          if err_0 <= 100 * cfg.kkt_tol
                          and feas0 <= 100 * cfg.feas_tol else "max-iter")
                break

            mu_changed = False
            while err_mu <= _KAPPA_EPS * mu and mu > cfg.kkt_tol / 10.0:
                mu = max(cfg.kkt_tol / 10.0,
                         min(_KAPPA_MU * mu, mu ** _THETA_MU))
                tau = max(_TAU_MIN, 1.0 - mu)
                filt = [(theta_max, -_INF)]
                mu_changed = True
                err_mu, *_ = self._kkt_error(st, mu)
            if mu_changed:
                self._open_stage(st, mu)

            hess = red.hessian(st.x, 1.0, st.y_eq, st.y_in)
            dlo = np.where(self.has_lb, st.x - red.xl, _INF)
            dhi = np.where(self.has_ub, red.xu - st.x, _INF)
            sigma_x = np.where(self.has_lb, st.z_l / dlo, 0.0) \
                + np.where(self.has_ub, st.z_u / dhi, 0.0)
            sigma_s_inv = st.s / st.z_s if red.m_in else np.zeros(0)

            grad_phi = st.grad - np.where(self.has_lb, mu / dlo, 0.0) \
                + np.where(self.has_ub, mu / dhi, 0.0)
            rhs_x = -(grad_phi
                      + (st.j_eq.T @ st.y_eq if red.m_eq else 0.0)
                      + (st.j_in.T @ st.y_in if red.m_in else 0.0))
            rhs_eq = -st.c_eq
            rhs_in = (-(st.c_in - st.s) + sigma_s_inv * st.y_in
                      + mu / st.z_s) if red.m_in else np.zeros(0)
            rhs = np.concatenate([rhs_x, rhs_eq, rhs_in])

            delta_w, delta_c = 0.0, 0.0
            sol = kkt = lu = None
            for _attempt in range(60):
                w_block = (hess + sparse.diags(sigma_x + delta_w)).tocsc()
                kkt, lu, fail = self._factor_kkt(
                    w_block, st.j_eq, st.j_in, sigma_s_inv, delta_c)
                if lu is not None:
                    sol = self._refined_solve(kkt, lu, rhs)
                    if sol is not None:
                        dx = sol[:red.n]
                        curv = float(dx @ (w_block @ dx))
                        dxn = float(dx @ dx)
                        if curv >= 1e-11 * dxn or dxn <= 1e-30:
                            break
                    else:
                        fail = "large KKT residual"
                if fail is not None and delta_c == 0.0:
                    delta_c = _DELTA_C_BAR * mu ** _KAPPA_C
                if delta_w == 0.0:
                    delta_w = (_DELTA_W0 if delta_w_last == 0.0
                               else max(_DELTA_WMIN,
                                        _KAPPA_WMINUS * delta_w_last))
                else:
                    delta_w *= (_KAPPA_WPLUS_BAR if delta_w_last == 0.0
                                else _KAPPA_WPLUS)
                if delta_w > _DELTA_WMAX:
                    raise _NumericalFailure(
                        "KKT regularization exceeded its ceiling")
                sol = None
            if sol is None:
                raise _NumericalFailure("could not factor the KKT system")
            if delta_w > 0.0:
                delta_w_last = delta_w

            dx = sol[:red.n]
            dy_eq = sol[red.n:red.n + red.m_eq]
            dy_in = sol[red.n + red.m_eq:]
            ds = (sigma_s_inv * (st.y_in + dy_in) + mu / st.z_s) \
                if red.m_in else np.zeros(0)
            dz_l = np.where(self.has_lb,
                            mu / dlo - st.z_l - (st.z_l / dlo) * dx, 0.0)
            dz_u = np.where(self.has_ub,
                            mu / dhi - st.z_u + (st.z_u / dhi) * dx, 0.0)
            dz_s = (mu / st.s - st.z_s - (st.z_s / st.s) * ds) \
                if red.m_in else np.zeros(0)

            alpha_max = self._alpha_primal_max(st.x, st.s, dx, ds, tau)
            alpha_z = 1.0
            if np.any(self.has_lb):
                alpha_z = min(alpha_z, self._boundary_alpha(
                    st.z_l[self.has_lb], dz_l[self.has_lb], tau))
            if np.any(self.has_ub):
                alpha_z = min(alpha_z, self._boundary_alpha(
                    st.z_u[self.has_ub], dz_u[self.has_ub], tau))
            if red.m_in:
                alpha_z = min(alpha_z, self._boundary_alpha(st.z_s, dz_s,
                                                            tau))

            ctx = SimpleNamespace(
                mu=mu, tau=tau, filt=filt, lu=lu,
                grad_phi=grad_phi, rhs_x=rhs_x, sigma_s_inv=sigma_s_inv,
                dx=dx, ds=ds, dy_in=dy_in)
            accepted = self._line_search(st, ctx, alpha_max)

            if accepted is None:
                x_new, theta_new = self._restoration(st.x)
                if theta_new >= 0.9 * st.theta:
                    if red.m_in:
                        viol = np.concatenate(
                            [np.abs(st.c_eq), -np.minimum(st.c_in, 0.0)])
                    else:
                        viol = np.abs(st.c_eq)
                    worst = int(np.argmax(viol)) if viol.size else 0
                    if worst < red.m_eq:
                        offending = red.original_row("eq", worst)
                    elif red.m_in:
                        offending = red.original_row("in", worst - red.m_eq)
                    if st.theta > cfg.feas_tol:
                        status = "infeasible"
                    elif err_0 <= 100 * cfg.kkt_tol:
                        status = "acceptable"
                    else:
                        status = "max-iter"
                    message = "line search failed and restoration stalled"
                    break
                st.x = x_new
                st.s = (np.maximum(red.constraints(x_new)[1], 1e-8)
                        if red.m_in else st.s)
                self._refresh(st)
                st.z_l = np.where(self.has_lb, np.clip(
                    mu / np.maximum(st.x - red.xl, 1e-8), 1e-8, 1e8), 0.0)
                st.z_u = np.where(self.has_ub, np.clip(
                    mu / np.maximum(red.xu - st.x, 1e-8), 1e-8, 1e8), 0.0)
                st.z_s = mu / st.s if red.m_in else st.z_s
                st.y_in = -st.z_s.copy()
                st.y_eq = np.zeros(red.m_eq)
                filt = [(theta_max, -_INF)]
                self._open_stage(st, mu)
                alpha = 0.0
                continue

            alpha, ftype = accepted
            st.y_eq = st.y_eq + alpha * dy_eq
            st.y_in = st.y_in + alpha * dy_in
            st.z_l = st.z_l + alpha_z * dz_l
            st.z_u = st.z_u + alpha_z * dz_u
            if red.m_in:
                st.z_s = st.z_s + alpha_z * dz_s

            # keep bound duals within kappa_sigma of the primal estimate
            dlo2 = np.where(self.has_lb,
                            np.maximum(st.x - red.xl, 1e-300), 1.0)
            dhi2 = np.where(self.has_ub,
                            np.maximum(red.xu - st.x, 1e-300), 1.0)
            st.z_l = np.where(self.has_lb, np.clip(
                st.z_l, mu / (_KAPPA_SIGMA * dlo2),
                _KAPPA_SIGMA * mu / dlo2), 0.0)
            st.z_u = np.where(self.has_ub, np.clip(
                st.z_u, mu / (_KAPPA_SIGMA * dhi2),
                _KAPPA_SIGMA * mu / dhi2), 0.0)
            if red.m_in:
                st.z_s = np.clip(st.z_s, mu / (_KAPPA_SIGMA * st.s),
                                 _KAPPA_SIGMA * mu / st.s)

            if not ftype:
                filt.append(((1.0 - _GAMMA_THETA) * st.theta_prev,
                             st.phi_prev - _GAMMA_PHI * st.theta_prev))
            self.merit_history.append((self.stage, st.theta, st.phi_acc))

        err_0, stat0, feas0, comp0 = self._kkt_error(st, 0.0)
        outcome = SolveOutcome(
            status=status, iterations=self.iters,
            kkt_stationarity=stat0, kkt_feasibility=feas0,
            kkt_complementarity=comp0,
            wall_time=time.perf_counter() - t_start,
            objective=st.fval, seed=self.cfg.seed, mu_final=mu,
            offending_row=offending, message=message,
            clipped_start_vars=clipped, log=self.log,
            merit_history=self.merit_history)
        return st.x, outcome

    # -- line search ------------------------------------------------------------

    def _line_search(self, st, ctx, alpha_max):
        """Backtracking filter line search; returns (alpha, f_type) and
        mutates st to the accepted point, or None on failure."""
        red = self.red
        mu, tau, filt = ctx.mu, ctx.tau, ctx.filt
        dx, ds = ctx.dx, ctx.ds
        theta_0 = st.theta
        phi_0 = self._phi(st.fval, st.x, st.s, mu)
        dphi = float(ctx.grad_phi @ dx)
        if red.m_in:
            dphi -= float((mu / st.s) @ ds)

        if dphi < 0.0:
            cands = [_GAMMA_THETA]
            if theta_0 > 0.0:
                cands.append(_GAMMA_PHI * theta_0 / (-dphi))
                if theta_0 <= self.theta_min:
                    cands.append(_DELTA_SWITCH * theta_0 ** _S_THETA
                                 / (-dphi) ** _S_PHI)
            alpha_min = _GAMMA_ALPHA * min(cands)
        else:
            alpha_min = _GAMMA_ALPHA * _GAMMA_THETA
        alpha_min = max(alpha_min, 1e-16)

        def evaluate(x_t, s_t):
            c_eq_t, c_in_t = red.constraints(x_t)
            f_t = red.objective(x_t)
            theta_t = self._theta(c_eq_t, c_in_t, s_t)
            phi_t = self._phi(f_t, x_t, s_t, mu)
            return c_eq_t, c_in_t, f_t, theta_t, phi_t

        def acceptable(theta_t, phi_t, f_t, alpha_t):
            in_filter = all(theta_t < (1.0 - _GAMMA_THETA) * th
                            or phi_t < ph - _GAMMA_PHI * th
                            for th, ph in filt)
            if not in_filter:
                return None
            switching = (dphi < 0.0
                         and alpha_t * (-dphi) ** _S_PHI
                         > _DELTA_SWITCH * theta_0 ** _S_THETA)
            if switching and theta_0 <= self.theta_min:
                if phi_t <= phi_0 + _ETA_PHI * alpha_t * dphi:
                    return True      # f-type
                return None
            if (theta_t <= (1.0 - _GAMMA_THETA) * theta_0
                    or phi_t <= phi_0 - _GAMMA_PHI * theta_0):
                return False         # theta-type
            if switching and phi_t <= phi_0 + _ETA_PHI * alpha_t * dphi:
                return True
            return None

        def commit(alpha_t, x_t, s_t, parts, ftype):
            c_eq_t, c_in_t, f_t, theta_t, phi_t = parts
            st.theta_prev, st.phi_prev = theta_0, phi_0
            st.x, st.s = x_t, s_t
            st.c_eq, st.c_in = c_eq_t, c_in_t
            st.fval, st.theta = f_t, theta_t
            st.phi_acc = phi_t
            st.grad = red.gradient(x_t)
            st.j_eq, st.j_in = red.jacobians(x_t)
            return alpha_t, ftype

        alpha = alpha_max
        for trial in range(60):
            x_t = st.x + alpha * dx
            s_t = st.s + alpha * ds if red.m_in else st.s
            try:
                parts = evaluate(x_t, s_t)
            except _NumericalFailure:
                alpha *= 0.5
                if alpha < alpha_min:
                    return None
                continue
            verdict = acceptable(parts[3], parts[4], parts[2], alpha)
            if verdict is not None:
                return commit(alpha, x_t, s_t, parts, verdict)

            if trial == 0 and parts[3] >= theta_0 \
                    and red.m_eq + red.m_in > 0:
                soc = self._try_soc(st, ctx, alpha, parts, theta_0, phi_0,
                                    dphi, acceptable, commit)
                if soc is not None:
                    return soc

            alpha *= 0.5
            if alpha < alpha_min:
                return None
        return None

    def _try_soc(self, st, ctx, alpha, parts, theta_0, phi_0, dphi,
                 acceptable, commit):
        """Second-order corrections reusing the current KKT factorization."""
        red = self.red
        mu = ctx.mu
        c_eq_t, c_in_t = parts[0], parts[1]
        s_t = st.s + alpha * ctx.ds if red.m_in else st.s
        ce_soc = alpha * st.c_eq + c_eq_t
        ci_soc = (alpha * (st.c_in - st.s) + (c_in_t - s_t)) \
            if red.m_in else np.zeros(0)
        theta_old = theta_0
        for _p in range(_P_SOC_MAX):
            rhs_in = (-ci_soc + ctx.sigma_s_inv * st.y_in + mu / st.z_s) \
                if red.m_in else np.zeros(0)
            rhs = np.concatenate([ctx.rhs_x, -ce_soc, rhs_in])
            try:
                sol = ctx.lu.solve(rhs)
            except Exception:
                return None
            if not np.all(np.isfinite(sol)):
                return None
            dx_c = sol[:red.n]
            dy_in_c = sol[red.n + red.m_eq:]
            ds_c = (ctx.sigma_s_inv * (st.y_in + dy_in_c) + mu / st.z_s) \
                if red.m_in else np.zeros(0)
            alpha_soc = self._alpha_primal_max(st.x, st.s, dx_c, ds_c,
                                               ctx.tau)
            x_soc = st.x + alpha_soc * dx_c
            s_soc = st.s + alpha_soc * ds_c if red.m_in else st.s
            try:
                parts_soc = self._ls_eval(x_soc, s_soc, mu)
            except _NumericalFailure:
                return None
            theta_soc = parts_soc[3]
            verdict = acceptable(theta_soc, parts_soc[4], parts_soc[2],
                                 alpha_soc)
            if verdict is not None:
                return commit(alpha_soc, x_soc, s_soc, parts_soc, verdict)
            if theta_soc > _KAPPA_SOC * theta_old:
                return None
            ce_soc = alpha_soc * ce_soc + parts_soc[0]
            ci_soc = (alpha_soc * ci_soc + (parts_soc[1] - s_soc)) \
                if red.m_in else ci_soc
            theta_old = theta_soc
        return None

    def _ls_eval(self, x_t, s_t, mu):
        c_eq_t, c_in_t = self.red.constraints(x_t)
        f_t = self.red.objective(x_t)
        theta_t = self._theta(c_eq_t, c_in_t, s_t)
        phi_t = self._phi(f_t, x_t, s_t, mu)
        return c_eq_t, c_in_t, f_t, theta_t, phi_t


def solve(problem: NlpProblem, x0, cfg: SolverConfig | None = None):
    """Solve an NlpProblem from x0 with the configured backend."""
    cfg = cfg or SolverConfig()
    if cfg.backend not in BACKENDS:
        raise ValueError(f"unknown solver backend {cfg.backend!r}")
    x0 = np.asarray(x0, dtype=float)
    if cfg.derivative_mode == "finite-difference-check":
        report = check_derivatives(problem, np.clip(
            x0, problem.x_lower, problem.x_upper))
        if report.max_relative_error > 1e-4:
            return x0, SolveOutcome(
                status="numerical-failure", iterations=0,
                kkt_stationarity=np.nan, kkt_feasibility=np.nan,
                kkt_complementarity=np.nan, wall_time=0.0,
                objective=np.nan, seed=cfg.seed,
                message=f"derivative check failed in {report.worst_block}: "
                        f"{report.max_relative_error:.2e}")
    return BACKENDS[cfg.backend](problem, x0, cfg)


def _solve_reference(problem, x0, cfg):
    ipm = _ReferenceIpm(problem, cfg)
    x, outcome = ipm.solve(x0)
    if x is None:
        x = np.asarray(x0, dtype=float)
    return x, outcome


BACKENDS = {"reference": _solve_reference}


# ---------------------------------------------------------------------------
# Derivative checking

@dataclass
class DerivativeReport:
    max_relative_error: float
    block_errors: dict[str, float]
    worst_block: str
    n_groups: int = 0

    def __str__(self):
        lines = [f"max relative error {self.max_relative_error:.3e} "
                 f"(worst block: {self.worst_block})"]
        for name, err in sorted(self.block_errors.items()):
            lines.append(f"  {name}: {err:.3e}")
        return "\n".join(lines)


def _color_columns(jac_csc):
    """Greedy Curtis-Powell-Reid grouping: columns sharing no row may be
    perturbed together, so finite differencing needs few evaluations."""
    n = jac_csc.shape[1]
    m = jac_csc.shape[0]
    indptr, indices = jac_csc.indptr, jac_csc.indices
    color_of = np.full(n, -1)
    row_used: list[np.ndarray] = []
    for j in range(n):
        rj = indices[indptr[j]:indptr[j + 1]]
        for color, used in enumerate(row_used):
            if not used[rj].any():
                used[rj] = True
                color_of[j] = color
                break
        else:
            used = np.zeros(m, dtype=bool)
            used[rj] = True
            row_used.append(used)
            color_of[j] = len(row_used) - 1
    return color_of


def check_derivatives(problem: NlpProblem, x, h: float = 1e-6,
                      n_directions: int = 20, seed: int = 0) -> DerivativeReport:
    """Compare analytic derivatives against central finite differences.

    The constraint Jacobian is verified entry-wise on its (summed) sparsity
    structure using grouped perturbations; the objective gradient and the
    Lagrangian Hessian are verified along seeded random directions.
    """
    x = np.asarray(x, dtype=float)
    jac = problem.jacobian(x).tocsc()
    jac.sort_indices()
    color_of = _color_columns(jac)
    n_colors = int(color_of.max()) + 1 if color_of.size else 0

    fd_data = np.zeros_like(jac.data)
    for color in range(n_colors):
        members = np.where(color_of == color)[0]
        e = np.zeros(problem.n)
        e[members] = h
        diff = (problem.constraints(x + e)
                - problem.constraints(x - e)) / (2.0 * h)
        for j in members:
            lo, hi = jac.indptr[j], jac.indptr[j + 1]
            fd_data[lo:hi] = diff[jac.indices[lo:hi]]

    denom = np.maximum(1.0, np.maximum(np.abs(jac.data), np.abs(fd_data)))
    entry_err = np.abs(jac.data - fd_data) / denom

    block_errors: dict[str, float] = {}
    layout = problem.layout
    row_worst = np.zeros(problem.m)
    coo = sparse.csc_matrix(
        (entry_err, jac.indices, jac.indptr), shape=jac.shape).tocoo()
    np.maximum.at(row_worst, coo.row, coo.data)
    nonzero_rows = np.unique(coo.row[coo.data > 0.0])
    seen_rows = np.unique(coo.row)
    for row in seen_rows:
        name = layout.describe_row(int(row)).split("@")[0] \
            if layout is not None else "constraints"
        block_errors[name] = max(block_errors.get(name, 0.0),
                                 float(row_worst[row]))
    if not block_errors:
        block_errors["constraints"] = 0.0

    rng = np.random.default_rng(seed)
    grad = problem.gradient(x)
    gerr = 0.0
    for _ in range(n_directions):
        v = rng.normal(size=problem.n)
        v /= np.linalg.norm(v)
        fd_dir = (problem.objective(x + h * v)
                  - problem.objective(x - h * v)) / (2.0 * h)
        an_dir = float(grad @ v)
        gerr = max(gerr, abs(an_dir - fd_dir)
                   / max(1.0, abs(an_dir), abs(fd_dir)))
    block_errors["objective-gradient"] = gerr

    mult = rng.normal(size=problem.m)
    hess = problem.hessian(x, 1.0, mult)
    herr = 0.0

    def lag_grad(xq):
        return problem.gradient(xq) + problem.jacobian(xq).T @ mult

    for _ in range(max(4, n_directions // 4)):
        v = rng.normal(size=problem.n)
        v /= np.linalg.norm(v)
        fd_vec = (lag_grad(x + h * v) - lag_grad(x - h * v)) / (2.0 * h)
        an_vec = hess @ v
        herr = max(herr, float(np.abs(an_vec - fd_vec).max()
                               / max(1.0, np.abs(an_vec).max())))
    block_errors["lagrangian-hessian"] = herr

    worst_block = max(block_errors, key=block_errors.get)
    return DerivativeReport(
        max_relative_error=float(max(block_errors.values())),
        block_errors=block_errors, worst_block=worst_block,
        n_groups=n_colors)
