"""End-to-end driving: solve a scenario file, certify the result with the
independent geometric oracle, compute reported metrics, and emit artifacts
(solution.json, trajectories.csv, metrics.json, plot.svg, iterations.log).

Certification is deliberately primal: every 10 ms sample is checked with
geometry.min_distance_oracle, never with the dual variables the optimizer
used, so it cross-checks the whole dual machinery end to end.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .dynamics import ControlInput, VehicleState, check_limits
from .geometry import min_distance_oracle, polytope_at_pose, Pose, base_body_polytope
from .scenario import (CrossingSolution, Scenario, ScenarioFormatError,
                       load_scenario, scenario_from_dict, scenario_to_dict,
                       validate_scenario)
from .solver import SolverConfig, solve
from .transcription import (TranscriptionConfig, extract_solution,
                            initial_guess, transcribe, warm_start)

EXIT_OK = 0
EXIT_SCENARIO_INVALID = 2
EXIT_SOLVER_FAILED = 3
EXIT_CERTIFICATION_FAILED = 4

_CERT_TOL = 1e-6


@dataclass
class Certification:
    passed: bool
    min_pair_distance: float | None      # None when N == 1
    min_pair_at: tuple[float, str, str] | None
    min_road_clearance: float
    min_road_at: tuple[float, str, int]
    first_violation: str | None
    bound_violations: list[str] = field(default_factory=list)
    # worst time of each contiguous violation run, keyed like layout pairs
    violation_times: dict[str, list[float]] = field(default_factory=dict)
    bound_violation_times: dict[str, list[float]] = field(
        default_factory=dict)

    def summary(self) -> str:
        lines = [f"certification: {'PASS' if self.passed else 'FAIL'}"]
        if self.min_pair_distance is not None:
            t, a, b = self.min_pair_at
            lines.append(f"  min pair distance {self.min_pair_distance:.4f} m "
                         f"between {a} and {b} at t={t:.2f} s")
        else:
            lines.append("  no vehicle pairs (single vehicle)")
        t, cav, blk = self.min_road_at
        lines.append(f"  min road clearance {self.min_road_clearance:.4f} m "
                     f"({cav} vs block {blk} at t={t:.2f} s)")
        if self.first_violation:
            lines.append(f"  first violation: {self.first_violation}")
        for v in self.bound_violations[:5]:
            lines.append(f"  bound violation: {v}")
        return "\n".join(lines)


def _violation_runs(times, dists, threshold):
    """Worst sample time of each contiguous run below the threshold."""
    below = dists < threshold
    if not below.any():
        return []
    out = []
    k = 0
    n = below.size
    while k < n:
        if below[k]:
            j = k
            while j + 1 < n and below[j + 1]:
                j += 1
            seg = slice(k, j + 1)
            out.append(float(times[k + int(np.argmin(dists[seg]))]))
            k = j + 1
        else:
            k += 1
    return out


def certify(sol: CrossingSolution, sc: Scenario) -> Certification:
    """Primal safety check of a solution on its dense sample grid."""
    bodies_base = {c.cav_id: base_body_polytope(c.params) for c in sc.cavs}
    cav_ids = [c.cav_id for c in sc.cavs]
    n_t = sol.times.size

    posed = {}
    for cid in cav_ids:
        states = sol.states[cid]
        posed[cid] = [
            polytope_at_pose(bodies_base[cid],
                             Pose(states[k, 3], states[k, 4], states[k, 5]))
            for k in range(n_t)]

    first_violation = None
    violation_times: dict[str, list[float]] = {}
    min_pair = (np.inf, None)
    for i in range(len(cav_ids)):
        for j in range(i + 1, len(cav_ids)):
            a, b = cav_ids[i], cav_ids[j]
            dists = np.array([min_distance_oracle(posed[a][k], posed[b][k])
                              for k in range(n_t)])
            k = int(np.argmin(dists))
            if dists[k] < min_pair[0]:
                min_pair = (float(dists[k]), (float(sol.times[k]), a, b))
            runs = _violation_runs(sol.times, dists, sc.d_min - _CERT_TOL)
            if runs:
                violation_times[f"{a}|{b}"] = runs
                if first_violation is None:
                    first_violation = (
                        f"pair {a}/{b} at t={runs[0]:.3f} s: distance "
                        f"{dists.min():.6f} < {sc.d_min}")

    min_road = (np.inf, (0.0, cav_ids[0], 0))
    for cid in cav_ids:
        for r, block in enumerate(sc.layout.blocks):
            dists = np.array([min_distance_oracle(posed[cid][k], block)
                              for k in range(n_t)])
            k = int(np.argmin(dists))
            if dists[k] < min_road[0]:
                min_road = (float(dists[k]), (float(sol.times[k]), cid, r))
            runs = _violation_runs(sol.times, dists, sc.d_rmin - _CERT_TOL)
            if runs:
                violation_times[f"{cid}|road{r}"] = runs
                if first_violation is None:
                    first_violation = (
                        f"road {cid}/block{r} at t={runs[0]:.3f} s: "
                        f"clearance {dists.min():.6f} < {sc.d_rmin}")

    bound_violations = []
    bound_violation_times: dict[str, list[float]] = {}
    for cav in sc.cavs:
        states = sol.states[cav.cav_id]
        inputs = sol.inputs[cav.cav_id]
        b = cav.bounds
        # worst state-box overshoot per sample, negative while feasible
        overshoot = np.maximum.reduce([
            b.v_min - states[:, 2], states[:, 2] - b.v_max,
            np.abs(states[:, 0]) - b.r_max,
            np.abs(states[:, 1]) - b.beta_max,
            np.abs(inputs[:, 0]) - b.a_max,
            np.abs(inputs[:, 1]) - b.delta_max,
        ])
        runs = _violation_runs(sol.times, -overshoot, -_CERT_TOL)
        if runs:
            bound_violation_times[cav.cav_id] = runs
        for k in np.where(overshoot > _CERT_TOL)[0]:
            report = check_limits(
                VehicleState.from_array(states[k]),
                ControlInput(*inputs[k]), b)
            for item in report:
                bound_violations.append(
                    f"{cav.cav_id} at t={sol.times[k]:.3f} s: "
                    f"{item.quantity}={item.value:.4f} exceeds bound "
                    f"{item.bound} by {item.margin:.2e}")

    passed = first_violation is None and not bound_violations
    return Certification(
        passed=passed,
        min_pair_distance=None if min_pair[1] is None else float(min_pair[0]),
        min_pair_at=min_pair[1],
        min_road_clearance=float(min_road[0]),
        min_road_at=min_road[1],
        first_violation=first_violation,
        bound_violations=bound_violations,
        violation_times=violation_times,
        bound_violation_times=bound_violation_times)


def metrics(sol: CrossingSolution, sc: Scenario) -> dict:
    """Reported crossing metrics; speeds are pooled over vehicles and time."""
    speeds = np.concatenate([sol.states[c.cav_id][:, 2] for c in sc.cavs])
    crossing = sol.t_f - sol.t0
    n = sc.n_cavs
    return {
        "min_crossing_time_s": crossing,
        "average_speed_mps": float(speeds.mean()),
        "std_speed_mps": float(speeds.std()),
        "throughput_veh_per_s": n / crossing,
        "throughput_veh_per_h": 3600.0 * n / crossing,
        "n_cavs": n,
    }


# ---------------------------------------------------------------------------
# Solution serialization

def solution_to_dict(sol: CrossingSolution) -> dict:
    return {
        "t_f": sol.t_f,
        "t0": sol.t0,
        "cav_ids": list(sol.cav_ids),
        "status": sol.status,
        "iterations": sol.iterations,
        "kkt": {"stationarity": sol.kkt_stationarity,
                "feasibility": sol.kkt_feasibility,
                "complementarity": sol.kkt_complementarity},
        "times": sol.times.tolist(),
        "states": {cid: arr.tolist() for cid, arr in sol.states.items()},
        "inputs": {cid: arr.tolist() for cid, arr in sol.inputs.items()},
        "node_times": sol.node_times.tolist(),
        "node_states": {cid: arr.tolist()
                        for cid, arr in sol.node_states.items()},
        "node_weights": sol.node_weights.tolist(),
        "duals": {key: arr.tolist() for key, arr in sol.duals.items()},
    }


def solution_from_dict(doc: dict) -> CrossingSolution:
    return CrossingSolution(
        t_f=float(doc["t_f"]), t0=float(doc["t0"]),
        cav_ids=list(doc["cav_ids"]),
        times=np.asarray(doc["times"], dtype=float),
        states={k: np.asarray(v, dtype=float)
                for k, v in doc["states"].items()},
        inputs={k: np.asarray(v, dtype=float)
                for k, v in doc["inputs"].items()},
        node_times=np.asarray(doc["node_times"], dtype=float),
        node_states={k: np.asarray(v, dtype=float)
                     for k, v in doc["node_states"].items()},
        node_weights=np.asarray(doc["node_weights"], dtype=float),
        duals={k: np.asarray(v, dtype=float) for k, v in doc["duals"].items()},
        status=doc["status"], iterations=int(doc["iterations"]),
        kkt_stationarity=float(doc["kkt"]["stationarity"]),
        kkt_feasibility=float(doc["kkt"]["feasibility"]),
        kkt_complementarity=float(doc["kkt"]["complementarity"]))


def load_solution(path) -> CrossingSolution:
    with open(path, encoding="utf-8") as fh:
        return solution_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Plotting (hand-rolled SVG keeps the output deterministic)

_PALETTE = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f"]


def _svg_header(size=1000):
    return [f'<svg xmlns="http://www.w3.org/2000/svg" '
            f'viewBox="0 0 {size} {size}" width="{size}" height="{size}">',
            f'<rect width="{size}" height="{size}" fill="white"/>']


def plot_svg(sol: CrossingSolution, sc: Scenario) -> str:
    """Position traces over the intersection outline, 1000x1000 viewport."""
    size = 1000
    half = sc.layout.half_extent * 1.05

    def to_px(xy):
        x, y = xy
        return (size / 2 + x / half * size / 2,
                size / 2 - y / half * size / 2)

    parts = _svg_header(size)
    w = sc.layout.lane_width
    ext = sc.layout.half_extent
    # road cross
    for (x0, y0, x1, y1) in ((-ext, -w, ext, w), (-w, -ext, w, ext)):
        px0, py1 = to_px((x0, y1))
        px1, py0 = to_px((x1, y0))
        parts.append(f'<rect x="{px0:.1f}" y="{py1:.1f}" '
                     f'width="{px1 - px0:.1f}" height="{py0 - py1:.1f}" '
                     f'fill="#f0f0f0" stroke="none"/>')
    for block in sc.layout.blocks:
        verts = block.vertices()
        pts = " ".join(f"{to_px(v)[0]:.1f},{to_px(v)[1]:.1f}" for v in verts)
        parts.append(f'<polygon points="{pts}" fill="#d9d9d9" '
                     f'stroke="#999999" stroke-width="1"/>')
    for k, cid in enumerate(sol.cav_ids):
        color = _PALETTE[k % len(_PALETTE)]
        xy = sol.states[cid][:, 3:5]
        pts = " ".join(f"{to_px(p)[0]:.1f},{to_px(p)[1]:.1f}" for p in xy)
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="2.5"/>')
        sx, sy = to_px(xy[0])
        parts.append(f'<circle cx="{sx:.1f}" cy="{sy:.1f}" r="6" '
                     f'fill="{color}"/>')
        parts.append(f'<text x="{sx + 8:.1f}" y="{sy - 8:.1f}" '
                     f'font-size="18" fill="{color}">{cid}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def timing_plot_svg(table: list[dict], fit: dict) -> str:
    """log wall time against fleet size with the fitted exponent line."""
    size = 1000
    margin = 100
    ok = [row for row in table if row.get("mean_wall_time_s")]
    parts = _svg_header(size)
    parts.append(f'<text x="{size/2:.0f}" y="40" font-size="22" '
                 f'text-anchor="middle">solve time vs number of vehicles '
                 f'(fitted exponent {fit["slope"]:.3f}, '
                 f'R2 {fit["r_squared"]:.3f})</text>')
    if ok:
        ns = [row["n"] for row in ok]
        logs = [math.log(row["mean_wall_time_s"]) for row in ok]
        n_lo, n_hi = min(ns), max(ns)
        y_lo, y_hi = min(logs), max(logs)
        if n_hi == n_lo:
            n_hi += 1
        if y_hi - y_lo < 1e-9:
            y_hi = y_lo + 1.0

        def to_px(n, logt):
            x = margin + (n - n_lo) / (n_hi - n_lo) * (size - 2 * margin)
            y = size - margin - (logt - y_lo) / (y_hi - y_lo) \
                * (size - 2 * margin)
            return x, y

        parts.append(f'<line x1="{margin}" y1="{size - margin}" '
                     f'x2="{size - margin}" y2="{size - margin}" '
                     f'stroke="black"/>')
        parts.append(f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
                     f'y2="{size - margin}" stroke="black"/>')
        for n, logt in zip(ns, logs):
            x, y = to_px(n, logt)
            parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="7" '
                         f'fill="#1f77b4"/>')
            parts.append(f'<text x="{x:.1f}" y="{size - margin + 30:.1f}" '
                         f'font-size="18" text-anchor="middle">N={n}</text>')
        x0, y0 = to_px(n_lo, fit["intercept"] + fit["slope"] * n_lo)
        x1, y1 = to_px(n_hi, fit["intercept"] + fit["slope"] * n_hi)
        parts.append(f'<line x1="{x0:.1f}" y1="{y0:.1f}" x2="{x1:.1f}" '
                     f'y2="{y1:.1f}" stroke="#d62728" stroke-width="2" '
                     f'stroke-dasharray="8 4"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# Artifact writing and the end-to-end run

def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_artifacts(out_dir, sol: CrossingSolution, sc: Scenario,
                    cert: Certification, extra_metrics: dict,
                    log_lines: list[str]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "solution.json", solution_to_dict(sol))

    with open(out / "trajectories.csv", "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "id", "x", "y", "theta", "V", "r", "beta",
                         "a", "delta"])
        for k, t in enumerate(sol.times):
            for cid in sol.cav_ids:
                s = sol.states[cid][k]
                u = sol.inputs[cid][k]
                writer.writerow([f"{t:.3f}", cid, repr(s[3]), repr(s[4]),
                                 repr(s[5]), repr(s[2]), repr(s[0]),
                                 repr(s[1]), repr(u[0]), repr(u[1])])

    record = dict(extra_metrics)
    record["certification"] = {
        "passed": cert.passed,
        "min_pair_distance_m": cert.min_pair_distance,
        "min_road_clearance_m": cert.min_road_clearance,
        "first_violation": cert.first_violation,
        "n_bound_violations": len(cert.bound_violations),
    }
    _write_json(out / "metrics.json", record)

    with open(out / "plot.svg", "w", encoding="utf-8") as fh:
        fh.write(plot_svg(sol, sc))
    with open(out / "iterations.log", "w", encoding="utf-8") as fh:
        fh.write("# iter objective inf_pr inf_du alpha\n")
        for line in log_lines:
            fh.write(line + "\n")


@dataclass
class RunResult:
    exit_code: int
    message: str
    scenario: Scenario | None = None
    solution: CrossingSolution | None = None
    certification: Certification | None = None
    metrics: dict | None = None
    wall_time: float = 0.0


def _grow_enforcement(cert: Certification, sol: CrossingSolution,
                      extra_dual: dict, extra_bound: dict,
                      cap_per_pair: int = 40) -> bool:
    """Add enforcement time-fractions at certified violations; True if any."""
    t_span = sol.t_f - sol.t0
    added = False

    def push(store, key, t):
        nonlocal added
        tau = float(np.clip((t - sol.t0) / t_span, 1e-6, 1.0 - 1e-6))
        taus = store.setdefault(key, [])
        if len(taus) >= cap_per_pair:
            return
        if all(abs(tau - old) > 1e-9 for old in taus):
            taus.append(tau)
            added = True

    for key, times in cert.violation_times.items():
        for t in times:
            push(extra_dual, key, t)
    for cav_id, times in cert.bound_violation_times.items():
        for t in times:
            push(extra_bound, cav_id, t)
    return added


def run(scenario_path, out_dir=None, n_intervals=None, degree=None,
        scheme=None, tol=None, seed=0, max_iter=None,
        max_refine=8) -> RunResult:
    """Load, solve, certify and (optionally) write artifacts for a scenario.

    Solving alternates with primal certification: any inter-node violation
    the certifier finds is added to the transcription as an extra
    enforcement point and the problem is re-solved warm-started, until the
    certificate passes or the refinement budget is exhausted.
    """
    try:
        sc = load_scenario(scenario_path)
    except json.JSONDecodeError as err:
        return RunResult(EXIT_SCENARIO_INVALID,
                         f"scenario JSON invalid at line {err.lineno} "
                         f"column {err.colno}: {err.msg}")
    except (ScenarioFormatError, ValueError, OSError) as err:
        return RunResult(EXIT_SCENARIO_INVALID, f"scenario invalid: {err}")

    issues = validate_scenario(sc)
    errors = [i for i in issues if i.severity == "error"]
    if errors:
        return RunResult(EXIT_SCENARIO_INVALID, "scenario invalid:\n  "
                         + "\n  ".join(i.message for i in errors),
                         scenario=sc)

    cfg_kwargs = {}
    if n_intervals is not None:
        cfg_kwargs["n_intervals"] = n_intervals
    if degree is not None:
        cfg_kwargs["degree"] = degree
    if scheme is not None:
        cfg_kwargs["scheme"] = scheme
    trans_cfg = TranscriptionConfig(**cfg_kwargs)
    solver_kwargs = {"seed": seed}
    if tol is not None:
        solver_kwargs["kkt_tol"] = tol
        solver_kwargs["feas_tol"] = tol
    if max_iter is not None:
        solver_kwargs["max_iter"] = max_iter
    solver_cfg = SolverConfig(**solver_kwargs)

    t_start = time.perf_counter()
    extra_dual: dict[str, list[float]] = {}
    extra_bound: dict[str, list[float]] = {}
    previous = None
    total_iterations = 0
    sol = cert = outcome = problem = None
    for refinement in range(max_refine + 1):
        problem = transcribe(sc, trans_cfg, extra_duality=extra_dual,
                             extra_bounds=extra_bound)
        if previous is None:
            x0 = initial_guess(sc, trans_cfg, problem)
        else:
            x0 = warm_start(sc, trans_cfg, problem, previous[0], previous[1])
        x, outcome = solve(problem, x0, solver_cfg)
        total_iterations += outcome.iterations
        if not outcome.success:
            detail = outcome.message or outcome.status
            if outcome.offending_row is not None:
                detail += (" (constraint " + problem.layout.describe_row(
                    outcome.offending_row) + ")")
            return RunResult(EXIT_SOLVER_FAILED, f"solver failed: {detail}",
                             scenario=sc,
                             wall_time=time.perf_counter() - t_start)

        sol = extract_solution(x, sc, trans_cfg, problem,
                               status=outcome.status,
                               iterations=outcome.iterations,
                               kkt=(outcome.kkt_stationarity,
                                    outcome.kkt_feasibility,
                                    outcome.kkt_complementarity))
        cert = certify(sol, sc)
        if cert.passed:
            break
        added = _grow_enforcement(cert, sol, extra_dual, extra_bound)
        if not added:
            break
        previous = (problem, x)
    wall = time.perf_counter() - t_start

    stats = metrics(sol, sc)
    stats["solver"] = {
        "status": outcome.status,
        "iterations": outcome.iterations,
        "total_iterations": total_iterations,
        "refinement_rounds": refinement,
        "extra_enforcement_points": int(sum(len(v)
                                            for v in extra_dual.values())),
        "wall_time_s": wall,
        "seed": outcome.seed,
        "kkt_stationarity": outcome.kkt_stationarity,
        "kkt_feasibility": outcome.kkt_feasibility,
        "kkt_complementarity": outcome.kkt_complementarity,
    }
    if out_dir is not None:
        write_artifacts(out_dir, sol, sc, cert, stats, outcome.log)

    if not cert.passed:
        return RunResult(EXIT_CERTIFICATION_FAILED,
                         "certification failed:\n" + cert.summary(),
                         scenario=sc, solution=sol, certification=cert,
                         metrics=stats, wall_time=wall)
    return RunResult(EXIT_OK, cert.summary(), scenario=sc, solution=sol,
                     certification=cert, metrics=stats, wall_time=wall)


# ---------------------------------------------------------------------------
# Scaling sweep

def _sweep_cell(args):
    doc, n, rep, out_dir, cfg_kwargs = args
    sc_doc = dict(doc)
    sc_doc["cavs"] = doc["cavs"][:n]
    cell_dir = None
    if out_dir is not None:
        cell_dir = Path(out_dir) / f"n{n}_rep{rep}"
    t0 = time.perf_counter()
    try:
        sc = scenario_from_dict(sc_doc)
        import tempfile
        with tempfile.NamedTemporaryFile("w", suffix=".json",
                                         delete=False) as fh:
            json.dump(sc_doc, fh)
            tmp = fh.name
        result = run(tmp, out_dir=cell_dir, **cfg_kwargs)
        Path(tmp).unlink()
        wall = time.perf_counter() - t0
        if result.exit_code != EXIT_OK:
            return {"n": n, "rep": rep, "error": result.message,
                    "wall_time_s": wall}
        return {
            "n": n, "rep": rep, "wall_time_s": result.wall_time,
            "t_f": result.solution.t_f,
            "status": result.solution.status,
            "iterations": result.solution.iterations,
            "min_crossing_time_s":
                result.metrics["min_crossing_time_s"],
            "average_speed_mps": result.metrics["average_speed_mps"],
        }
    except Exception as err:    # cell isolation: record, don't abort
        return {"n": n, "rep": rep, "error": str(err),
                "wall_time_s": time.perf_counter() - t0}


def fit_exponent(ns, mean_times) -> dict:
    """Least squares on log(time) = intercept + slope * N."""
    ns = np.asarray(ns, dtype=float)
    logs = np.log(np.asarray(mean_times, dtype=float))
    if ns.size < 2:
        return {"slope": float("nan"), "intercept": float("nan"),
                "r_squared": float("nan")}
    coeffs = np.polyfit(ns, logs, 1)
    pred = np.polyval(coeffs, ns)
    ss_res = float(np.sum((logs - pred) ** 2))
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(coeffs[0]), "intercept": float(coeffs[1]),
            "r_squared": r2}


def sweep(template_path, n_list, reps=3, out_dir=None, workers=1,
          **cfg_kwargs) -> dict:
    """Solve the template restricted to its first N vehicles, for each N in
    n_list, reps times each; summarize timings and fit the growth exponent."""
    sc_template = load_scenario(template_path)   # validates the template
    with open(template_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    max_n = max(n_list)
    if max_n > len(doc["cavs"]):
        raise ValueError(f"template has {len(doc['cavs'])} vehicles, "
                         f"sweep asks for {max_n}")

    cells = [(doc, n, rep, out_dir, cfg_kwargs)
             for n in n_list for rep in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(cell) for cell in cells]

    table = []
    for n in n_list:
        group = [r for r in rows if r["n"] == n and "error" not in r]
        errors = [r for r in rows if r["n"] == n and "error" in r]
        entry = {"n": n, "reps_ok": len(group), "reps_failed": len(errors)}
        if group:
            times = np.array([r["wall_time_s"] for r in group])
            tfs = np.array([r["t_f"] for r in group])
            entry.update({
                "mean_wall_time_s": float(times.mean()),
                "std_wall_time_s": float(times.std()),
                "t_f": float(tfs.mean()),
                "std_t_f": float(tfs.std()),
            })
        table.append(entry)

    ok = [e for e in table if e.get("mean_wall_time_s")]
    fit = fit_exponent([e["n"] for e in ok],
                       [e["mean_wall_time_s"] for e in ok])
    summary = {"cells": rows, "table": table, "fit": fit}

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "sweep.json", summary)
        with open(out / "sweep.csv", "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "reps_ok", "reps_failed",
                             "mean_wall_time_s", "std_wall_time_s",
                             "t_f", "std_t_f"])
            for e in table:
                writer.writerow([e["n"], e["reps_ok"], e["reps_failed"],
                                 e.get("mean_wall_time_s", ""),
                                 e.get("std_wall_time_s", ""),
                                 e.get("t_f", ""), e.get("std_t_f", "")])
        with open(out / "sweep.svg", "w", encoding="utf-8") as fh:
            fh.write(timing_plot_svg(table, fit))
    return summary


# ---------------------------------------------------------------------------
# Bundled scenarios

def bundled_names() -> list[str]:
    root = resources.files("lanefree") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir()
                  if p.name.endswith(".json"))


def bundled_path(name: str) -> Path:
    path = resources.files("lanefree") / "scenarios" / f"{name}.json"
    if not path.is_file():
        raise FileNotFoundError(
            f"no bundled scenario {name!r}; available: {bundled_names()}")
    return Path(str(path))


def load_bundled(name: str) -> Scenario:
    return load_scenario(bundled_path(name))
