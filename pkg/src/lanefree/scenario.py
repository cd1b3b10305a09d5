"""Problem instances: intersection, fleet, boundary conditions and the cost.

The crossing cost is

    J = alpha * (t_f - t_0)^2
        + integral over [t_0, t_f] of sum_i (z_i(t) - z_i_goal)' Q (z_i(t) - z_i_goal)

with z the pose [x, y, theta] and the goal pose fixed per vehicle. The
integral is evaluated with the same collocation quadrature the transcription
uses so that reported objective values match the optimizer's.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import StateBounds, VehicleParams
from .geometry import (IntersectionLayout, Pose, base_body_polytope,
                       min_distance_oracle, polytope_at_pose)

POSE_DIMS = (3, 4, 5)   # x, y, theta slice of the state vector


class ScenarioFormatError(ValueError):
    """Scenario file is structurally invalid (bad JSON, keys or shapes)."""


@dataclass(frozen=True)
class CavSpec:
    cav_id: str
    params: VehicleParams
    start: Pose
    v0: float
    goal: Pose
    bounds: StateBounds

    def body_at(self, pose: Pose):
        return polytope_at_pose(base_body_polytope(self.params), pose)


@dataclass(frozen=True)
class Scenario:
    """One crossing instance.

    alpha weights the squared crossing time, q the pose deviations and
    terminal_weight the final-pose anchor used by the planner's internal
    cost (see the transcription module for the exact form).
    """

    layout: IntersectionLayout
    cavs: tuple[CavSpec, ...]
    alpha: float = 50.0
    q: np.ndarray = field(default_factory=lambda: np.diag([1.0, 1.0, 0.1]))
    terminal_weight: float = 100.0
    d_min: float = 0.1
    d_rmin: float = 0.1
    t0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "cavs", tuple(self.cavs))
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        if len(self.cavs) < 1:
            raise ValueError("scenario needs at least one vehicle")
        if self.q.shape != (3, 3):
            raise ValueError("Q must be 3x3")
        if self.alpha < 0.0 or self.terminal_weight < 0.0:
            raise ValueError("gain weights must be >= 0")
        ids = [c.cav_id for c in self.cavs]
        if len(set(ids)) != len(ids):
            raise ValueError("vehicle ids must be unique")

    @property
    def n_cavs(self) -> int:
        return len(self.cavs)

    def with_cavs(self, cavs) -> "Scenario":
        return replace(self, cavs=tuple(cavs))


@dataclass
class CrossingSolution:
    """Solved crossing: dense trajectory samples plus collocation-node data."""

    t_f: float
    t0: float
    cav_ids: list[str]
    times: np.ndarray                    # dense grid, shared by all CAVs
    states: dict[str, np.ndarray]        # id -> (n_t, 6)
    inputs: dict[str, np.ndarray]        # id -> (n_t, 2)
    node_times: np.ndarray               # collocation node grid
    node_states: dict[str, np.ndarray]   # id -> (n_nodes, 6)
    node_weights: np.ndarray             # quadrature weights on [0, 1]
    duals: dict[str, np.ndarray]         # pair key -> (n_nodes, k1 + k2 + 2)
    status: str = "unknown"
    iterations: int = 0
    kkt_stationarity: float = float("nan")
    kkt_feasibility: float = float("nan")
    kkt_complementarity: float = float("nan")


@dataclass(frozen=True)
class ValidationIssue:
    severity: str   # "error" | "warning"
    message: str


def objective_value(sol: CrossingSolution, sc: Scenario) -> float:
    """Crossing cost of a solution, using the transcription's quadrature."""
    t_span = sol.t_f - sol.t0
    value = sc.alpha * t_span * t_span
    for cav in sc.cavs:
        z = sol.node_states[cav.cav_id][:, POSE_DIMS]
        dz = z - cav.goal.as_array()[None, :]
        integrand = np.einsum("ni,ij,nj->n", dz, sc.q, dz)
        value += t_span * float(sol.node_weights @ integrand)
    return value


def validate_scenario(sc: Scenario) -> list[ValidationIssue]:
    """Check all scenario invariants; returns one issue per violation."""
    issues: list[ValidationIssue] = []
    bodies = {}
    for cav in sc.cavs:
        if not (cav.bounds.v_min <= cav.v0 <= cav.bounds.v_max):
            issues.append(ValidationIssue(
                "error", f"{cav.cav_id}: initial speed {cav.v0} outside "
                f"[{cav.bounds.v_min}, {cav.bounds.v_max}]"))
        body = cav.body_at(cav.start)
        bodies[cav.cav_id] = body
        for k, block in enumerate(sc.layout.blocks):
            dist = min_distance_oracle(body, block)
            if dist < sc.d_rmin:
                issues.append(ValidationIssue(
                    "error", f"{cav.cav_id}: initial pose violates road "
                    f"clearance at block {k} (distance {dist:.3f} m)"))
        goal_body = cav.body_at(cav.goal)
        for k, block in enumerate(sc.layout.blocks):
            if min_distance_oracle(goal_body, block) < sc.d_rmin:
                issues.append(ValidationIssue(
                    "warning", f"{cav.cav_id}: goal pose conflicts with road "
                    f"block {k}; goal is unreachable without a violation"))
                break
    for i in range(sc.n_cavs):
        for j in range(i + 1, sc.n_cavs):
            a, b = sc.cavs[i], sc.cavs[j]
            dist = min_distance_oracle(bodies[a.cav_id], bodies[b.cav_id])
            if dist < sc.d_min:
                issues.append(ValidationIssue(
                    "error", f"initial separation violated between {a.cav_id} "
                    f"and {b.cav_id}: distance {dist:.3f} m < {sc.d_min} m"))
    return issues


# ---------------------------------------------------------------------------
# JSON serialization. Strict: unknown keys are rejected so that typos in
# scenario files fail loudly instead of silently using defaults.

_PARAM_KEYS = {"mass", "inertia_z", "lf", "lr", "cf", "cr",
               "body_length", "body_width"}
_BOUND_KEYS = {"v_min", "v_max", "a_max", "delta_max", "r_max", "beta_max"}


def _require_keys(obj: dict, allowed: set, required: set, where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ScenarioFormatError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ScenarioFormatError(f"{where}: missing keys {sorted(missing)}")


def _pose(raw, where: str) -> Pose:
    if not isinstance(raw, (list, tuple)) or len(raw) != 3:
        raise ScenarioFormatError(f"{where}: pose must be [x, y, theta]")
    return Pose(*[float(v) for v in raw])


def scenario_from_dict(doc: dict) -> Scenario:
    _require_keys(doc, {"layout", "gains", "safety", "cavs", "t0"},
                  {"layout", "gains", "safety", "cavs"}, "scenario")
    lay = doc["layout"]
    _require_keys(lay, {"w", "L"}, {"w", "L"}, "layout")
    layout = IntersectionLayout(lane_width=float(lay["w"]),
                                arm_length=float(lay["L"]))

    gains = doc["gains"]
    _require_keys(gains, {"alpha", "Q", "terminal_weight"},
                  {"alpha", "Q"}, "gains")
    q = np.asarray(gains["Q"], dtype=float)
    if q.shape != (3, 3):
        raise ScenarioFormatError("gains.Q must be a 3x3 matrix")
    eigvals = np.linalg.eigvalsh(0.5 * (q + q.T))
    if eigvals.min() < -1e-9:
        raise ScenarioFormatError("gains.Q must be positive semidefinite")

    safety = doc["safety"]
    _require_keys(safety, {"d_min", "d_rmin"}, {"d_min", "d_rmin"}, "safety")

    cavs = []
    for k, raw in enumerate(doc["cavs"]):
        where = f"cavs[{k}]"
        _require_keys(raw, {"id", "params", "z0", "v0", "zf", "bounds"},
                      {"id", "z0", "v0", "zf"}, where)
        params = VehicleParams(**raw["params"]) if "params" in raw else VehicleParams()
        if "params" in raw:
            _require_keys(raw["params"], _PARAM_KEYS, set(), f"{where}.params")
        bounds = StateBounds(**raw["bounds"]) if "bounds" in raw else StateBounds()
        if "bounds" in raw:
            _require_keys(raw["bounds"], _BOUND_KEYS, set(), f"{where}.bounds")
        cavs.append(CavSpec(
            cav_id=str(raw["id"]),
            params=params,
            start=_pose(raw["z0"], where),
            v0=float(raw["v0"]),
            goal=_pose(raw["zf"], where),
            bounds=bounds,
        ))

    return Scenario(layout=layout, cavs=tuple(cavs),
                    alpha=float(gains["alpha"]), q=q,
                    terminal_weight=float(gains.get("terminal_weight",
                                                    100.0)),
                    d_min=float(safety["d_min"]),
                    d_rmin=float(safety["d_rmin"]),
                    t0=float(doc.get("t0", 0.0)))


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "layout": {"w": sc.layout.lane_width, "L": sc.layout.arm_length},
        "gains": {"alpha": sc.alpha, "Q": sc.q.tolist(),
                  "terminal_weight": sc.terminal_weight},
        "safety": {"d_min": sc.d_min, "d_rmin": sc.d_rmin},
        "t0": sc.t0,
        "cavs": [
            {
                "id": c.cav_id,
                "params": {
                    "mass": c.params.mass, "inertia_z": c.params.inertia_z,
                    "lf": c.params.lf, "lr": c.params.lr,
                    "cf": c.params.cf, "cr": c.params.cr,
                    "body_length": c.params.body_length,
                    "body_width": c.params.body_width,
                },
                "z0": list(c.start.as_array()),
                "v0": c.v0,
                "zf": list(c.goal.as_array()),
                "bounds": {
                    "v_min": c.bounds.v_min, "v_max": c.bounds.v_max,
                    "a_max": c.bounds.a_max, "delta_max": c.bounds.delta_max,
                    "r_max": c.bounds.r_max, "beta_max": c.bounds.beta_max,
                },
            }
            for c in sc.cavs
        ],
    }


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    doc = json.loads(text)   # json.JSONDecodeError carries line/column
    if not isinstance(doc, dict):
        raise ScenarioFormatError("scenario file must contain a JSON object")
    return scenario_from_dict(doc)


def save_scenario(sc: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(sc), fh, indent=2, sort_keys=True)
        fh.write("\n")
