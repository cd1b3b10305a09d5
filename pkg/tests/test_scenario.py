import json

import numpy as np
import pytest

from lanefree.geometry import IntersectionLayout, Pose
from lanefree.scenario import (Scenario, ScenarioFormatError, load_scenario,
                               objective_value, save_scenario,
                               scenario_from_dict, scenario_to_dict,
                               validate_scenario)
from lanefree.transcription import (TranscriptionConfig, initial_guess,
                                    extract_solution, pack_decision,
                                    transcribe)

from conftest import make_cav


def solution_from_poses(sc, cfg, tf, pose_fn):
    """Build a CrossingSolution whose node states follow pose_fn(cav, t)."""
    problem = transcribe(sc, cfg)

    def state_fn(cav, t):
        z = pose_fn(cav, t)
        return np.array([0.0, 0.0, cav.v0, z[0], z[1], z[2]])

    x = pack_decision(sc, cfg, problem, tf, state_fn,
                      lambda cav, t: np.zeros(2))
    return extract_solution(x, sc, cfg, problem)


def test_objective_at_goal_is_time_term_only(straight_scenario):
    sc = Scenario(layout=straight_scenario.layout,
                  cavs=straight_scenario.cavs, alpha=1.0)
    cfg = TranscriptionConfig(n_intervals=3, degree=3)
    goal = sc.cavs[0].goal.as_array()
    sol = solution_from_poses(sc, cfg, tf=1.0, pose_fn=lambda cav, t: goal)
    assert objective_value(sol, sc) == pytest.approx(1.0, abs=1e-12)


def test_objective_zero_q_is_pure_time(straight_scenario):
    sc = Scenario(layout=straight_scenario.layout,
                  cavs=straight_scenario.cavs, alpha=2.5, q=np.zeros((3, 3)))
    cfg = TranscriptionConfig(n_intervals=3, degree=3)
    sol = solution_from_poses(
        sc, cfg, tf=3.0,
        pose_fn=lambda cav, t: cav.start.as_array() * (1 - t / 3.0)
        + cav.goal.as_array() * (t / 3.0))
    assert objective_value(sol, sc) == pytest.approx(2.5 * 9.0, abs=1e-10)


def test_objective_linear_interpolation_closed_form(straight_scenario):
    sc = Scenario(layout=straight_scenario.layout,
                  cavs=straight_scenario.cavs, alpha=0.0, q=np.eye(3))
    cfg = TranscriptionConfig(n_intervals=5, degree=4)
    tf = 4.0
    z0 = sc.cavs[0].start.as_array()
    zf = sc.cavs[0].goal.as_array()
    sol = solution_from_poses(
        sc, cfg, tf,
        pose_fn=lambda cav, t: z0 + (t / tf) * (zf - z0))
    dz = zf - z0
    want = (tf / 3.0) * float(dz @ dz)
    assert objective_value(sol, sc) == pytest.approx(want, rel=1e-10)


def test_objective_invariant_under_relabeling(crossing_scenario):
    sc = crossing_scenario
    cfg = TranscriptionConfig(n_intervals=3, degree=2)

    def pose_fn(cav, t):
        z0 = cav.start.as_array()
        return z0 + 0.2 * t * (cav.goal.as_array() - z0)

    sol = solution_from_poses(sc, cfg, 2.0, pose_fn)
    value = objective_value(sol, sc)
    flipped = sc.with_cavs(sc.cavs[::-1])
    sol_flipped = solution_from_poses(flipped, cfg, 2.0, pose_fn)
    assert objective_value(sol_flipped, flipped) == pytest.approx(
        value, rel=1e-12)


def test_validate_clean_scenario(crossing_scenario):
    assert validate_scenario(crossing_scenario) == []


def test_validate_overlapping_starts():
    layout = IntersectionLayout(5.0, 35.0)
    sc = Scenario(layout=layout, cavs=(
        make_cav("a", (-20.0, -2.5, 0.0), 10.0, (30.0, -2.5, 0.0)),
        make_cav("b", (-19.0, -2.0, 0.1), 10.0, (30.0, 2.5, 0.0)),
    ))
    issues = validate_scenario(sc)
    assert any("initial separation violated" in i.message for i in issues)
    assert any(i.severity == "error" for i in issues)


def test_validate_table_one_speed_passes():
    layout = IntersectionLayout(5.0, 35.0)
    sc = Scenario(layout=layout, cavs=(
        make_cav("a", (-30.0, -2.5, 0.0), 10.0, (30.0, -2.5, 0.0)),))
    assert validate_scenario(sc) == []


def test_validate_speed_out_of_bounds():
    layout = IntersectionLayout(5.0, 35.0)
    sc = Scenario(layout=layout, cavs=(
        make_cav("a", (-30.0, -2.5, 0.0), 30.0, (30.0, -2.5, 0.0)),))
    issues = validate_scenario(sc)
    assert any("initial speed" in i.message for i in issues)


def test_validate_goal_in_corner_block_warns():
    layout = IntersectionLayout(5.0, 35.0)
    sc = Scenario(layout=layout, cavs=(
        make_cav("a", (-30.0, -2.5, 0.0), 10.0, (20.0, 20.0, 0.0)),))
    issues = validate_scenario(sc)
    assert any(i.severity == "warning" and "goal" in i.message
               for i in issues)


def test_validate_start_off_road():
    layout = IntersectionLayout(5.0, 35.0)
    sc = Scenario(layout=layout, cavs=(
        make_cav("a", (-20.0, -4.2, 0.0), 10.0, (30.0, -2.5, 0.0)),))
    issues = validate_scenario(sc)
    assert any("road clearance" in i.message for i in issues)


def test_json_roundtrip(tmp_path, crossing_scenario):
    path = tmp_path / "scenario.json"
    save_scenario(crossing_scenario, path)
    loaded = load_scenario(path)
    assert loaded.n_cavs == 2
    assert loaded.cavs[0].cav_id == "e0"
    np.testing.assert_allclose(loaded.q, crossing_scenario.q)
    assert loaded.d_min == crossing_scenario.d_min
    np.testing.assert_allclose(loaded.cavs[1].start.as_array(),
                               crossing_scenario.cavs[1].start.as_array())


def test_unknown_keys_rejected(crossing_scenario):
    doc = scenario_to_dict(crossing_scenario)
    doc["extra_section"] = {}
    with pytest.raises(ScenarioFormatError, match="unknown keys"):
        scenario_from_dict(doc)
    doc = scenario_to_dict(crossing_scenario)
    doc["cavs"][0]["speed_limit"] = 99
    with pytest.raises(ScenarioFormatError, match="unknown keys"):
        scenario_from_dict(doc)


def test_missing_sections_rejected(crossing_scenario):
    doc = scenario_to_dict(crossing_scenario)
    del doc["safety"]
    with pytest.raises(ScenarioFormatError, match="missing keys"):
        scenario_from_dict(doc)


def test_bad_q_rejected(crossing_scenario):
    doc = scenario_to_dict(crossing_scenario)
    doc["gains"]["Q"] = [[1.0, 0.0], [0.0, 1.0]]
    with pytest.raises(ScenarioFormatError, match="3x3"):
        scenario_from_dict(doc)
    doc["gains"]["Q"] = (-np.eye(3)).tolist()
    with pytest.raises(ScenarioFormatError, match="semidefinite"):
        scenario_from_dict(doc)


def test_malformed_json_reports_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"layout": {"w": 5.0,\n  "L": }\n}', encoding="utf-8")
    with pytest.raises(json.JSONDecodeError) as err:
        load_scenario(path)
    assert err.value.lineno == 2
    assert err.value.colno > 0


def test_duplicate_ids_rejected():
    layout = IntersectionLayout(5.0, 35.0)
    with pytest.raises(ValueError, match="unique"):
        Scenario(layout=layout, cavs=(
            make_cav("a", (-30.0, -2.5, 0.0), 10.0, (30.0, -2.5, 0.0)),
            make_cav("a", (2.5, -30.0, np.pi / 2), 10.0,
                     (2.5, 30.0, np.pi / 2)),
        ))
