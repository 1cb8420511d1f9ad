import math

import numpy as np
import pytest

from uavarray import trajectory
from uavarray.config import NoFlyZone, default_config
from uavarray.geometry import slot_schedule
from uavarray.topology import topology_from_config
from uavarray.trajectory import (
    PowerSurrogate,
    Trajectory,
    check_trajectory,
    double_loop_optimize,
    initial_trajectory,
    linearize_no_fly,
    plan_centers,
    slot_rows,
    slot_surrogates,
    trajectory_step,
)

DETOUR = {
    "array": {"N": 4, "K": 2},
    "bs": {"M": 4, "position": [100.0, 40.0]},
    "trajectory": {"d_F": [200.0, 0.0], "T": 40.0, "I": 10, "max_outer": 4, "epsilon_out": 1e-2},
    "no_fly_zones": [{"center": [100.0, 10.0], "radius": 30.0}],
}


def test_linearization_is_tangent():
    zone = NoFlyZone(center=(0.0, 0.0), radius=5.0)
    half = linearize_no_fly((10.0, 0.0), zone)
    assert half.value((10.0, 0.0)) == pytest.approx(100.0 - 25.0)
    assert half.value((6.25, 7.0)) == pytest.approx(0.0)
    for p in [(3.0, 0.0), (0.0, 0.0), (4.9, 0.5)]:
        assert half.value(p) < 0.0


def test_linearization_at_center_fails():
    with pytest.raises(ValueError, match="perturb"):
        linearize_no_fly((1.0, 2.0), NoFlyZone(center=(1.0, 2.0), radius=1.0))


def test_straight_line_and_checks():
    config = default_config(**DETOUR)
    line = Trajectory.straight_line(config)
    assert line.I == 10
    np.testing.assert_allclose(line.centers[0], config.d_I)
    np.testing.assert_allclose(line.centers[-1], config.d_F)
    problems = check_trajectory(line, config)
    assert len(problems) == 1
    assert "no_fly_zones[0]" in problems[0]


def test_trajectory_shape_is_checked():
    with pytest.raises(ValueError):
        Trajectory(centers=np.zeros((3, 2)), per_slot_power=np.zeros(3), total_Gamma=0.0)


def test_power_surrogate_scales_with_distance():
    config = default_config()
    surrogate = PowerSurrogate.from_slot(config, (300.0, 400.0), 2.0)
    assert surrogate((300.0, 400.0)) == pytest.approx(2.0)
    far = surrogate((300.0, 400.0 + config.altitude))
    assert far == pytest.approx(4.0)


def test_last_step_lands_on_destination():
    config = default_config(**DETOUR)
    line = Trajectory.straight_line(config)
    surrogate = PowerSurrogate.from_slot(config, line.centers[-1], 0.0)
    point, report = trajectory_step(line, config.I, config, surrogate)
    assert report.ok
    np.testing.assert_allclose(point, config.d_F)
    with pytest.raises(ValueError):
        trajectory_step(line, 0, config, surrogate)


def test_step_respects_speed_and_zone():
    config = default_config(**DETOUR)
    line = Trajectory.straight_line(config)
    surrogate = PowerSurrogate.from_slot(config, line.centers[4], 0.0)
    previous = np.array([60.0, -20.0])
    point, report = trajectory_step(line, 4, config, surrogate, previous_center=previous)
    assert report.ok
    assert np.linalg.norm(point - previous) <= config.step_limit * (1 + 1e-6)
    assert math.dist(point, (100.0, 10.0)) >= 30.0 - 1e-6


def test_slot_rows_shape():
    config = default_config(**DETOUR)
    rows = slot_rows(config, topology_from_config(config), (0.0, 0.0), 0.0)
    assert rows.shape == (2, 4)


def test_unreachable_destination_is_reported():
    config = default_config(trajectory={"d_F": [1000.0, 0.0], "T": 8.0, "I": 4})
    traj, precoders, report = double_loop_optimize(config, topology_from_config(config))
    assert report.status == "infeasible"
    assert report.cause == "reachability"
    assert precoders == []


REPOSITIONING = {"period_Lambda": 20.0, "fraction_iota": 0.2}


def _held(traj, schedule):
    return [np.linalg.norm(traj.centers[p.slot] - traj.centers[p.slot - 1]) for p in schedule if not p.transmit]


def test_initial_trajectory_goes_around_the_zone():
    config = default_config(**DETOUR)
    start = initial_trajectory(config)
    assert check_trajectory(start, config) == []
    assert start.transmit.all()
    assert start.total_Gamma == 0.0


def test_initial_trajectory_too_long_for_the_budget():
    config = default_config(**{**DETOUR, "trajectory": {**DETOUR["trajectory"], "T": 21.0}})
    assert math.dist(config.d_I, config.d_F) < config.I * config.step_limit
    assert initial_trajectory(config) is None


def test_initial_trajectory_holds_on_repositioning_slots():
    config = default_config(**DETOUR, rotation=REPOSITIONING)
    schedule = slot_schedule(config)
    assert not all(p.transmit for p in schedule)
    start = initial_trajectory(config, schedule)
    assert check_trajectory(start, config) == []
    assert max(_held(start, schedule)) == 0.0


def test_plan_keeps_the_previous_iterate_feasible():
    config = default_config(**DETOUR, rotation=REPOSITIONING)
    schedule = slot_schedule(config)
    start = initial_trajectory(config, schedule)
    plan = plan_centers(start, config, slot_surrogates(start, config), schedule)
    assert plan is not None
    centers = np.vstack([np.asarray(config.d_I), plan])
    planned = Trajectory(centers=centers, per_slot_power=np.zeros(config.I), total_Gamma=0.0)
    assert check_trajectory(planned, config) == []
    assert max(_held(planned, schedule)) <= 1e-6


def test_unreachable_detour_is_reported():
    config = default_config(**{**DETOUR, "trajectory": {**DETOUR["trajectory"], "T": 21.0}})
    traj, precoders, report = double_loop_optimize(config, topology_from_config(config))
    assert report.status == "infeasible"
    assert report.cause == "reachability"
    assert report.slot == 0
    assert precoders == []


def test_failed_iteration_keeps_the_start_path(monkeypatch):
    config = default_config(**DETOUR)
    failure = trajectory._Sweep(failure=trajectory.SolverReport("infeasible", math.nan, cause="snr", slot=3))
    monkeypatch.setattr(trajectory, "_sweep", lambda *args: failure)
    traj, precoders, report = double_loop_optimize(config, topology_from_config(config))
    assert report.status == "max_iters"
    assert report.cause is None
    assert "slot 3" in report.message
    assert len(report.history) == 1
    assert len(precoders) == config.I
    np.testing.assert_allclose(traj.centers, initial_trajectory(config).centers)


@pytest.mark.slow
def test_double_loop_detour():
    config = default_config(**DETOUR)
    traj, precoders, report = double_loop_optimize(config, topology_from_config(config))
    assert report.status in ("optimal", "max_iters"), report.message
    assert check_trajectory(traj, config) == []
    assert len(precoders) == config.I
    history = np.asarray(report.history)
    assert history.size >= 1
    assert np.all(np.diff(history) <= 1e-6 * history[:-1])
    assert report.objective == pytest.approx(traj.total_Gamma)
    assert traj.total_Gamma == pytest.approx(sum(W.power for W in precoders))


@pytest.mark.slow
def test_double_loop_holds_during_repositioning():
    config = default_config(**DETOUR, rotation=REPOSITIONING)
    schedule = slot_schedule(config)
    traj, precoders, report = double_loop_optimize(config, topology_from_config(config))
    assert report.status in ("optimal", "max_iters"), report.message
    assert check_trajectory(traj, config) == []
    assert max(_held(traj, schedule)) <= 1e-6
    for phase, W in zip(schedule, precoders):
        if not phase.transmit:
            assert W.power == 0.0


@pytest.mark.slow
def test_hover_is_tangent_when_the_bs_is_inside_the_zone():
    config = default_config(
        array={"K": 1},
        trajectory={"max_outer": 15, "epsilon_out": 1e-3},
        no_fly_zones=[{"center": [315.0, 375.0], "radius": 60.0}],
    )
    zone = config.no_fly_zones[0]
    assert math.dist(config.bs_position, zone.center) < zone.radius
    traj, precoders, report = double_loop_optimize(config, topology_from_config(config))
    assert report.status in ("optimal", "max_iters"), report.message
    assert check_trajectory(traj, config) == []
    clearance = np.linalg.norm(traj.centers - np.asarray(zone.center), axis=1).min()
    assert zone.radius - 1e-6 <= clearance <= zone.radius + config.step_limit
    history = np.asarray(report.history)
    assert history.size >= 2
    assert np.all(np.diff(history) <= 1e-6 * history[:-1])
