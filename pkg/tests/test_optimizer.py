import math

import numpy as np
import pytest

from uavarray.optimizer import (
    PrecodingMatrix,
    SlotProblem,
    constraint_violation,
    robust_violation,
    snr_per_stream,
    solve_precoding_slot,
    solve_robust_precoding_slot,
    total_power,
    zf_precoder,
)
from uavarray.security import UncertaintyModel, worst_case_snr


def test_single_stream_matches_mrt(random_channel):
    for _ in range(5):
        h = random_channel(1, 4)
        W, report = solve_precoding_slot(SlotProblem(H=h, gamma=1.0, sigma2=1.0))
        assert report.ok
        assert report.objective == pytest.approx(1.0 / np.sum(np.abs(h) ** 2), rel=1e-6)
        assert snr_per_stream(h, W, 1.0)[0] == pytest.approx(1.0, rel=1e-6)


def test_multi_stream_sandwich(random_channel):
    for _ in range(5):
        H = random_channel(2, 4)
        W, report = solve_precoding_slot(SlotProblem(H=H, gamma=2.0, sigma2=1.0))
        zf = zf_precoder(H, 2.0, 1.0)
        assert report.ok
        assert report.lower_bound * (1 - 1e-6) <= report.objective <= zf.power * (1 + 1e-6)
        assert np.all(snr_per_stream(H, W, 1.0) >= 2.0 * (1 - 1e-6))


def test_solution_scales_with_noise(random_channel):
    H = random_channel(2, 3) * 1e-4
    W, report = solve_precoding_slot(SlotProblem(H=H, gamma=25.0, sigma2=1e-14))
    assert report.ok
    assert np.all(snr_per_stream(H, W, 1e-14) >= 25.0 * (1 - 1e-6))
    assert report.objective < 1e-3


def test_per_uav_power_is_respected(random_channel):
    H = random_channel(1, 4)
    free, _ = solve_precoding_slot(SlotProblem(H=H, gamma=1.0, sigma2=1.0))
    limit = 0.8 * float(free.row_power.max())
    W, report = solve_precoding_slot(SlotProblem(H=H, gamma=1.0, sigma2=1.0, P_max=limit))
    if report.ok:
        assert W.row_power.max() <= limit * (1 + 1e-6)
    else:
        assert report.cause == "per_uav_power"


def test_zero_power_budget_is_infeasible(random_channel):
    W, report = solve_precoding_slot(SlotProblem(H=random_channel(1, 3), gamma=1.0, sigma2=1.0, P_max=0.0))
    assert report.status == "infeasible"
    assert report.cause == "per_uav_power"
    assert W.power == 0.0


def test_tight_cap_is_diagnosed(random_channel):
    _, report = solve_precoding_slot(SlotProblem(H=random_channel(2, 4), gamma=2.0, sigma2=1.0, spectral_cap=1e-6))
    assert report.status == "infeasible"
    assert report.cause == "spectral_cap"


def test_identical_streams_are_infeasible(random_channel):
    h = random_channel(1, 3)
    _, report = solve_precoding_slot(SlotProblem(H=np.vstack([h, h]), gamma=2.0, sigma2=1.0))
    assert report.cause == "snr"


def test_spectral_cap_is_respected(random_channel):
    H = random_channel(2, 4)
    free, _ = solve_precoding_slot(SlotProblem(H=H, gamma=2.0, sigma2=1.0))
    cap = 1.05 * float(np.linalg.eigvalsh(free.gram)[-1])
    W, report = solve_precoding_slot(SlotProblem(H=H, gamma=2.0, sigma2=1.0, spectral_cap=cap))
    assert report.ok
    assert np.linalg.eigvalsh(W.gram)[-1] <= cap * (1 + 1e-6)


def test_zf_meets_targets_exactly(random_channel):
    H = random_channel(3, 5)
    W = zf_precoder(H, 4.0, 0.5)
    np.testing.assert_allclose(snr_per_stream(H, W, 0.5), 4.0, rtol=1e-9)
    with pytest.raises(ValueError):
        zf_precoder(np.vstack([H[0], H[0]]), 1.0, 1.0)


def test_slot_problem_validation(random_channel):
    with pytest.raises(ValueError):
        SlotProblem(H=random_channel(3, 2), gamma=1.0, sigma2=1.0)
    with pytest.raises(ValueError):
        SlotProblem(H=random_channel(1, 2), gamma=0.0, sigma2=1.0)
    with pytest.raises(ValueError):
        SlotProblem(H=random_channel(1, 2), gamma=1.0, sigma2=1.0, spectral_cap=0.0)


def test_constraint_violation_families():
    H = np.array([[1.0, 0.0], [0.0, 1.0]])
    W = np.eye(2)
    violations = constraint_violation(H, W, gamma=2.0, sigma2=1.0, spectral_cap=0.5, P_max=2.0)
    assert violations["snr"] == pytest.approx(0.5)
    assert violations["spectral_cap"] == pytest.approx(1.0)
    assert violations["per_uav_power"] == 0.0
    assert set(constraint_violation(H, W, 1.0, 1.0)) == {"snr"}


def test_total_power_and_precoding_matrix():
    W = PrecodingMatrix([[1.0, 1j], [0.0, 2.0]])
    assert W.N == 2 and W.K == 2
    assert W.power == pytest.approx(6.0)
    np.testing.assert_allclose(W.row_power, [2.0, 4.0])
    assert total_power([W, PrecodingMatrix.zeros(2, 2), np.eye(2)]) == pytest.approx(8.0)
    with pytest.raises(ValueError):
        PrecodingMatrix([[math.nan]])


def test_robust_precoder_survives_the_ball(random_channel):
    H = random_channel(2, 4)
    gamma, eps = 2.0, 0.1
    model = UncertaintyModel.from_rows(H, eps)
    problem = SlotProblem(H=H, gamma=gamma, sigma2=1.0)
    W, report = solve_robust_precoding_slot(problem, model)
    nominal, _ = solve_precoding_slot(problem)
    assert report.ok, report.message
    assert report.objective >= nominal.power * (1 - 1e-6)
    assert robust_violation(W, gamma, model) <= 1e-5 * gamma
    for k in range(2):
        assert worst_case_snr(W, k, model, 1.0, rng=np.random.default_rng(k)) >= gamma * (1 - 1e-4)


def test_robust_with_zero_radius_matches_nominal(random_channel):
    H = random_channel(1, 3)
    problem = SlotProblem(H=H, gamma=1.0, sigma2=1.0)
    W, report = solve_robust_precoding_slot(problem, UncertaintyModel.from_rows(H, 0.0))
    nominal, _ = solve_precoding_slot(problem)
    assert report.ok
    assert report.objective == pytest.approx(nominal.power, rel=1e-5)


def test_robust_model_shape_is_checked(random_channel):
    H = random_channel(2, 3)
    with pytest.raises(ValueError):
        solve_robust_precoding_slot(SlotProblem(H=H, gamma=1.0, sigma2=1.0), UncertaintyModel.from_rows(H[:1], 0.1))


def test_single_stream_on_a_large_array(rng):
    N = 256
    h = np.exp(2j * np.pi * rng.random((1, N)))
    row = 1.0 / N**2
    W, report = solve_precoding_slot(SlotProblem(H=h, gamma=1.0, sigma2=1.0, P_max=1.01 * row))
    assert report.ok, report.message
    assert report.objective == pytest.approx(1.0 / N, rel=1e-6)
    assert report.lower_bound == pytest.approx(report.objective, rel=1e-6)
    np.testing.assert_allclose(W.row_power, row, rtol=1e-4)


def test_single_stream_cap_is_diagnosed(random_channel):
    h = random_channel(1, 16)
    _, report = solve_precoding_slot(SlotProblem(H=h, gamma=1.0, sigma2=1.0, spectral_cap=1e-6 / np.sum(np.abs(h) ** 2)))
    assert report.status == "infeasible"
    assert report.cause == "spectral_cap"


@pytest.mark.slow
def test_multi_stream_on_a_64_element_array(random_channel):
    H = random_channel(2, 64)
    W, report = solve_precoding_slot(SlotProblem(H=H, gamma=2.0, sigma2=1.0))
    assert report.ok, report.message
    assert report.objective <= zf_precoder(H, 2.0, 1.0).power * (1 + 1e-6)
    assert np.all(snr_per_stream(H, W, 1.0) >= 2.0 * (1 - 1e-6))


def test_removing_the_cap_never_costs_power(random_channel):
    for _ in range(4):
        H = random_channel(2, 4)
        free, free_report = solve_precoding_slot(SlotProblem(H=H, gamma=2.0, sigma2=1.0))
        top = float(np.linalg.eigvalsh(free.gram)[-1])
        for factor in (0.9, 1.2, 3.0):
            _, capped = solve_precoding_slot(SlotProblem(H=H, gamma=2.0, sigma2=1.0, spectral_cap=factor * top))
            if capped.ok:
                assert free_report.objective <= capped.objective * (1 + 1e-6)
                assert free_report.lower_bound <= capped.lower_bound * (1 + 1e-6)
