import math

import numpy as np
import pytest
from scipy import stats

from uavarray.security import (
    ChanceConstraintParams,
    UncertaintyModel,
    best_slack,
    binomial_std_error,
    eve_leakage,
    inverse_chi_square_quantile,
    robust_lmi_blocks,
    spectral_cap,
    stream_snr,
    validate_chance_constraint,
    worst_case_snr,
)

PARAMS = ChanceConstraintParams(xi=1.0, kappa=0.99, Q=3, sigmaE2=1.0)


def test_single_uav_cap_closed_form():
    assert spectral_cap(PARAMS, 1) == pytest.approx(0.17542, abs=1e-4)
    scaled = ChanceConstraintParams(xi=2.0, kappa=0.99, Q=3, sigmaE2=0.5)
    assert spectral_cap(scaled, 1) == pytest.approx(spectral_cap(PARAMS, 1))


@pytest.mark.parametrize("N", [1, 2, 4, 8])
def test_inverse_quantile_matches_gamma_tail(N):
    p = 1e-3
    t = inverse_chi_square_quantile(p, N)
    assert stats.gamma.sf(1.0 / t, N) == pytest.approx(p, rel=1e-9)


def test_cap_shrinks_with_array_size():
    caps = [spectral_cap(PARAMS, N) for N in (1, 2, 4, 8)]
    assert caps == sorted(caps, reverse=True)


def test_no_eve_means_no_cap():
    assert spectral_cap(ChanceConstraintParams(xi=1.0, kappa=0.99, Q=0, sigmaE2=1.0), 4) == math.inf


@pytest.mark.parametrize(
    "kwargs",
    [
        {"xi": 0.0, "kappa": 0.9, "Q": 1, "sigmaE2": 1.0},
        {"xi": 1.0, "kappa": 1.0, "Q": 1, "sigmaE2": 1.0},
        {"xi": 1.0, "kappa": 0.9, "Q": -1, "sigmaE2": 1.0},
        {"xi": 1.0, "kappa": 0.9, "Q": 1, "sigmaE2": 0.0},
    ],
)
def test_invalid_chance_parameters(kwargs):
    with pytest.raises(ValueError):
        ChanceConstraintParams(**kwargs)


@pytest.mark.parametrize("N", [1, 4])
def test_cap_is_calibrated(N):
    samples = 20_000
    W = np.zeros((N, 1), dtype=complex)
    W[0, 0] = math.sqrt(spectral_cap(PARAMS, N))
    p = validate_chance_constraint(W, PARAMS, samples, np.random.default_rng([2024, N]))
    assert p >= PARAMS.kappa - 4 * binomial_std_error(PARAMS.kappa, samples)


def test_chance_validation_without_eves():
    params = ChanceConstraintParams(xi=1.0, kappa=0.99, Q=0, sigmaE2=1.0)
    assert validate_chance_constraint(np.ones((2, 1)), params, 10_000, np.random.default_rng(0)) == 1.0
    with pytest.raises(ValueError):
        validate_chance_constraint(np.ones((2, 1)), PARAMS, 100, np.random.default_rng(0))


def test_eve_leakage_sums_streams():
    h = np.array([1.0, 1j])
    W = np.array([[1.0, 0.0], [0.0, 2.0]])
    assert eve_leakage(h, W) == pytest.approx(5.0)


def test_uncertainty_model_from_rows():
    rows = np.array([[1.0 + 1j, 2.0]])
    model = UncertaintyModel.from_rows(rows, 0.1)
    np.testing.assert_array_equal(model.h_hat, rows.conj())
    np.testing.assert_array_equal(model.epsilon, [0.1])
    with pytest.raises(ValueError):
        UncertaintyModel(epsilon=[-0.1], h_hat=rows)


def _mrt(h, snr, sigma2=1.0):
    """Single-stream precoder along h reaching the given SNR."""
    return (h / np.linalg.norm(h) * math.sqrt(snr * sigma2) / np.linalg.norm(h)).reshape(-1, 1)


def test_blocks_certify_a_margin(random_channel):
    rows = random_channel(1, 4)
    model = UncertaintyModel.from_rows(rows, 0.0)
    W = _mrt(model.h_hat[0], 1.2 * 2.0)
    lifted = [W @ W.conj().T]
    slack, eig = best_slack(lifted, 2.0, model, 0)
    assert eig >= 0.0
    block = robust_lmi_blocks(lifted, 2.0, model, [slack])[0]
    assert block.shape == (5, 5)
    np.testing.assert_allclose(block, block.conj().T)


def test_blocks_reject_a_shortfall(random_channel):
    model = UncertaintyModel.from_rows(random_channel(1, 4), 0.0)
    W = _mrt(model.h_hat[0], 0.8 * 2.0)
    slack, eig = best_slack([W @ W.conj().T], 2.0, model, 0)
    assert eig < 0.0


def test_block_argument_checks(random_channel):
    model = UncertaintyModel.from_rows(random_channel(2, 3), 0.1)
    lifted = [np.eye(3), np.eye(3)]
    with pytest.raises(ValueError):
        robust_lmi_blocks(lifted, 1.0, model, [0.0])
    with pytest.raises(ValueError):
        robust_lmi_blocks(lifted, 1.0, model, [-1.0, 0.0])


def test_worst_case_snr_single_stream(random_channel):
    eps = 0.3
    model = UncertaintyModel.from_rows(random_channel(1, 4), eps)
    h = model.h_hat[0]
    W = _mrt(h, 4.0)
    analytic = (np.linalg.norm(h) - eps) ** 2 * np.linalg.norm(W) ** 2
    value = worst_case_snr(W, 0, model, probes=2000, rng=np.random.default_rng(1))
    assert analytic * (1 - 1e-9) <= value <= analytic * (1 + 1e-4)
    assert value <= stream_snr(h, W, 0, 1.0)


def test_worst_case_snr_without_uncertainty(random_channel):
    model = UncertaintyModel.from_rows(random_channel(1, 3), 0.0)
    W = _mrt(model.h_hat[0], 3.0)
    assert worst_case_snr(W, 0, model) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        worst_case_snr(W, 0, model, probes=10)
