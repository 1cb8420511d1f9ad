import math

import numpy as np
import pytest

from uavarray.config import default_config, db_to_linear
from uavarray.evaluation import (
    ExperimentResult,
    capacity_sweep,
    eve_snr,
    ground_grid,
    hover_array,
    hover_precoder,
    power_sweep,
    radiation_map,
    robust_secrecy_sweep,
    secrecy_rate_mc,
    secrecy_rate_samples,
    secrecy_sweep,
    sidelobe_peak_db,
    snr_per_stream,
)
from uavarray.geometry import uav_positions
from uavarray.optimizer import zf_precoder


def test_experiment_result_checks_columns():
    import pandas as pd

    with pytest.raises(ValueError):
        ExperimentResult(("N",), "capacity", pd.DataFrame({"N": [1]}), 1, 0)


def test_capacity_orderings(small_config):
    frame = capacity_sweep(small_config).frame
    assert len(frame) == 2 * 3 * 3
    flat = frame[frame["phi"] == 0.0]
    nula = flat[flat["topology"] == "NULA"].set_index("gamma_db")["capacity"]
    ula = flat[flat["topology"] == "ULA"].set_index("gamma_db")["capacity"]
    assert np.all(nula >= ula - 1e-12)
    for (name, phi), curve in frame.groupby(["topology", "phi"]):
        base = flat[flat["topology"] == name].set_index("gamma_db")["capacity"]
        assert np.all(curve.set_index("gamma_db")["capacity"] <= base + 1e-12)


def test_capacity_sweep_is_deterministic(small_config):
    assert capacity_sweep(small_config).frame.equals(capacity_sweep(small_config).frame)


def test_power_sweep_proposed_never_exceeds_zf(small_config):
    frame = power_sweep(small_config, phis=(0.0,)).frame
    proposed = frame[frame["scheme"] == "proposed"].set_index(["N", "K"])
    zf = frame[frame["scheme"] == "zf"].set_index(["N", "K"])
    assert (proposed["status"] == "optimal").all()
    assert np.all(proposed["power_w"] <= zf["power_w"] * (1 + 1e-6))


def test_secrecy_rate_without_eves_is_the_capacity(small_config, random_channel):
    H = random_channel(2, 4) * 1e-4
    W = zf_precoder(H, small_config.gamma, small_config.sigma2)
    values = secrecy_rate_samples(H, W, small_config, 100, seed=1, Q=0)
    expected = 2 * math.log2(1 + small_config.gamma)
    np.testing.assert_allclose(values, expected, rtol=1e-9)
    with pytest.raises(ValueError):
        secrecy_rate_samples(H, W, small_config, 10, seed=1)


def test_secrecy_rate_is_reproducible_and_bounded(small_config, random_channel):
    H = random_channel(2, 4) * 1e-4
    W = zf_precoder(H, small_config.gamma, small_config.sigma2)
    first = secrecy_rate_mc(H, W, small_config, 200, seed=3)
    assert first == secrecy_rate_mc(H, W, small_config, 200, seed=3)
    assert 0.0 <= first <= secrecy_rate_mc(H, W, small_config, 200, seed=3, Q=0)


def test_more_eves_never_help(small_config, random_channel):
    H = random_channel(1, 4)
    W = zf_precoder(H, 10.0, 1.0)
    fewer = secrecy_rate_samples(H, W, small_config, 200, seed=5, Q=1)
    more = secrecy_rate_samples(H, W, small_config, 200, seed=5, Q=3)
    assert np.all(more <= fewer)


def test_eve_snr():
    W = np.array([[1.0], [0.0]])
    assert eve_snr(np.array([2.0, 5.0]), W, 0.5) == pytest.approx(8.0)


def test_secrecy_sweep_schemes(small_config):
    frame = secrecy_sweep(small_config).frame
    assert set(frame["scheme"]) == {"proposed", "zf", "upper_bound"}
    rates = frame.set_index("scheme")["secrecy_rate"]
    assert (frame["status"] == "optimal").all()
    assert rates["upper_bound"] >= rates["proposed"]
    assert secrecy_sweep(small_config).frame.equals(frame)


@pytest.mark.slow
def test_robust_sweep_keeps_the_target(small_config):
    frame = robust_secrecy_sweep(small_config, levels=(0.0, 0.01)).frame
    assert len(frame) == 4
    gamma_db = 10 * math.log10(small_config.gamma)
    robust = frame[(frame["scheme"] == "robust") & (frame["status"] == "optimal")]
    assert not robust.empty
    assert np.all(robust["min_snr_db"] >= gamma_db - 1e-2)


def test_ground_grid_contains_the_bs():
    config = default_config(sweeps={"grid_half_width": 20.0, "grid_step": 4.0})
    xs, ys = ground_grid(config)
    assert xs.size == 11
    assert 300.0 in xs and 400.0 in ys


@pytest.fixture
def hover_config():
    return default_config(
        array={"kind": "planar", "Nx": 4, "Ny": 4, "cube_Nx": 2, "cube_Ny": 4, "Nz": 2, "Kx": 2, "Ky": 2, "Kz": 2, "K": 1},
        sweeps={"grid_half_width": 20.0, "grid_step": 4.0},
    )


def test_radiation_map_peaks_at_the_bs(hover_config):
    array = hover_array(hover_config, "planar")
    assert array.size == 16
    W, report = hover_precoder(array, hover_config)
    assert report.ok
    result = radiation_map(W, array, hover_config)
    frame = result.frame
    at_bs = frame[(frame["x"] == 300.0) & (frame["y"] == 400.0)]["snr_db"].iloc[0]
    assert at_bs == pytest.approx(10 * math.log10(hover_config.gamma), abs=0.5)
    assert frame["snr_db"].max() == pytest.approx(at_bs, abs=0.5)
    assert sidelobe_peak_db(result, hover_config) <= at_bs + 0.5


def test_cube_array_shares_the_planar_footprint(hover_config):
    planar = hover_array(hover_config, "planar")
    cube = hover_array(hover_config, "cube")
    assert cube.size == planar.size == 16
    np.testing.assert_allclose(np.unique(cube.eta), np.unique(planar.eta), atol=1e-12)
    np.testing.assert_allclose(np.unique(cube.eta_y), np.unique(planar.eta_y), atol=1e-12)
    assert np.ptp(uav_positions(cube)[:, 2]) > 0


def test_snr_per_stream_reexport(random_channel):
    H = random_channel(2, 3)
    W = zf_precoder(H, db_to_linear(3.0), 1.0)
    np.testing.assert_allclose(snr_per_stream(H, W, 1.0), db_to_linear(3.0), rtol=1e-9)


def test_cube_sidelobes_stay_below_the_planar_ones():
    config = default_config(sweeps={"grid_half_width": 30.0, "grid_step": 2.0})
    peaks = {}
    for kind in ("planar", "cube"):
        array = hover_array(config, kind)
        assert array.size == 64
        W, report = hover_precoder(array, config)
        assert report.ok, report.message
        peaks[kind] = sidelobe_peak_db(radiation_map(W, array, config), config)
    assert peaks["cube"] <= peaks["planar"]
