import math

import pytest

from uavarray.config import (
    ConfigError,
    apply_overrides,
    build_config,
    config_snapshot,
    db_to_linear,
    dbm_to_watts,
    default_config,
    get_setting,
    load_config,
    parse_override,
)

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

SCENARIO = """
[array]
N = 6
K = 2

[qos]
gamma_db = 14.0
sigma2_dbm = -110.0

[trajectory]
d_I = [0.0, 0.0]
d_F = [500.0, 0.0]

[[no_fly_zones]]
center = [315.0, 375.0]
radius = 60.0
"""


def test_db_conversions():
    assert dbm_to_watts(-110.0) == pytest.approx(1e-14, rel=1e-12)
    assert db_to_linear(14.0) == pytest.approx(25.118864315, rel=1e-9)
    assert dbm_to_watts(30.0) == pytest.approx(1.0)


def test_defaults_are_linear_si():
    config = default_config()
    assert config.sigma2 == pytest.approx(1e-14, rel=1e-12)
    assert config.gamma == pytest.approx(10**1.4)
    assert config.P_max == pytest.approx(0.01)
    assert config.spacing_d == pytest.approx(0.15)
    assert config.delta == pytest.approx(2.0)
    assert config.step_limit == pytest.approx(20.0)
    assert config.wavelength == pytest.approx(0.3)


def test_load_config_reads_file_and_seed(tmp_path):
    path = tmp_path / "scenario.toml"
    path.write_text(SCENARIO, encoding="utf-8")
    config = load_config(path, overrides=["array.K=3"], seed=7)
    assert config.N == 6
    assert config.K == 3
    assert config.rng_seed == 7
    assert config.no_fly_zones[0].center == (315.0, 375.0)
    assert config.no_fly_zones[0].radius == 60.0


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError) as excinfo:
        default_config(qos={"bogus": 1})
    assert excinfo.value.key == "qos.bogus"


def test_unknown_section_is_rejected():
    with pytest.raises(ConfigError) as excinfo:
        build_config({"antennas": {"M": 4}})
    assert excinfo.value.key == "antennas"


@pytest.mark.parametrize(
    "sections, key",
    [
        ({"array": {"K": 9}}, "array.K"),
        ({"security": {"kappa": 1.0}}, "security.kappa"),
        ({"trajectory": {"V_max": 0.0}}, "trajectory.V_max"),
        ({"no_fly_zones": [{"center": [0.0, 0.0], "radius": 10.0}]}, "trajectory.d_I"),
        ({"rotation": {"period_Lambda": 10.0}}, "rotation.fraction_iota"),
    ],
)
def test_invariant_violations_name_the_key(sections, key):
    with pytest.raises(ConfigError) as excinfo:
        build_config(sections)
    assert excinfo.value.key == key


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


def test_parse_override_keeps_types():
    assert parse_override("array.N=6") == ("array.N", 6)
    assert parse_override("bs.position=[1.0, 2.0]") == ("bs.position", [1.0, 2.0])
    assert parse_override("bs.combiner=antenna") == ("bs.combiner", "antenna")
    with pytest.raises(ConfigError):
        parse_override("array.N")


def test_apply_overrides_does_not_mutate():
    raw = {"array": {"N": 4}}
    merged = apply_overrides(raw, ["array.N=6", "qos.gamma_db=10"])
    assert raw == {"array": {"N": 4}}
    assert merged == {"array": {"N": 6}, "qos": {"gamma_db": 10}}


def test_snapshot_reproduces_config(tmp_path):
    path = tmp_path / "scenario.toml"
    path.write_text(SCENARIO, encoding="utf-8")
    config = load_config(path, overrides=["trajectory.I=30"], seed=11)
    rebuilt = build_config(tomllib.loads(config_snapshot(config)))
    assert rebuilt == config


def test_rng_is_reproducible():
    config = default_config()
    assert config.rng(3).uniform() == config.rng(3).uniform()
    assert config.rng(3).uniform() != config.rng(4).uniform()


def test_get_setting_reads_aliases(monkeypatch):
    monkeypatch.delenv("UAVARRAY_OUTPUT_DIR", raising=False)
    monkeypatch.setenv("OUTPUT_DIR", "/tmp/out")
    assert get_setting("UAVARRAY_OUTPUT_DIR", "OUTPUT_DIR") == "/tmp/out"
    assert get_setting("UAVARRAY_UNSET_NAME", default="x") == "x"


def test_n_uav_follows_array_kind():
    config = default_config(array={"kind": "cube", "cube_Nx": 2, "cube_Ny": 3, "Nz": 2, "K": 2})
    assert config.n_uav == 12
    assert default_config(array={"kind": "planar", "K": 2}).n_uav == default_config(array={"kind": "cube", "K": 2}).n_uav == 64
    assert math.isclose(config.Lz, 10.0)


@pytest.mark.parametrize("value", ['"false"', "0", '"no"'])
def test_boolean_keys_reject_non_booleans(value):
    raw = apply_overrides({}, [f"bs.fekete_receiver={value}"])
    with pytest.raises(ConfigError) as excinfo:
        build_config(raw)
    assert excinfo.value.key == "bs.fekete_receiver"
    assert build_config(apply_overrides({}, ["bs.fekete_receiver=false"])).fekete_receiver is False
