"""Scenario configuration: TOML scenario files, overrides and environment settings.

Scenario files are TOML with nested sections (``[qos]``, ``[trajectory]`` ...).
dB-valued keys are converted to linear units here and nowhere else; everything
past this module works in linear SI units.
"""

import copy
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid scenario configuration, tagged with the offending dotted key path."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
        self.message = message


def get_setting(*names: str, default: str = "") -> str:
    """Read the first configured value from environment variables.

    Multiple names support aliases such as UAVARRAY_OUTPUT_DIR and OUTPUT_DIR.
    """
    for name in names:
        value = os.environ.get(name, "")
        if value:
            return str(value)
    return default


def db_to_linear(value_db):
    """Convert a dB ratio to a linear ratio."""
    return 10.0 ** (float(value_db) / 10.0)


def dbm_to_watts(value_dbm):
    """Convert a dBm power to watts."""
    return 10.0 ** ((float(value_dbm) - 30.0) / 10.0)


def _point(value):
    return tuple(float(v) for v in value)


def _float_list(value):
    return tuple(float(v) for v in value)


def _int_list(value):
    return tuple(int(v) for v in value)


def _strict_bool(value):
    if not isinstance(value, bool):
        raise TypeError(f"expected true or false, got {type(value).__name__}")
    return value


def _optional_float(value):
    return None if value is None else float(value)


@dataclass(frozen=True)
class NoFlyZone:
    """Cylindrical no-fly zone projected on the flight plane."""

    center: tuple
    radius: float


# section -> key -> (ScenarioConfig field, converter, default in file units)
SCHEMA = {
    "channel": {
        "f_c": ("f_c", float, 1e9),
        "c": ("c", float, 3e8),
    },
    "array": {
        "kind": ("array_kind", str, "linear"),
        "N": ("N", int, 8),
        "K": ("K", int, 2),
        "L": ("L", float, 10.0),
        "rotation_phi": ("rotation_phi", float, 0.0),
        "Nx": ("Nx", int, 8),
        "Ny": ("Ny", int, 8),
        "cube_Nx": ("cube_Nx", int, 4),
        "cube_Ny": ("cube_Ny", int, 4),
        "Nz": ("Nz", int, 4),
        "Kx": ("Kx", int, 4),
        "Ky": ("Ky", int, 4),
        "Kz": ("Kz", int, 4),
        "Lx": ("Lx", float, 10.0),
        "Ly": ("Ly", float, 10.0),
        "Lz": ("Lz", float, 10.0),
        "fekete_tol": ("fekete_tol", float, 1e-12),
    },
    "bs": {
        "kind": ("bs_kind", str, "linear"),
        "M": ("M", int, 8),
        "spacing_d": ("spacing_d", _optional_float, None),
        "position": ("bs_position", _point, (300.0, 400.0)),
        "fekete_receiver": ("fekete_receiver", _strict_bool, False),
        "combiner": ("combiner", str, "eigen"),
        "Mx": ("Mx", int, 4),
        "My": ("My", int, 2),
        "dx": ("dx", _optional_float, None),
        "dy": ("dy", _optional_float, None),
    },
    "qos": {
        "gamma_db": ("gamma", db_to_linear, 14.0),
        "sigma2_dbm": ("sigma2", dbm_to_watts, -110.0),
    },
    "security": {
        "xi_db": ("xi", db_to_linear, 0.0),
        "kappa": ("kappa", float, 0.99),
        "Q": ("Q", int, 3),
        "sigmaE2_dbm": ("sigmaE2", dbm_to_watts, 20.0),
        "uncertainty_level": ("uncertainty_level", float, 0.0),
    },
    "trajectory": {
        "P_max_dbm": ("P_max", dbm_to_watts, 10.0),
        "V_max": ("V_max", float, 10.0),
        "T": ("T", float, 90.0),
        "I": ("I", int, 45),
        "d_I": ("d_I", _point, (0.0, 0.0)),
        "d_F": ("d_F", _point, (500.0, 0.0)),
        "altitude": ("altitude", float, 100.0),
        "epsilon_out": ("epsilon_out", float, 1e-3),
        "max_outer": ("max_outer", int, 50),
        "inner_tol": ("inner_tol", float, 1e-8),
    },
    "rotation": {
        "period_Lambda": ("rotation_period", _optional_float, None),
        "fraction_iota": ("rotation_fraction", _optional_float, None),
        "interval": ("rotation_interval", _point, (0.0, 2.0 * math.pi)),
    },
    "experiment": {
        "rng_seed": ("rng_seed", int, 2024),
        "secrecy_samples": ("secrecy_samples", int, 100),
        "validation_samples": ("validation_samples", int, 100_000),
        "range_R": ("range_R", float, 300.0),
    },
    "sweeps": {
        "gammas_db": ("sweep_gammas_db", _float_list, (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)),
        "phis": ("sweep_phis", _float_list, (0.0, math.pi / 6, math.pi / 3)),
        "N_values": ("sweep_N", _int_list, (4, 6, 8)),
        "K_values": ("sweep_K", _int_list, (1, 2)),
        "uncertainty_levels": ("sweep_uncertainty", _float_list, (0.0, 0.01, 0.02, 0.05)),
        "grid_half_width": ("grid_half_width", float, 60.0),
        "grid_step": ("grid_step", float, 2.0),
    },
}

ZONE_KEYS = {"center", "radius"}


@dataclass(frozen=True)
class ScenarioConfig:
    """All physical constants, thresholds and experiment settings (linear SI units)."""

    f_c: float
    c: float
    array_kind: str
    N: int
    K: int
    L: float
    rotation_phi: float
    Nx: int
    Ny: int
    cube_Nx: int
    cube_Ny: int
    Nz: int
    Kx: int
    Ky: int
    Kz: int
    Lx: float
    Ly: float
    Lz: float
    fekete_tol: float
    bs_kind: str
    M: int
    spacing_d: float
    bs_position: tuple
    fekete_receiver: bool
    combiner: str
    Mx: int
    My: int
    dx: float
    dy: float
    gamma: float
    sigma2: float
    xi: float
    kappa: float
    Q: int
    sigmaE2: float
    uncertainty_level: float
    P_max: float
    V_max: float
    T: float
    I: int
    d_I: tuple
    d_F: tuple
    altitude: float
    epsilon_out: float
    max_outer: int
    inner_tol: float
    rotation_period: float | None
    rotation_fraction: float | None
    rotation_interval: tuple
    rng_seed: int
    secrecy_samples: int
    validation_samples: int
    range_R: float
    sweep_gammas_db: tuple
    sweep_phis: tuple
    sweep_N: tuple
    sweep_K: tuple
    sweep_uncertainty: tuple
    grid_half_width: float
    grid_step: float
    no_fly_zones: tuple = ()
    raw: Mapping[str, Any] = field(default_factory=dict, compare=False, repr=False)

    @property
    def delta(self):
        """Slot duration T/I in seconds."""
        return self.T / self.I

    @property
    def step_limit(self):
        """Maximum center displacement per slot (meters)."""
        return self.delta * self.V_max

    @property
    def n_uav(self):
        """Number of UAVs for the configured array kind."""
        if self.array_kind == "planar":
            return self.Nx * self.Ny
        if self.array_kind == "cube":
            return self.cube_Nx * self.cube_Ny * self.Nz
        return self.N

    @property
    def n_bs(self):
        """Number of BS antennas for the configured BS kind."""
        return self.Mx * self.My if self.bs_kind == "planar" else self.M

    @property
    def wavelength(self):
        return self.c / self.f_c

    def rng(self, offset=0):
        """Fresh generator seeded from rng_seed (plus an optional stream offset)."""
        return np.random.default_rng([self.rng_seed, offset])


def parse_override(text):
    """Parse a ``section.key=value`` override into (path, value).

    Values are read as TOML literals so numbers, booleans and arrays keep their
    types; anything else is taken as a plain string.
    """
    if "=" not in text:
        raise ConfigError(text, "override must look like section.key=value")
    path, raw_value = text.split("=", 1)
    path = path.strip()
    raw_value = raw_value.strip()
    try:
        value = tomllib.loads(f"v = {raw_value}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw_value
    return path, value


def apply_overrides(raw, overrides):
    """Return a deep copy of ``raw`` with dotted-path overrides applied."""
    merged = copy.deepcopy(dict(raw))
    for text in overrides or ():
        path, value = parse_override(text)
        parts = path.split(".")
        if len(parts) == 1:
            merged[parts[0]] = value
        elif len(parts) == 2:
            section = merged.setdefault(parts[0], {})
            if not isinstance(section, dict):
                raise ConfigError(path, "not a section")
            section[parts[1]] = value
        else:
            raise ConfigError(path, "override paths have at most two parts")
    return merged


def build_config(raw):
    """Build and validate a ScenarioConfig from a raw (already parsed) mapping.

    Raises:
        ConfigError: unknown keys or invariant violations, with the key path.
    """
    raw = dict(raw)
    values = {}
    for section, keys in SCHEMA.items():
        given = raw.get(section, {})
        if not isinstance(given, Mapping):
            raise ConfigError(section, "expected a section (table)")
        for key in given:
            if key not in keys:
                raise ConfigError(f"{section}.{key}", "unknown key")
        for key, (name, convert, default) in keys.items():
            value = given.get(key, default)
            try:
                values[name] = convert(value)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"{section}.{key}", f"cannot convert {value!r}: {e}") from e

    for section in raw:
        if section not in SCHEMA and section != "no_fly_zones":
            raise ConfigError(section, "unknown section")

    zones = []
    for i, zone in enumerate(raw.get("no_fly_zones", [])):
        for key in zone:
            if key not in ZONE_KEYS:
                raise ConfigError(f"no_fly_zones[{i}].{key}", "unknown key")
        try:
            zones.append(NoFlyZone(center=_point(zone["center"]), radius=float(zone["radius"])))
        except KeyError as e:
            raise ConfigError(f"no_fly_zones[{i}].{e.args[0]}", "missing key") from e

    half_wavelength = values["c"] / (2.0 * values["f_c"])
    for name in ("spacing_d", "dx", "dy"):
        if values[name] is None:
            values[name] = half_wavelength

    config = ScenarioConfig(**values, no_fly_zones=tuple(zones), raw=raw)
    _validate(config)
    return config


def _validate(cfg):
    """Check the type invariants; raise ConfigError naming the key path."""
    checks = [
        ("channel.f_c", cfg.f_c > 0, "must be positive"),
        ("channel.c", cfg.c > 0, "must be positive"),
        ("array.kind", cfg.array_kind in ("linear", "planar", "cube"), "must be linear, planar or cube"),
        ("array.N", cfg.N >= 1, "must be >= 1"),
        ("array.K", 1 <= cfg.K <= min(cfg.n_uav, cfg.n_bs), "must satisfy 1 <= K <= min(N, M)"),
        ("array.L", cfg.L > 0, "must be positive"),
        ("bs.kind", cfg.bs_kind in ("linear", "planar"), "must be linear or planar"),
        ("bs.M", cfg.M >= 1, "must be >= 1"),
        ("bs.spacing_d", cfg.spacing_d > 0, "must be positive"),
        ("bs.combiner", cfg.combiner in ("eigen", "antenna"), "must be eigen or antenna"),
        ("qos.sigma2_dbm", cfg.sigma2 > 0, "must give a positive power"),
        ("security.xi_db", cfg.xi > 0, "must give a positive ratio"),
        ("security.kappa", 0.0 < cfg.kappa < 1.0, "must lie in (0, 1)"),
        ("security.Q", cfg.Q >= 0, "must be >= 0"),
        ("security.uncertainty_level", cfg.uncertainty_level >= 0, "must be >= 0"),
        ("trajectory.P_max_dbm", cfg.P_max >= 0, "must give a non-negative power"),
        ("trajectory.V_max", cfg.V_max > 0, "must be positive"),
        ("trajectory.T", cfg.T > 0, "must be positive"),
        ("trajectory.I", cfg.I >= 1, "must be >= 1"),
        ("trajectory.altitude", cfg.altitude > 0, "must be positive"),
        ("trajectory.epsilon_out", cfg.epsilon_out > 0, "must be positive"),
        ("trajectory.max_outer", cfg.max_outer >= 1, "must be >= 1"),
        ("rotation.interval", cfg.rotation_interval[0] <= cfg.rotation_interval[1],
         "lower bound must not exceed upper bound"),
        ("experiment.range_R", cfg.range_R > 0, "must be positive"),
    ]
    if cfg.rotation_period is not None:
        checks.append(("rotation.period_Lambda", cfg.rotation_period > 0, "must be positive"))
        checks.append((
            "rotation.fraction_iota",
            cfg.rotation_fraction is not None and 0.0 < cfg.rotation_fraction < 1.0,
            "must lie in (0, 1) when period_Lambda is set",
        ))
    for i, zone in enumerate(cfg.no_fly_zones):
        checks.append((f"no_fly_zones[{i}].radius", zone.radius > 0, "must be positive"))
        for label, point in (("d_I", cfg.d_I), ("d_F", cfg.d_F)):
            clear = math.dist(point, zone.center) >= zone.radius
            checks.append((f"trajectory.{label}", clear, f"lies inside no_fly_zones[{i}]"))

    for key, ok, message in checks:
        if not ok:
            raise ConfigError(key, message)


def read_config_file(path):
    """Parse a TOML scenario file into a raw mapping.

    Raises:
        ConfigError: unreadable or malformed file.
    """
    path = Path(path)
    try:
        with path.open("rb") as f:
            return tomllib.load(f)
    except FileNotFoundError as e:
        raise ConfigError(str(path), "config file not found") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(str(path), f"parse error: {e}") from e


def load_config(path, overrides=(), seed=None):
    """Load, override and validate a scenario file.

    Args:
        path: TOML scenario file.
        overrides: Iterable of ``section.key=value`` strings, applied last.
        seed: Optional rng seed override (wins over file and overrides).

    Returns:
        ScenarioConfig with dB keys already converted to linear / watts.
    """
    raw = read_config_file(path)
    raw = apply_overrides(raw, overrides)
    if seed is not None:
        raw.setdefault("experiment", {})["rng_seed"] = int(seed)
    config = build_config(raw)
    logger.info("Loaded scenario %s (%d override(s), seed %d)", path, len(overrides or ()), config.rng_seed)
    return config


def default_config(**sections):
    """Build a config from schema defaults plus optional raw sections (tests, sweeps)."""
    return build_config(sections)


def config_snapshot(config):
    """Render the effective raw configuration back to TOML text."""
    return tomli_w.dumps(_plain(config.raw))


def _plain(value):
    if isinstance(value, Mapping):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value
