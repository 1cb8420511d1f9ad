"""Transmit/receive array coordinates, propagation ranges and the rotation schedule.

The virtual array of UAVs lies in a horizontal plane around its center. BS
coordinates are expressed relative to that center through the range R, the
elevation angle theta and the azimuth varphi.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

ARRAY_KINDS = ("linear", "planar", "cube")
BS_KINDS = ("linear", "planar")


def _frozen(values):
    arr = np.array(values, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


def _check_eta(name, eta):
    if eta.size == 0:
        raise ValueError(f"{name} must not be empty")
    if np.any(np.abs(eta) > 1.0 + 1e-12):
        raise ValueError(f"{name} entries must lie in [-1, 1]")


@dataclass(frozen=True)
class ArrayGeometry:
    """Virtual array formed by the UAVs.

    For the linear kind ``eta`` holds the normalized spacings and ``aperture_L``
    the aperture. Planar and cube kinds use ``eta`` / ``eta_y`` / ``eta_z`` as
    per-axis vectors with apertures ``aperture_L`` (x), ``aperture_Ly`` and
    ``aperture_Lz``.
    """

    eta: np.ndarray
    aperture_L: float
    rotation_phi: float = 0.0
    center: tuple = (0.0, 0.0, 0.0)
    kind: str = "linear"
    eta_y: np.ndarray = field(default_factory=lambda: _frozen([]))
    eta_z: np.ndarray = field(default_factory=lambda: _frozen([]))
    aperture_Ly: float = 0.0
    aperture_Lz: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "eta", _frozen(self.eta))
        object.__setattr__(self, "eta_y", _frozen(self.eta_y))
        object.__setattr__(self, "eta_z", _frozen(self.eta_z))
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        if self.kind not in ARRAY_KINDS:
            raise ValueError(f"unknown array kind {self.kind!r}")
        if self.aperture_L <= 0:
            raise ValueError("aperture_L must be positive")
        _check_eta("eta", self.eta)
        if self.kind in ("planar", "cube"):
            _check_eta("eta_y", self.eta_y)
            if self.aperture_Ly <= 0:
                raise ValueError("aperture_Ly must be positive")
        if self.kind == "cube":
            _check_eta("eta_z", self.eta_z)
            if self.aperture_Lz <= 0:
                raise ValueError("aperture_Lz must be positive")

    @property
    def size(self):
        """Number of UAVs N."""
        n = self.eta.size
        if self.kind in ("planar", "cube"):
            n *= self.eta_y.size
        if self.kind == "cube":
            n *= self.eta_z.size
        return n


@dataclass(frozen=True)
class BsGeometry:
    """Receive array at the BS, placed at range R / elevation theta / azimuth varphi.

    ``u`` optionally overrides the normalized receive positions of the linear
    kind; by default they are the ULA grid (2m-1-M)/M.
    """

    M: int
    spacing_d: float
    range_R: float
    elevation_theta: float = 0.0
    azimuth_varphi: float = 0.0
    kind: str = "linear"
    Mx: int = 0
    My: int = 0
    dx: float = 0.0
    dy: float = 0.0
    u: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in BS_KINDS:
            raise ValueError(f"unknown BS kind {self.kind!r}")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.spacing_d <= 0:
            raise ValueError("spacing_d must be positive")
        if self.range_R <= 0:
            raise ValueError("range_R must be positive")
        if self.kind == "planar" and self.Mx * self.My != self.M:
            raise ValueError("planar BS requires M = Mx * My")
        if self.u is not None:
            u = _frozen(self.u)
            if u.size != self.M:
                raise ValueError("u must have M entries")
            object.__setattr__(self, "u", u)

    @property
    def normalized_positions(self):
        """Receive positions normalized so that x = u * M * d / 2 (linear kind)."""
        if self.u is not None:
            return self.u
        m = np.arange(1, self.M + 1)
        return (2 * m - 1 - self.M) / self.M


def ula_grid(M):
    """Normalized ULA receive positions (2m-1-M)/M, m = 1..M."""
    m = np.arange(1, M + 1)
    return (2 * m - 1 - M) / M


def uav_positions(array: ArrayGeometry):
    """Coordinates of the transmit UAVs.

    Returns:
        (N, 3) array. Planar and cube kinds are ordered with the x index outermost
        and the z index innermost.
    """
    phi = array.rotation_phi
    cos_phi, sin_phi = math.cos(phi), math.sin(phi)
    if array.kind == "linear":
        half = array.aperture_L * array.eta / 2.0
        points = np.column_stack([half * cos_phi, half * sin_phi, np.zeros_like(half)])
    else:
        eta_z = array.eta_z if array.kind == "cube" else np.zeros(1)
        ex, ey, ez = np.meshgrid(array.eta, array.eta_y, eta_z, indexing="ij")
        ax = array.aperture_L * ex.ravel() / 2.0
        ay = array.aperture_Ly * ey.ravel() / 2.0
        az = array.aperture_Lz * ez.ravel() / 2.0 if array.kind == "cube" else np.zeros(ax.size)
        points = np.column_stack([
            ax * cos_phi - ay * sin_phi,
            ax * sin_phi + ay * cos_phi,
            az,
        ])
    return points + np.asarray(array.center)


def bs_center(bs: BsGeometry):
    """Array-center-relative coordinates of the BS array centroid."""
    st = math.sin(bs.elevation_theta)
    return np.array([
        bs.range_R * st * math.cos(bs.azimuth_varphi),
        bs.range_R * st * math.sin(bs.azimuth_varphi),
        bs.range_R * math.cos(bs.elevation_theta),
    ])


def bs_positions(bs: BsGeometry, origin=(0.0, 0.0, 0.0)):
    """Coordinates of the BS antennas relative to the transmit array center.

    Returns:
        (M, 3) array; the planar kind is ordered with the x index outermost.
    """
    base = bs_center(bs) + np.asarray(origin, dtype=float)
    if bs.kind == "linear":
        offsets = np.zeros((bs.M, 3))
        offsets[:, 0] = bs.normalized_positions * bs.M * bs.spacing_d / 2.0
    else:
        mx = np.arange(1, bs.Mx + 1)
        my = np.arange(1, bs.My + 1)
        gx, gy = np.meshgrid((2 * mx - 1 - bs.Mx) * bs.dx / 2.0, (2 * my - 1 - bs.My) * bs.dy / 2.0,
                             indexing="ij")
        offsets = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(bs.M)])
    return base + offsets


def propagation_range(p_tx, p_rx, mode="exact", array=None, bs=None, index=None):
    """Wave propagation range between a transmit UAV and a receive antenna.

    Args:
        p_tx, p_rx: 3-D points (meters); used by the exact mode.
        mode: "exact" (Euclidean distance) or "approx" (second-order expansion).
        array, bs, index: geometry and (m, n) indices, required by "approx".

    Returns:
        Range in meters.
    """
    if mode == "exact":
        return float(np.linalg.norm(np.asarray(p_rx, dtype=float) - np.asarray(p_tx, dtype=float)))
    if mode == "approx":
        if array is None or bs is None or index is None:
            raise ValueError("approx mode needs array, bs and index=(m, n)")
        m, n = index
        return float(range_matrix(array, bs, "approx")[m, n])
    raise ValueError(f"unknown range mode {mode!r}")


def range_matrix(array: ArrayGeometry, bs: BsGeometry, mode="exact"):
    """All M x N propagation ranges tau[m, n].

    The exact mode uses Euclidean distances of the array-centered coordinates.
    The approx mode is the seven-term far-field expansion (linear kinds only):

        R + a^2 d^2/(8R) + a d sin(theta)cos(varphi)/2 - a d L eta cos(phi)/(4R)
          - L eta sin(theta)cos(varphi)cos(phi)/2 - L eta sin(theta)sin(varphi)sin(phi)/2
          + (L eta)^2/(8R)

    with a d the receive offset u_m * M * d.
    """
    if mode == "exact":
        tx = uav_positions(array) - np.asarray(array.center)
        rx = bs_positions(bs)
        return np.linalg.norm(rx[:, None, :] - tx[None, :, :], axis=2)
    if mode != "approx":
        raise ValueError(f"unknown range mode {mode!r}")
    if array.kind != "linear" or bs.kind != "linear":
        raise ValueError("approx ranges are defined for linear arrays only")

    R = bs.range_R
    ad = (bs.normalized_positions * bs.M * bs.spacing_d)[:, None]
    Leta = (array.aperture_L * array.eta)[None, :]
    st = math.sin(bs.elevation_theta)
    cv, sv = math.cos(bs.azimuth_varphi), math.sin(bs.azimuth_varphi)
    cp, sp = math.cos(array.rotation_phi), math.sin(array.rotation_phi)
    return (
        R
        + ad**2 / (8 * R)
        + ad * st * cv / 2
        - ad * Leta * cp / (4 * R)
        - Leta * st * cv * cp / 2
        - Leta * st * sv * sp / 2
        + Leta**2 / (8 * R)
    )


def bs_geometry_from_positions(center_xy, altitude, bs_xy, config, u=None):
    """BS geometry seen from an array center flying at constant altitude.

    Args:
        center_xy: 2-D array-center position (meters).
        altitude: UAV altitude above the (ground-level) BS.
        bs_xy: 2-D BS ground position.
        config: ScenarioConfig supplying the BS layout.
        u: Optional normalized receive positions (Fekete receiver).

    Returns:
        BsGeometry with range, elevation and azimuth toward the BS.
    """
    dx = bs_xy[0] - center_xy[0]
    dy = bs_xy[1] - center_xy[1]
    dz = -altitude
    R = math.sqrt(dx * dx + dy * dy + dz * dz)
    theta = math.acos(dz / R)
    varphi = math.atan2(dy, dx)
    return BsGeometry(
        M=config.n_bs,
        spacing_d=config.spacing_d,
        range_R=R,
        elevation_theta=theta,
        azimuth_varphi=varphi,
        kind=config.bs_kind,
        Mx=config.Mx,
        My=config.My,
        dx=config.dx,
        dy=config.dy,
        u=u,
    )


def sample_rotation_offset(config, rng):
    """Draw a rotation offset uniformly from the configured interval.

    A degenerate interval [a, a] always returns a.
    """
    low, high = config.rotation_interval
    if low == high:
        return float(low)
    return float(rng.uniform(low, high))


@dataclass(frozen=True)
class SlotPhase:
    """Role of one time slot in the two-phase schedule."""

    slot: int
    transmit: bool
    phi: float


def slot_schedule(config, rng=None):
    """Per-slot transmit flag and rotation offset for slots 1..I.

    With ``rotation.period_Lambda`` unset every slot transmits with the fixed
    ``array.rotation_phi``. Otherwise each period starts with a repositioning
    phase of length iota * Lambda (no data) and a fresh offset is drawn per
    period.
    """
    if config.rotation_period is None:
        return [SlotPhase(i, True, config.rotation_phi) for i in range(1, config.I + 1)]

    rng = rng if rng is not None else config.rng(offset=1)
    period = config.rotation_period
    hover = config.rotation_fraction * period
    offsets = {}
    schedule = []
    for i in range(1, config.I + 1):
        t_mid = (i - 0.5) * config.delta
        k = int(t_mid // period)
        if k not in offsets:
            offsets[k] = sample_rotation_offset(config, rng)
        transmit = (t_mid - k * period) >= hover
        schedule.append(SlotPhase(i, transmit, offsets[k]))
    logger.info(
        "Slot schedule: %d of %d slots transmit, %d rotation period(s)",
        sum(s.transmit for s in schedule), config.I, len(offsets),
    )
    return schedule


def array_from_config(config, eta, center=(0.0, 0.0, 0.0), phi=None, eta_y=None, eta_z=None):
    """ArrayGeometry for the configured array kind and apertures."""
    return ArrayGeometry(
        eta=eta,
        aperture_L=config.Lx if config.array_kind != "linear" else config.L,
        rotation_phi=config.rotation_phi if phi is None else phi,
        center=center,
        kind=config.array_kind,
        eta_y=[] if eta_y is None else eta_y,
        eta_z=[] if eta_z is None else eta_z,
        aperture_Ly=config.Ly if config.array_kind != "linear" else 0.0,
        aperture_Lz=config.Lz if config.array_kind == "cube" else 0.0,
    )
