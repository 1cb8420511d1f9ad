"""LoS MIMO channel between the UAV virtual array and the BS, plus Eve channels."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from uavarray.geometry import range_matrix

logger = logging.getLogger(__name__)

FAR_FIELD_RATIO = 10.0


def path_attenuation(distance, config):
    """Free-space amplitude attenuation rho(R) = c / (4 pi f_c R)."""
    return config.c / (4.0 * math.pi * config.f_c * np.asarray(distance, dtype=float))


def wavenumber(config):
    return 2.0 * math.pi * config.f_c / config.c


@dataclass(frozen=True)
class ChannelMatrix:
    """Complex M x N LoS channel with common attenuation ``rho``."""

    entries: np.ndarray
    rho: float
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def shape(self):
        return self.entries.shape


def _aperture(array):
    return max(array.aperture_L, array.aperture_Ly, array.aperture_Lz)


def exact_channel(array, bs, config, range_mode="exact"):
    """Build the LoS channel h[m, n] = rho(R) * exp(-j 2 pi f_c tau[m, n] / c).

    The carrier time is fixed to zero. A range below ten apertures only logs a
    warning since the equal-attenuation model still evaluates.
    """
    if bs.range_R < FAR_FIELD_RATIO * _aperture(array):
        logger.warning(
            "Far-field assumption weak: R=%.3g m < %g x aperture %.3g m",
            bs.range_R, FAR_FIELD_RATIO, _aperture(array),
        )
    tau = range_matrix(array, bs, range_mode)
    rho = float(path_attenuation(bs.range_R, config))
    entries = rho * np.exp(-1j * wavenumber(config) * tau)
    entries.setflags(write=False)
    return ChannelMatrix(
        entries=entries,
        rho=rho,
        meta={"range_mode": range_mode, "range_R": bs.range_R, "kind": array.kind},
    )


@dataclass(frozen=True)
class AsymptoticFactorization:
    """H = common_phase * rho * diag(G_B) @ H_tilde @ diag(G_U)."""

    G_B: np.ndarray
    G_U: np.ndarray
    H_tilde: np.ndarray
    nu: float
    rho: float = 1.0
    common_phase: complex = 1.0 + 0.0j

    def reconstruct(self, with_common_phase=True):
        """Recombine the factors into an M x N channel."""
        H = self.rho * (self.G_B[:, None] * self.H_tilde * self.G_U[None, :])
        return self.common_phase * H if with_common_phase else H


def coupling_nu(array, bs, config):
    """nu = (pi f_c / c) * d M L / (2 R)."""
    return math.pi * config.f_c / config.c * bs.spacing_d * bs.M * array.aperture_L / (2.0 * bs.range_R)


def asymptotic_factorization(array, bs, config):
    """Split the approx-range channel into unit-modulus diagonal factors and H_tilde.

    H_tilde[m, n] = exp(j nu u_m eta_n cos(phi)) where u_m are the normalized
    receive positions ((2m-1-M)/M for a ULA).
    """
    if array.kind != "linear" or bs.kind != "linear":
        raise ValueError("asymptotic factorization needs linear transmit and receive arrays")

    k = wavenumber(config)
    R = bs.range_R
    u = bs.normalized_positions
    ad = u * bs.M * bs.spacing_d
    Leta = array.aperture_L * array.eta
    st = math.sin(bs.elevation_theta)
    cv, sv = math.cos(bs.azimuth_varphi), math.sin(bs.azimuth_varphi)
    cp, sp = math.cos(array.rotation_phi), math.sin(array.rotation_phi)

    nu = coupling_nu(array, bs, config)
    G_B = np.exp(-1j * k * (ad**2 / (8 * R) + ad * st * cv / 2))
    G_U = np.exp(1j * k * (Leta * st * (cv * cp + sv * sp) / 2 - Leta**2 / (8 * R)))
    H_tilde = np.exp(1j * nu * np.outer(u, array.eta) * cp)
    return AsymptoticFactorization(
        G_B=G_B,
        G_U=G_U,
        H_tilde=H_tilde,
        nu=nu,
        rho=float(path_attenuation(R, config)),
        common_phase=complex(np.exp(-1j * k * R)),
    )


@dataclass(frozen=True)
class VandermondeTruncation:
    """Order-P Taylor expansion H_tilde ~ V_B @ diag(A_diag) @ V_U.T."""

    V_B: np.ndarray
    V_U: np.ndarray
    A_diag: np.ndarray
    order_P: int

    def approximation(self):
        return (self.V_B * self.A_diag[None, :]) @ self.V_U.T

    def error_bound(self, nu):
        """Entrywise Taylor remainder bound nu^P / P! * e^nu."""
        return nu**self.order_P / math.factorial(self.order_P) * math.exp(nu)


def vandermonde_truncation(array, bs, config, order_P=None):
    """Truncated Vandermonde decomposition of H_tilde.

    Args:
        order_P: Number of Taylor terms; defaults to max(M, K) + 8.
    """
    if order_P is None:
        order_P = max(bs.M, config.K) + 8
    if order_P < 1:
        raise ValueError("order_P must be >= 1")
    if array.kind != "linear" or bs.kind != "linear":
        raise ValueError("Vandermonde truncation needs linear arrays")

    nu = coupling_nu(array, bs, config)
    p = np.arange(order_P)
    V_B = np.vander(bs.normalized_positions, order_P, increasing=True)
    V_U = np.vander(array.eta, order_P, increasing=True)
    factorials = np.array([math.factorial(int(i)) for i in p], dtype=float)
    A_diag = (1j * nu * math.cos(array.rotation_phi)) ** p / factorials
    return VandermondeTruncation(V_B=V_B, V_U=V_U, A_diag=A_diag, order_P=int(order_P))


def eve_channel_sample(N, sigmaE2, rng, count=None):
    """Draw Rayleigh Eve channels with unit-variance CN(0, 1) entries.

    ``sigmaE2`` is the Eve noise power; it does not scale the channel.

    Returns:
        Complex N-vector, or a (count, N) array when ``count`` is given.
    """
    shape = (N,) if count is None else (count, N)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def served_streams(H, K, combiner="eigen"):
    """Reduce an M x N channel to the K x N stream rows seen by the precoder.

    ``eigen`` applies the top-K left singular vectors as receive combiner (noise
    stays white); ``antenna`` keeps the first K antenna rows. Row k times the
    precoder column w_i is the amplitude stream k receives from stream i.
    """
    entries = H.entries if isinstance(H, ChannelMatrix) else np.asarray(H)
    M, N = entries.shape
    if not 1 <= K <= min(M, N):
        raise ValueError(f"K={K} must satisfy 1 <= K <= min(M, N)={min(M, N)}")
    if combiner == "antenna":
        return entries[:K].copy()
    if combiner == "eigen":
        U, _, _ = np.linalg.svd(entries)
        return U[:, :K].conj().T @ entries
    raise ValueError(f"unknown combiner {combiner!r}")
