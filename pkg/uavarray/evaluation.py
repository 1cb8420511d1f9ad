"""Experiment metrics and sweeps: SNR, secrecy rate, capacity, power and the ground radiation map."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from uavarray.channel import asymptotic_factorization, eve_channel_sample, exact_channel, path_attenuation, served_streams, wavenumber
from uavarray.config import config_snapshot, db_to_linear
from uavarray.geometry import ArrayGeometry, BsGeometry, uav_positions
from uavarray.optimizer import (
    PrecodingMatrix,
    SlotProblem,
    snr_per_stream,
    solve_precoding_slot,
    solve_robust_precoding_slot,
    zf_precoder,
)
from uavarray.security import ChanceConstraintParams, UncertaintyModel, eve_leakage, spectral_cap
from uavarray.topology import capacity, fekete_topology, tensor_fekete, true_eigenvalues, ula_topology
from uavarray.trajectory import receive_positions

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentResult",
    "capacity_sweep",
    "eve_snr",
    "power_sweep",
    "radiation_map",
    "robust_secrecy_sweep",
    "secrecy_rate_mc",
    "secrecy_rate_samples",
    "secrecy_sweep",
    "snr_per_stream",
]

MIN_SECRECY_SAMPLES = 100


@dataclass(frozen=True)
class ExperimentResult:
    """One experiment table plus the provenance needed to re-run it."""

    sweep_variables: tuple
    metric: str
    frame: pd.DataFrame
    replications: int
    rng_seed: int
    config_snapshot: str = field(default="", repr=False)

    def __post_init__(self):
        missing = [c for c in (*self.sweep_variables, self.metric) if c not in self.frame.columns]
        if missing:
            raise ValueError(f"result frame lacks columns {missing}")


def _result(config, sweep_variables, metric, rows, replications=1):
    return ExperimentResult(
        sweep_variables=tuple(sweep_variables),
        metric=metric,
        frame=pd.DataFrame(rows),
        replications=replications,
        rng_seed=config.rng_seed,
        config_snapshot=config_snapshot(config),
    )


def eve_snr(h_E, W, sigmaE2):
    """Aggregate Eve SNR sum_k |h_E^H w_k|^2 / sigmaE2."""
    W = W.W if isinstance(W, PrecodingMatrix) else np.asarray(W)
    return float(eve_leakage(h_E, W)) / sigmaE2


def secrecy_rate_samples(H, W, config, samples, seed, Q=None):
    """Per-trial secrecy rate [C_B - log2(1 + max_q SNR_E,q)]^+.

    Eve q always draws from the substream SeedSequence(seed, spawn_key=(q,)),
    so runs with different Q share their first Eves.
    """
    if samples < MIN_SECRECY_SAMPLES:
        raise ValueError(f"samples must be >= {MIN_SECRECY_SAMPLES}")
    W = W.W if isinstance(W, PrecodingMatrix) else np.asarray(W)
    Q = config.Q if Q is None else Q
    c_b = float(np.sum(np.log2(1.0 + snr_per_stream(H, W, config.sigma2))))
    if Q == 0:
        return np.full(samples, c_b)
    N = W.shape[0]
    worst = np.zeros(samples)
    for q in range(Q):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(q,)))
        h = eve_channel_sample(N, config.sigmaE2, rng, count=samples)
        worst = np.maximum(worst, eve_leakage(h, W) / config.sigmaE2)
    return np.maximum(c_b - np.log2(1.0 + worst), 0.0)


def secrecy_rate_mc(H, W, config, samples, seed, Q=None):
    """Average secrecy rate in bits/s/Hz; Q = 0 gives the no-Eve upper bound."""
    return float(np.mean(secrecy_rate_samples(H, W, config, samples, seed, Q)))


def reference_bs(config, M=None, theta=0.0):
    """BS at experiment.range_R on the broadside axis of both arrays (ULA receiver by default)."""
    return BsGeometry(
        M=config.n_bs if M is None else M,
        spacing_d=config.spacing_d,
        range_R=config.range_R,
        elevation_theta=theta,
        azimuth_varphi=0.0,
        u=receive_positions(config),
    )


def capacity_sweep(config, gammas_db=None, phis=None, n_values=None):
    """Capacity of Fekete (NULA) and equispaced (ULA) arrays versus SNR and rotation.

    M = N for each entry of ``n_values``; eigenvalues come from the SVD of
    H_tilde at experiment.range_R.
    """
    gammas_db = config.sweep_gammas_db if gammas_db is None else gammas_db
    phis = config.sweep_phis if phis is None else phis
    n_values = config.sweep_N if n_values is None else n_values

    rows = []
    for N in n_values:
        bs = BsGeometry(M=N, spacing_d=config.spacing_d, range_R=config.range_R)
        layouts = {"NULA": fekete_topology(N, N, config.fekete_tol), "ULA": ula_topology(N)}
        for name, topology in layouts.items():
            for phi in phis:
                array = ArrayGeometry(eta=topology.eta, aperture_L=config.L, rotation_phi=phi)
                lam = true_eigenvalues(asymptotic_factorization(array, bs, config).H_tilde)
                for g_db in gammas_db:
                    rows.append({
                        "N": N,
                        "topology": name,
                        "phi": phi,
                        "gamma_db": g_db,
                        "capacity": capacity(lam, db_to_linear(g_db), N),
                    })
    logger.info("Capacity sweep: %d points", len(rows))
    return _result(config, ("N", "topology", "phi", "gamma_db"), "capacity", rows)


def _reference_problem(config, N, K, phi, cap=None):
    topology = fekete_topology(N, K, config.fekete_tol)
    array = ArrayGeometry(eta=topology.eta, aperture_L=config.L, rotation_phi=phi)
    H = exact_channel(array, reference_bs(config), config)
    rows = served_streams(H, K, config.combiner)
    if cap is None:
        cap = spectral_cap(ChanceConstraintParams.from_config(config), N)
    return SlotProblem(H=rows, gamma=config.gamma, sigma2=config.sigma2, spectral_cap=cap, P_max=config.P_max), H


def power_sweep(config, n_values=None, k_values=None, phis=None):
    """Total transmit power versus N for several K and rotation offsets, SDR vs ZF."""
    n_values = config.sweep_N if n_values is None else n_values
    k_values = config.sweep_K if k_values is None else k_values
    phis = config.sweep_phis if phis is None else phis

    rows = []
    for N in n_values:
        for K in k_values:
            if K > min(N, config.n_bs):
                continue
            for phi in phis:
                problem, _ = _reference_problem(config, N, K, phi)
                W, report = solve_precoding_slot(problem, config.inner_tol)
                rows.append({"N": N, "K": K, "phi": phi, "scheme": "proposed",
                             "power_w": report.objective, "status": report.status})
                try:
                    zf = zf_precoder(problem.H, config.gamma, config.sigma2).power
                    zf_status = "optimal"
                except ValueError:
                    zf, zf_status = math.nan, "singular"
                rows.append({"N": N, "K": K, "phi": phi, "scheme": "zf", "power_w": zf, "status": zf_status})
    return _result(config, ("N", "K", "phi", "scheme"), "power_w", rows)


def secrecy_sweep(config, n_values=None, samples=None):
    """Average secrecy rate versus N: proposed, ZF at equal total power, no-Eve bound."""
    n_values = config.sweep_N if n_values is None else n_values
    samples = config.secrecy_samples if samples is None else samples

    rows = []
    for N in n_values:
        if config.K > min(N, config.n_bs):
            continue
        problem, _ = _reference_problem(config, N, config.K, config.rotation_phi)
        W, report = solve_precoding_slot(problem, config.inner_tol)
        seed = config.rng_seed + N
        entry = {"N": N, "status": report.status, "power_w": report.objective}
        if not report.ok:
            for scheme in ("proposed", "zf", "upper_bound"):
                rows.append({**entry, "scheme": scheme, "secrecy_rate": math.nan, "std_error": math.nan})
            continue

        zf = zf_precoder(problem.H, config.gamma, config.sigma2).W
        zf = zf * math.sqrt(W.power / float(np.sum(np.abs(zf) ** 2)))
        for scheme, matrix, Q in (("proposed", W, None), ("zf", zf, None), ("upper_bound", W, 0)):
            values = secrecy_rate_samples(problem.H, matrix, config, samples, seed, Q)
            rows.append({**entry, "scheme": scheme, "secrecy_rate": float(values.mean()),
                         "std_error": float(values.std(ddof=1) / math.sqrt(samples)) if Q != 0 else 0.0})
    return _result(config, ("N", "scheme"), "secrecy_rate", rows, replications=samples)


def _perturbed_rows(rows, epsilon, rng):
    """Stream rows moved uniformly inside their uncertainty balls."""
    K, N = rows.shape
    g = rng.standard_normal((K, N)) + 1j * rng.standard_normal((K, N))
    radius = epsilon * rng.uniform(size=K) ** (1.0 / (2 * N))
    return rows + (radius / np.linalg.norm(g, axis=1))[:, None] * g


def robust_secrecy_sweep(config, levels=None, samples=None):
    """Average secrecy rate versus normalized uncertainty epsilon^2 / rho^2.

    Robust and non-robust precoders are evaluated on channels drawn inside the
    uncertainty balls around the estimate.
    """
    levels = config.sweep_uncertainty if levels is None else levels
    samples = config.secrecy_samples if samples is None else samples
    problem, H = _reference_problem(config, config.N, config.K, config.rotation_phi)

    rows = []
    for level in levels:
        epsilon = math.sqrt(level) * H.rho
        model = UncertaintyModel.from_rows(problem.H, epsilon)
        candidates = {
            "non_robust": solve_precoding_slot(problem, config.inner_tol),
            "robust": solve_robust_precoding_slot(problem, model, config.inner_tol),
        }
        for scheme, (W, report) in candidates.items():
            entry = {"uncertainty_level": level, "scheme": scheme, "status": report.status,
                     "power_w": report.objective}
            if not report.ok:
                rows.append({**entry, "secrecy_rate": math.nan, "min_snr_db": math.nan})
                continue
            rng = np.random.default_rng(np.random.SeedSequence(config.rng_seed, spawn_key=(1000,)))
            rates, snrs = [], []
            for trial in range(samples):
                actual = _perturbed_rows(problem.H, epsilon, rng)
                snrs.append(float(snr_per_stream(actual, W, config.sigma2).min()))
                rates.append(secrecy_rate_mc(actual, W, config, MIN_SECRECY_SAMPLES, config.rng_seed + trial))
            rows.append({**entry, "secrecy_rate": float(np.mean(rates)),
                         "min_snr_db": 10.0 * math.log10(max(min(snrs), 1e-300))})
    return _result(config, ("uncertainty_level", "scheme"), "secrecy_rate", rows, replications=samples)


def hover_array(config, kind, topology=None):
    """Array hovering above the BS for the ground radiation map (planar or cube)."""
    if topology is None:
        if kind == "cube":
            topology = tensor_fekete(config.cube_Nx, config.cube_Ny, config.Kx, config.Ky, config.Nz, config.Kz,
                                     tol=config.fekete_tol)
        else:
            topology = tensor_fekete(config.Nx, config.Ny, config.Kx, config.Ky, tol=config.fekete_tol)
    bs_x, bs_y = config.bs_position
    return ArrayGeometry(
        eta=topology[0].eta,
        aperture_L=config.Lx,
        rotation_phi=config.rotation_phi,
        center=(bs_x, bs_y, config.altitude),
        kind=kind,
        eta_y=topology[1].eta,
        eta_z=topology[2].eta if kind == "cube" else [],
        aperture_Ly=config.Ly,
        aperture_Lz=config.Lz if kind == "cube" else 0.0,
    )


def hover_precoder(array, config):
    """Single-stream precoder toward a one-antenna BS directly below the array."""
    bs = BsGeometry(M=1, spacing_d=config.spacing_d, range_R=config.altitude, elevation_theta=math.pi)
    H = exact_channel(array, bs, config)
    cap = spectral_cap(ChanceConstraintParams.from_config(config), array.size)
    problem = SlotProblem(H=H.entries, gamma=config.gamma, sigma2=config.sigma2, spectral_cap=cap, P_max=config.P_max)
    return solve_precoding_slot(problem, config.inner_tol)


def ground_grid(config):
    """Square grid of ground points centered on the BS."""
    half, step = config.grid_half_width, config.grid_step
    offsets = np.arange(-half, half + step / 2, step)
    bs_x, bs_y = config.bs_position
    return bs_x + offsets, bs_y + offsets


def radiation_map(precoder, array, config, grid=None):
    """Received SNR on the ground, sum_k |g_p w_k|^2 / sigma2, in dB.

    g_p[n] = rho(d_n) exp(-j k d_n) uses the exact distance d_n from UAV n to
    the ground point p.
    """
    W = precoder.W if isinstance(precoder, PrecodingMatrix) else np.asarray(precoder)
    xs, ys = ground_grid(config) if grid is None else grid
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    points = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])
    uavs = uav_positions(array)
    dist = np.linalg.norm(points[:, None, :] - uavs[None, :, :], axis=2)
    g = path_attenuation(dist, config) * np.exp(-1j * wavenumber(config) * dist)
    snr = np.sum(np.abs(g @ W) ** 2, axis=1) / config.sigma2
    rows = {
        "array": array.kind,
        "x": points[:, 0],
        "y": points[:, 1],
        "snr_db": 10.0 * np.log10(np.maximum(snr, 1e-300)),
    }
    return _result(config, ("x", "y"), "snr_db", rows)


def sidelobe_peak_db(result, config, exclusion_radius=None):
    """Largest map value outside the mainlobe disc around the BS projection."""
    if exclusion_radius is None:
        exclusion_radius = 2.0 * config.wavelength * config.altitude / config.Lx
    frame = result.frame
    bs_x, bs_y = config.bs_position
    outside = np.hypot(frame["x"] - bs_x, frame["y"] - bs_y) > exclusion_radius
    return float(frame.loc[outside, "snr_db"].max())


def radiation_comparison(config):
    """Planar (Nx x Ny) and cube (cube_Nx x cube_Ny x Nz) ground maps on the same grid."""
    frames = []
    arrays = {kind: hover_array(config, kind) for kind in ("planar", "cube")}
    if arrays["planar"].size != arrays["cube"].size:
        logger.warning("Planar and cube arrays differ in size (%d vs %d UAVs)",
                       arrays["planar"].size, arrays["cube"].size)
    for kind, array in arrays.items():
        W, report = hover_precoder(array, config)
        if not report.ok:
            raise ValueError(f"{kind} hover precoding infeasible ({report.cause})")
        frames.append(radiation_map(W, array, config).frame)
    return _result(config, ("array", "x", "y"), "snr_db", pd.concat(frames, ignore_index=True))
