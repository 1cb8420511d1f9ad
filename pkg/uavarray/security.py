"""Eavesdropper leakage: chance-constraint spectral cap and robust S-procedure blocks."""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from uavarray.channel import eve_channel_sample

logger = logging.getLogger(__name__)

MIN_VALIDATION_SAMPLES = 10_000
VALIDATION_BATCH = 10_000
PSD_TOL = 1e-9


@dataclass(frozen=True)
class ChanceConstraintParams:
    """Leakage requirement Pr(max_q SNR_E,q <= xi) >= kappa over Q Eves."""

    xi: float
    kappa: float
    Q: int
    sigmaE2: float

    def __post_init__(self):
        if self.xi <= 0:
            raise ValueError("xi must be positive")
        if not 0.0 < self.kappa < 1.0:
            raise ValueError("kappa must lie in (0, 1)")
        if self.Q < 0:
            raise ValueError("Q must be >= 0")
        if self.sigmaE2 <= 0:
            raise ValueError("sigmaE2 must be positive")

    @classmethod
    def from_config(cls, config):
        return cls(xi=config.xi, kappa=config.kappa, Q=config.Q, sigmaE2=config.sigmaE2)


@dataclass(frozen=True)
class UncertaintyModel:
    """Estimated channels h_hat (K x N, amplitude h^H w) and per-stream radii epsilon."""

    epsilon: np.ndarray
    h_hat: np.ndarray

    def __post_init__(self):
        eps = np.atleast_1d(np.asarray(self.epsilon, dtype=float))
        h_hat = np.atleast_2d(np.asarray(self.h_hat, dtype=complex))
        if np.any(eps < 0):
            raise ValueError("epsilon must be >= 0")
        if eps.size != h_hat.shape[0]:
            raise ValueError("one epsilon per estimated channel is required")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "h_hat", h_hat)

    @classmethod
    def from_rows(cls, rows, epsilon):
        """Model around precoder-side stream rows (row k = h_k^H)."""
        rows = np.atleast_2d(rows)
        eps = np.broadcast_to(np.asarray(epsilon, dtype=float), (rows.shape[0],))
        return cls(epsilon=eps.copy(), h_hat=rows.conj())


def inverse_chi_square_quantile(p, half_dof_N):
    """t with Pr(1/||h||^2 <= t) = p for h ~ CN(0, I_N).

    ||h||^2 is Gamma(N, 1), so Pr(1/X <= t) = Q(N, 1/t) with Q the regularized
    upper incomplete gamma function.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if half_dof_N < 1:
        raise ValueError("N must be >= 1")
    return float(1.0 / special.gammainccinv(half_dof_N, p))


def spectral_cap(params, N):
    """Bound c on WW^H that enforces the leakage chance constraint for N UAVs.

    Returns infinity when no Eve is present (Q = 0).
    """
    if params.Q == 0:
        return math.inf
    p = 1.0 - params.kappa ** (1.0 / params.Q)
    return inverse_chi_square_quantile(p, N) * params.xi * params.sigmaE2


def eve_leakage(h_E, W):
    """Aggregate leakage sum_k |h_E^H w_k|^2 for one or many Eve channels."""
    return np.sum(np.abs(np.asarray(h_E).conj() @ np.asarray(W)) ** 2, axis=-1)


def validate_chance_constraint(W, params, samples, rng):
    """Monte Carlo estimate of Pr(max_q sum_k |h_q^H w_k|^2 / sigmaE2 <= xi).

    Trials are drawn in batches from ``rng.spawn`` substreams.
    """
    if samples < MIN_VALIDATION_SAMPLES:
        raise ValueError(f"samples must be >= {MIN_VALIDATION_SAMPLES}")
    W = np.asarray(W.W if hasattr(W, "W") else W, dtype=complex)
    N = W.shape[0]
    if params.Q == 0:
        return 1.0

    n_batches = -(-samples // VALIDATION_BATCH)
    ok = 0
    for b, child in enumerate(rng.spawn(n_batches)):
        size = min(VALIDATION_BATCH, samples - b * VALIDATION_BATCH)
        h = eve_channel_sample(N, params.sigmaE2, child, count=size * params.Q).reshape(size, params.Q, N)
        worst = eve_leakage(h, W).max(axis=1) / params.sigmaE2
        ok += int(np.count_nonzero(worst <= params.xi))
    probability = ok / samples
    logger.info("Chance constraint: %.5f empirical over %d trials (kappa=%.4g)", probability, samples, params.kappa)
    return probability


def binomial_std_error(probability, samples):
    return math.sqrt(max(probability * (1.0 - probability), 0.0) / samples)


def robust_lmi_blocks(W_all, gamma, model, slack, sigma2=1.0):
    """S-procedure blocks S_k(W, slack_k) for the worst-case SNR constraints.

    S_k = U_k^H (W_k - gamma sum_{i != k} W_i) U_k
          + [[slack_k I, 0], [0, -slack_k eps_k^2 - gamma sigma2]],  U_k = [I_N, h_hat_k].

    Args:
        W_all: K Hermitian N x N matrices (w_k w_k^H).
        gamma: Target SNR (linear).
        model: UncertaintyModel with K estimated channels.
        slack: K nonnegative slack values.
        sigma2: BS noise power.

    Returns:
        List of K Hermitian (N+1) x (N+1) matrices; PSD blocks certify the
        worst-case SNR over the uncertainty balls.
    """
    W_all = [np.asarray(Wk, dtype=complex) for Wk in W_all]
    slack = np.atleast_1d(np.asarray(slack, dtype=float))
    K = len(W_all)
    N = W_all[0].shape[0]
    if model.h_hat.shape != (K, N):
        raise ValueError(f"h_hat has shape {model.h_hat.shape}, expected ({K}, {N})")
    if slack.size != K:
        raise ValueError("one slack value per stream is required")
    if any(Wk.shape != (N, N) for Wk in W_all):
        raise ValueError("all W_k must be N x N")
    if np.any(slack < 0):
        raise ValueError("slack must be >= 0")

    total = sum(W_all)
    blocks = []
    for k in range(K):
        A = (1.0 + gamma) * W_all[k] - gamma * total
        U = np.hstack([np.eye(N), model.h_hat[k][:, None]])
        S = U.conj().T @ A @ U
        S[:N, :N] += slack[k] * np.eye(N)
        S[N, N] += -slack[k] * model.epsilon[k] ** 2 - gamma * sigma2
        blocks.append(0.5 * (S + S.conj().T))
    return blocks


def min_eigenvalue(block):
    return float(np.linalg.eigvalsh(block)[0])


def best_slack(W_all, gamma, model, k, sigma2=1.0):
    """Slack maximizing the minimum eigenvalue of block k.

    The minimum eigenvalue is concave in the slack, hence unimodal in its
    logarithm; a bounded scalar search runs on the log scale next to slack = 0.

    Returns:
        (slack, min_eigenvalue).
    """
    K = len(W_all)

    def block_min_eig(s):
        slack = np.zeros(K)
        slack[k] = s
        return min_eigenvalue(robust_lmi_blocks(W_all, gamma, model, slack, sigma2)[k])

    scale = max(float(np.linalg.norm(sum(np.asarray(W) for W in W_all), 2)), gamma * sigma2, 1e-300)
    scale *= 1.0 + float(np.linalg.norm(model.h_hat[k])) ** 2
    low, high = math.log(scale * 1e-8), math.log(scale * 1e6)
    result = optimize.minimize_scalar(
        lambda t: -block_min_eig(math.exp(t)), bounds=(low, high), method="bounded",
        options={"xatol": 1e-10},
    )
    candidates = [(0.0, block_min_eig(0.0)), (math.exp(result.x), -result.fun)]
    return max(candidates, key=lambda c: c[1])


def stream_snr(h, W, k, sigma2):
    """SNR of stream k for a channel h (amplitude h^H w_i)."""
    amplitude = np.abs(np.asarray(h).conj() @ W) ** 2
    interference = np.sum(amplitude, axis=-1) - amplitude[..., k]
    return amplitude[..., k] / (interference + sigma2)


def worst_case_snr(W, k, model, sigma2=1.0, probes=1000, rng=None):
    """Lowest SNR of stream k found over the uncertainty ball.

    Samples ``probes`` perturbations on the ball surface, then refines the best
    one by local descent on the sphere. The nominal channel is included, so the
    estimate never exceeds the nominal SNR.
    """
    if probes < 1000:
        raise ValueError("probes must be >= 1000")
    W = np.asarray(W.W if hasattr(W, "W") else W, dtype=complex)
    h_hat = model.h_hat[k]
    eps = float(model.epsilon[k])
    nominal = float(stream_snr(h_hat, W, k, sigma2))
    if eps == 0.0:
        return nominal

    rng = rng if rng is not None else np.random.default_rng(0)
    N = h_hat.size
    g = rng.standard_normal((probes, N)) + 1j * rng.standard_normal((probes, N))
    deltas = eps * g / np.linalg.norm(g, axis=1, keepdims=True)
    values = stream_snr(h_hat[None, :] + deltas, W, k, sigma2)
    start = deltas[int(np.argmin(values))]

    def on_sphere(z):
        delta = z[:N] + 1j * z[N:]
        norm = np.linalg.norm(delta)
        return eps * delta / norm if norm > 0 else delta

    result = optimize.minimize(
        lambda z: float(stream_snr(h_hat + on_sphere(z), W, k, sigma2)),
        np.concatenate([start.real, start.imag]),
        method="BFGS",
        options={"gtol": 1e-12},
    )
    refined = float(stream_snr(h_hat + on_sphere(result.x), W, k, sigma2))
    return min(nominal, float(values.min()), refined)
