"""Virtual-array topology design: Fekete points, grouped topologies and eigenvalue asymptotics."""

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import Legendre
from scipy import linalg, optimize

from uavarray.geometry import ula_grid

logger = logging.getLogger(__name__)

ENUMERATION_LIMIT = 10**6
DISTINCT_TOL = 1e-12
GAUSS_LOBATTO_TOL = 1e-8


@dataclass(frozen=True)
class TopologyVector:
    """Normalized UAV spacings eta, sorted, each in [-1, 1]."""

    eta: np.ndarray

    def __post_init__(self):
        eta = np.array(self.eta, dtype=float).reshape(-1)
        if eta.size == 0:
            raise ValueError("topology must hold at least one UAV")
        if np.any(np.abs(eta) > 1.0 + 1e-12):
            raise ValueError("eta entries must lie in [-1, 1]")
        if np.any(np.diff(eta) < 0):
            raise ValueError("eta must be nondecreasing")
        eta.setflags(write=False)
        object.__setattr__(self, "eta", eta)

    @classmethod
    def from_values(cls, values):
        """Sort and wrap arbitrary spacings."""
        return cls(np.sort(np.asarray(values, dtype=float).reshape(-1)))

    @property
    def N(self):
        return self.eta.size

    def __len__(self):
        return self.eta.size


def _as_eta(eta):
    if isinstance(eta, TopologyVector):
        return eta.eta
    return np.asarray(eta, dtype=float).reshape(-1)


@dataclass(frozen=True)
class FeketeSolution:
    """K Fekete points on [-1, 1] and how they were found."""

    beta: np.ndarray
    objective: float
    converged: bool = True
    message: str = ""
    method_report: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class EigenAsymptotics:
    """Small-nu eigenvalue asymptotics of H_tilde H_tilde^H."""

    lambda_asym: np.ndarray
    r_B: np.ndarray
    r_U: np.ndarray
    nu: float
    phi: float


def vandermonde_objective(points):
    """Squared Vandermonde determinant prod_{a<b} (x_b - x_a)^2."""
    x = _as_eta(points)
    a, b = np.triu_indices(x.size, k=1)
    return float(np.prod((x[b] - x[a]) ** 2))


def subset_vandermonde_objective(eta, K):
    """Sum over all K-subsets of the squared Vandermonde determinant.

    Enumerated exactly while C(N, K) <= 10^6; beyond that the Cauchy-Binet
    identity det(V^T V) is evaluated from the QR diagonal of the N x K
    Vandermonde matrix.
    """
    x = _as_eta(eta)
    N = x.size
    if K > N:
        raise ValueError(f"K={K} exceeds N={N}")
    if K < 0:
        raise ValueError("K must be >= 0")
    if K <= 1:
        return float(math.comb(N, K))

    if math.comb(N, K) <= ENUMERATION_LIMIT:
        subsets = np.array(list(itertools.combinations(range(N), K)))
        values = x[subsets]
        a, b = np.triu_indices(K, k=1)
        return float(np.sum(np.prod((values[:, b] - values[:, a]) ** 2, axis=1)))

    R = linalg.qr(np.vander(x, K, increasing=True), mode="r")[0]
    return float(np.prod(np.diag(R) ** 2))


def gauss_lobatto_nodes(K):
    """Roots of (1 - x^2) P'_{K-1}(x), sorted."""
    if K < 2:
        raise ValueError("Gauss-Lobatto nodes need K >= 2")
    if K == 2:
        return np.array([-1.0, 1.0])
    interior = np.sort(np.real(Legendre.basis(K - 1).deriv().roots()))
    return np.concatenate([[-1.0], interior, [1.0]])


def _neg_log_objective(x):
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    if np.any(diff == 0.0):
        # coincident points; L-BFGS-B backtracks on an infinite value
        return math.inf, np.zeros_like(x)
    value = -0.5 * np.sum(np.log(diff**2))
    inv = 1.0 / diff
    np.fill_diagonal(inv, 0.0)
    grad = -2.0 * inv.sum(axis=1)
    return value, grad


def _interior_stationarity(interior):
    x = np.concatenate([[-1.0], interior, [1.0]])
    diff = interior[:, None] - x[None, :]
    diff[np.arange(interior.size), np.arange(1, interior.size + 1)] = np.inf
    return (1.0 / diff).sum(axis=1)


def fekete_points(K, tol=1e-12, starts=8, seed=0):
    """Fekete points of [-1, 1]: maximizers of the squared Vandermonde determinant.

    Multi-start L-BFGS-B ascent on the log objective, then the endpoints are
    pinned to -1 and +1 and the interior is polished by solving the stationarity
    equations. The result is cross-checked against the Gauss-Lobatto nodes.

    Args:
        K: Number of points (>= 2).
        tol: Stationarity tolerance of the interior polish.
        starts: Number of random starts.
        seed: Seed of the per-start streams.

    Returns:
        FeketeSolution; ``converged`` is False with a message when the polish or
        the Gauss-Lobatto cross-check fails.
    """
    if K < 2:
        raise ValueError("fekete_points needs K >= 2")
    if tol <= 0:
        raise ValueError("tol must be positive")

    reference = gauss_lobatto_nodes(K)
    if K == 2:
        beta = np.array([-1.0, 1.0])
        return FeketeSolution(
            beta=beta,
            objective=vandermonde_objective(beta),
            method_report={"starts": 0, "iterations": 0, "stationarity": 0.0, "gauss_lobatto_error": 0.0},
        )

    best = None
    iterations = 0
    for start, child in enumerate(np.random.SeedSequence(seed).spawn(starts)):
        rng = np.random.default_rng(child)
        x0 = np.sort(rng.uniform(-1.0, 1.0, K))
        x0[0], x0[-1] = -0.99, 0.99
        result = optimize.minimize(
            _neg_log_objective, x0, jac=True, method="L-BFGS-B", bounds=[(-1.0, 1.0)] * K,
        )
        iterations += int(result.nit)
        candidate = np.sort(result.x)
        value = float(result.fun)
        if best is None or value < best[0] - 1e-12 or (
            abs(value - best[0]) <= 1e-12 and tuple(candidate) < tuple(best[1])
        ):
            best = (value, candidate, start)

    _, first_pass, best_start = best
    polish = optimize.root(_interior_stationarity, first_pass[1:-1], method="hybr", tol=1e-15)
    interior = np.sort(polish.x)
    beta = np.concatenate([[-1.0], interior, [1.0]])
    stationarity = float(np.max(np.abs(_interior_stationarity(interior))))
    gl_error = float(np.max(np.abs(beta - reference)))

    converged = bool(polish.success or stationarity <= tol) and gl_error <= GAUSS_LOBATTO_TOL
    if not converged:
        message = (
            f"no convergence after {starts} starts: stationarity {stationarity:.3g}, "
            f"Gauss-Lobatto deviation {gl_error:.3g}"
        )
        logger.error("Fekete K=%d: %s", K, message)
    else:
        message = ""
        logger.info("Fekete K=%d converged (best start %d, stationarity %.2e)", K, best_start, stationarity)

    return FeketeSolution(
        beta=beta,
        objective=vandermonde_objective(beta),
        converged=converged,
        message=message,
        method_report={
            "starts": starts,
            "best_start": best_start,
            "iterations": iterations,
            "polish_evaluations": int(polish.nfev),
            "stationarity": stationarity,
            "gauss_lobatto_error": gl_error,
        },
    )


def grouped_topology(N, K, beta):
    """Split N UAVs into K groups placed at the Fekete points.

    eta_n = beta_k for the unique k with k - 1 < n K / N <= k.
    """
    if K > N:
        raise ValueError(f"K={K} exceeds N={N}")
    values = beta.beta if isinstance(beta, FeketeSolution) else np.asarray(beta, dtype=float)
    if values.size != K:
        raise ValueError(f"beta has {values.size} points, expected K={K}")
    n = np.arange(1, N + 1)
    group = -(-n * K // N)
    return TopologyVector.from_values(values[group - 1])


def fekete_topology(N, K, tol=1e-12):
    """Grouped Fekete topology; K = 1 collapses every UAV onto the center."""
    if K == 1:
        return TopologyVector(np.zeros(N))
    return grouped_topology(N, K, fekete_points(K, tol))


def ula_topology(N):
    """Equispaced reference topology on [-1, 1]."""
    if N == 1:
        return TopologyVector(np.zeros(1))
    return TopologyVector(np.linspace(-1.0, 1.0, N))


def grouped_upper_bound(N, K, beta):
    """(N/K)^K times the squared Vandermonde determinant of the K Fekete points."""
    values = beta.beta if isinstance(beta, FeketeSolution) else beta
    return (N / K) ** K * vandermonde_objective(values)


def triangular_diagonals(eta, K, method="formula"):
    """Squared diagonal r_k^2 of the triangular factor of the N x K Vandermonde matrix.

    ``formula`` takes ratios of consecutive subset objectives (r_1^2 = N, and 0
    once a subset objective vanishes); ``qr`` reads them off a QR factorization,
    which needs at least K distinct spacings.
    """
    x = _as_eta(eta)
    N = x.size
    if K > N:
        raise ValueError(f"K={K} exceeds N={N}")
    if method == "qr":
        distinct = 1 + int(np.sum(np.diff(np.sort(x)) > DISTINCT_TOL))
        if distinct < K:
            raise ValueError(
                f"Vandermonde matrix is rank deficient ({distinct} distinct spacings < K={K}); "
                "use formula mode"
            )
        R = linalg.qr(np.vander(x, K, increasing=True), mode="r")[0]
        return np.diag(R) ** 2
    if method != "formula":
        raise ValueError(f"unknown method {method!r}")

    objectives = [subset_vandermonde_objective(x, k) for k in range(K + 1)]
    r2 = np.zeros(K)
    for k in range(1, K + 1):
        if objectives[k - 1] > 0:
            r2[k - 1] = objectives[k] / objectives[k - 1]
    return r2


def asymptotic_eigenvalues(eta, M, K, nu, phi, receive=None):
    """Leading-order eigenvalues lambda_k = (r_B r_U / (k-1)!)^2 (nu cos phi)^(2(k-1)).

    ``receive`` overrides the normalized receive positions (ULA grid by default).
    """
    x = _as_eta(eta)
    if K > min(M, x.size):
        raise ValueError(f"K={K} exceeds min(M, N)={min(M, x.size)}")
    if nu < 0:
        raise ValueError("nu must be >= 0")
    u = ula_grid(M) if receive is None else np.asarray(receive, dtype=float)
    rB2 = triangular_diagonals(u, K)
    rU2 = triangular_diagonals(x, K)
    k = np.arange(K)
    factorial = np.array([math.factorial(int(i)) for i in k], dtype=float)
    lam = rB2 * rU2 / factorial**2 * (nu * math.cos(phi)) ** (2 * k)
    return EigenAsymptotics(lambda_asym=lam, r_B=np.sqrt(rB2), r_U=np.sqrt(rU2), nu=float(nu), phi=float(phi))


def true_eigenvalues(H_tilde, K=None):
    """Top-K eigenvalues of H_tilde H_tilde^H as squared singular values."""
    s = linalg.svd(np.asarray(H_tilde), compute_uv=False)
    lam = s**2
    return lam if K is None else lam[:K]


def capacity(lam, gamma, N):
    """C = sum_k log2(1 + gamma lambda_k / N) in bits/s/Hz."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError("eigenvalues must be nonnegative")
    return float(np.sum(np.log2(1.0 + gamma * lam / N)))


def tensor_fekete(Nx, Ny, Kx, Ky, Nz=None, Kz=None, tol=1e-12):
    """Per-axis grouped Fekete topologies for planar (and cube) arrays.

    Returns:
        Tuple of TopologyVectors, one per axis (x, y[, z]).
    """
    axes = [(Nx, Kx), (Ny, Ky)]
    if Nz is not None:
        if Kz is None:
            raise ValueError("Kz is required with Nz")
        axes.append((Nz, Kz))
    return tuple(fekete_topology(n, k, tol) for n, k in axes)


def fekete_receiver_grid(M, K):
    """Receive positions at grouped Fekete points, scaled to the ULA aperture."""
    return fekete_topology(M, min(K, M)).eta * (M - 1) / M


def topology_from_config(config):
    """Topology (or per-axis topologies) for the configured array kind."""
    if config.array_kind == "planar":
        return tensor_fekete(config.Nx, config.Ny, config.Kx, config.Ky, tol=config.fekete_tol)
    if config.array_kind == "cube":
        return tensor_fekete(
            config.cube_Nx, config.cube_Ny, config.Kx, config.Ky, config.Nz, config.Kz, tol=config.fekete_tol,
        )
    return fekete_topology(config.N, config.K, config.fekete_tol)
