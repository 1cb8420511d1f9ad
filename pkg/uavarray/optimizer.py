"""Per-slot secure precoding: SDR power minimization, robust variant and ZF baseline.

Stream rows follow the convention of ``channel.served_streams``: row k of the
K x N matrix H times precoder column w_i is the amplitude stream k receives
from stream i.
"""

import logging
import math
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from uavarray.security import UncertaintyModel, best_slack

logger = logging.getLogger(__name__)

SOLVERS = ("CLARABEL", "SCS")
FEASIBILITY_TOL = 1e-6
STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_MAX_ITERS = "max_iters"


@dataclass(frozen=True)
class PrecodingMatrix:
    """Complex N x K precoder (column k carries stream k)."""

    W: np.ndarray

    def __post_init__(self):
        W = np.atleast_2d(np.array(self.W, dtype=complex))
        if not np.all(np.isfinite(W)):
            raise ValueError("precoder entries must be finite")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    @classmethod
    def zeros(cls, N, K):
        return cls(np.zeros((N, K), dtype=complex))

    @property
    def N(self):
        return self.W.shape[0]

    @property
    def K(self):
        return self.W.shape[1]

    @property
    def power(self):
        """Tr(W W^H)."""
        return float(np.sum(np.abs(self.W) ** 2))

    @property
    def row_power(self):
        """Per-UAV transmit power [W W^H]_nn."""
        return np.sum(np.abs(self.W) ** 2, axis=1)

    @property
    def gram(self):
        return self.W @ self.W.conj().T


@dataclass(frozen=True)
class SlotProblem:
    """Precoding problem of one time slot.

    ``H`` holds the K served stream rows (K x N). The trajectory-related fields
    describe the slot's flight constraints and do not enter the precoding solve.
    """

    H: np.ndarray
    gamma: float
    sigma2: float
    spectral_cap: float = math.inf
    P_max: float = math.inf
    previous_center: tuple | None = None
    no_fly_linearizations: tuple = ()
    speed_limit: float | None = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=complex))
        object.__setattr__(self, "H", H)
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.spectral_cap <= 0:
            raise ValueError("spectral_cap must be positive")
        if self.P_max < 0:
            raise ValueError("P_max must be >= 0")
        if H.shape[0] > H.shape[1]:
            raise ValueError("more served streams than UAVs")


@dataclass(frozen=True)
class SolverReport:
    """Outcome of a solve; ``cause`` names the violated constraint family."""

    status: str
    objective: float
    iterations: int = 0
    max_constraint_violation: float = 0.0
    lower_bound: float = 0.0
    cause: str | None = None
    slot: int | None = None
    message: str = ""
    solver: str = ""
    history: tuple = field(default=(), compare=False)

    @property
    def ok(self):
        return self.status == STATUS_OPTIMAL


def snr_per_stream(H, W, sigma2):
    """|h_k w_k|^2 / (sum_{i != k} |h_k w_i|^2 + sigma2) for every stream k."""
    W = W.W if isinstance(W, PrecodingMatrix) else np.asarray(W)
    gains = np.abs(np.asarray(H) @ W) ** 2
    signal = np.diag(gains)
    interference = gains.sum(axis=1) - signal
    return signal / (interference + sigma2)


def constraint_violation(H, W, gamma, sigma2, spectral_cap=math.inf, P_max=math.inf):
    """Largest relative violation over the SNR, spectral-cap and per-UAV families."""
    W = W.W if isinstance(W, PrecodingMatrix) else np.asarray(W)
    violations = {"snr": float(np.max(np.maximum(0.0, (gamma - snr_per_stream(H, W, sigma2)) / gamma)))}
    if math.isfinite(spectral_cap):
        top = float(np.linalg.norm(W, 2) ** 2) if W.size else 0.0
        violations["spectral_cap"] = max(0.0, (top - spectral_cap) / spectral_cap)
    if math.isfinite(P_max):
        rows = np.sum(np.abs(W) ** 2, axis=1)
        if P_max > 0:
            violations["per_uav_power"] = float(np.max(np.maximum(0.0, (rows - P_max) / P_max)))
        else:
            violations["per_uav_power"] = float(np.max(rows))
    return violations


def total_power(precoders):
    """Gamma = sum_i Tr(W[i] W[i]^H)."""
    total = 0.0
    for W in precoders:
        W = W.W if isinstance(W, PrecodingMatrix) else np.asarray(W)
        total += float(np.sum(np.abs(W) ** 2))
    return total


def zf_precoder(H, gamma, sigma2):
    """Zero-forcing precoder meeting every stream SNR exactly.

    Raises:
        ValueError: HH^H is singular.
    """
    H = np.atleast_2d(np.asarray(H, dtype=complex))
    gram = H @ H.conj().T
    if np.linalg.cond(gram) > 1e12:
        raise ValueError("HH^H is singular; zero forcing is undefined")
    W = H.conj().T @ np.linalg.inv(gram) * math.sqrt(gamma * sigma2)
    return PrecodingMatrix(W)


def _channel_scale(H):
    scale = float(np.sqrt(np.mean(np.abs(H) ** 2)))
    return scale if scale > 0 else 1.0


def _build_sdr(Hn, gamma, cap_n, pmax_n, model=None):
    K, N = Hn.shape
    Ws = [cp.Variable((N, N), hermitian=True) for _ in range(K)]
    total = sum(Ws)
    constraints = [Wk >> 0 for Wk in Ws]
    for k in range(K):
        h, hc = Hn[k], Hn[k].conj()
        interference = sum(cp.real(h @ Ws[i] @ hc) for i in range(K) if i != k)
        constraints.append(cp.real(h @ Ws[k] @ hc) - gamma * interference >= gamma)
    if math.isfinite(cap_n):
        constraints.append(total << cap_n * np.eye(N))
    if math.isfinite(pmax_n):
        constraints.append(cp.real(cp.diag(total)) <= pmax_n)

    slack = None
    if model is not None:
        slack = cp.Variable(K, nonneg=True)
        for k in range(K):
            A = (1.0 + gamma) * Ws[k] - gamma * total
            h = model.h_hat[k].reshape(N, 1)
            Ah = A @ h
            corner = cp.real(h.conj().T @ A @ h) - slack[k] * model.epsilon[k] ** 2 - gamma
            Z = cp.Variable((N + 1, N + 1), hermitian=True)
            constraints += [
                Z == cp.bmat([[A + slack[k] * np.eye(N), Ah], [Ah.H, corner]]),
                Z >> 0,
            ]
    problem = cp.Problem(cp.Minimize(cp.real(cp.trace(total))), constraints)
    return problem, Ws, slack


def _build_single_stream(Hn, gamma, cap_n, pmax_n):
    """Second-order cone form of the one-stream slot; exact, no lifting."""
    h = Hn[0]
    w = cp.Variable(h.shape[0], complex=True)
    constraints = [cp.real(h @ w) >= math.sqrt(gamma)]
    if math.isfinite(cap_n):
        constraints.append(cp.norm(w, 2) <= math.sqrt(cap_n))
    if math.isfinite(pmax_n):
        constraints.append(cp.abs(w) <= math.sqrt(pmax_n))
    return cp.Problem(cp.Minimize(cp.norm(w, 2)), constraints), w


def _solve(problem, tol):
    """Solve with Clarabel, falling back to SCS; returns the solver name or ''."""
    options = {
        "CLARABEL": {"tol_gap_abs": tol, "tol_gap_rel": tol, "tol_feas": tol},
        "SCS": {"eps": max(tol, 1e-9), "max_iters": 100_000},
    }
    for name in SOLVERS:
        try:
            problem.solve(solver=name, **options[name])
            return name
        except cp.error.SolverError as e:
            logger.warning("Solver %s failed (%s); trying next backend", name, e)
    return ""


def _solved(problem):
    return problem.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE)


def _iterations(problem):
    stats = getattr(problem, "solver_stats", None)
    return int(getattr(stats, "num_iters", 0) or 0)


def _feasible(Hn, gamma, cap_n, pmax_n, tol, model=None):
    if model is None and Hn.shape[0] == 1:
        problem, _ = _build_single_stream(Hn, gamma, cap_n, pmax_n)
    else:
        problem, _, _ = _build_sdr(Hn, gamma, cap_n, pmax_n, model)
    _solve(problem, tol)
    return _solved(problem)


def _diagnose(Hn, gamma, cap_n, pmax_n, tol, model=None):
    """Name the constraint family that makes the slot infeasible."""
    if pmax_n <= 0:
        return "per_uav_power"
    if math.isfinite(pmax_n) and _feasible(Hn, gamma, cap_n, math.inf, tol, model):
        return "per_uav_power"
    if math.isfinite(cap_n) and _feasible(Hn, gamma, math.inf, pmax_n, tol, model):
        return "spectral_cap"
    return "snr"


def _principal_directions(lifted, Hn):
    columns = []
    for k, Wk in enumerate(lifted):
        vals, vecs = np.linalg.eigh(0.5 * (Wk + Wk.conj().T))
        d = vecs[:, -1] * math.sqrt(max(vals[-1], 0.0))
        amplitude = Hn[k] @ d
        if abs(amplitude) > 0:
            d = d * np.exp(-1j * np.angle(amplitude))
        columns.append(d)
    return np.column_stack(columns)


def _power_control(D, Hn, gamma):
    """Powers along fixed unit directions that meet every SNR with equality."""
    norms = np.linalg.norm(D, axis=0)
    if np.any(norms == 0):
        return None
    U = D / norms
    gains = np.abs(Hn @ U) ** 2
    A = -gamma * gains
    np.fill_diagonal(A, np.diag(gains))
    try:
        p = np.linalg.solve(A, gamma * np.ones(Hn.shape[0]))
    except np.linalg.LinAlgError:
        return None
    if np.any(p <= 0):
        return None
    return U * np.sqrt(p)[None, :]


def _uniform_rescale(D, Hn, gamma):
    gains = np.abs(Hn @ D) ** 2
    signal = np.diag(gains)
    interference = gains.sum(axis=1) - signal
    margin = signal - gamma * interference
    if np.any(margin <= 0):
        return None
    return D * math.sqrt(float(np.max(gamma / margin)))


def _recover_rank_one(lifted, Hn, gamma, cap_n, pmax_n):
    """Rank-one precoder from the lifted SDR solution (normalized units)."""
    D = _principal_directions(lifted, Hn)
    candidates = []
    for label, W in (("power_control", _power_control(D, Hn, gamma)), ("rescale", _uniform_rescale(D, Hn, gamma))):
        if W is None:
            continue
        violation = max(constraint_violation(Hn, W, gamma, 1.0, cap_n, pmax_n).values())
        candidates.append((violation > FEASIBILITY_TOL, float(np.sum(np.abs(W) ** 2)), violation, label, W))
    if not candidates:
        return D, math.inf, "none"
    candidates.sort(key=lambda c: (c[0], c[1] if not c[0] else c[2]))
    _, _, violation, label, W = candidates[0]
    if label == "rescale":
        logger.warning("Rank-one recovery by uniform rescaling (violation %.2e)", violation)
    return W, violation, label


def solve_precoding_slot(problem, tol=1e-8):
    """Minimize Tr(WW^H) under per-stream SNR, spectral cap and per-UAV power.

    Solves the semidefinite relaxation in units normalized by the channel scale
    and the noise power, then recovers a rank-one precoder. The relaxation
    optimum is reported as ``lower_bound``.

    Returns:
        (PrecodingMatrix, SolverReport). An infeasible slot returns a zero
        precoder and ``cause`` in {per_uav_power, spectral_cap, snr}.
    """
    return _solve_slot(problem, tol, None)


def solve_robust_precoding_slot(problem, model, tol=1e-8):
    """Robust counterpart of ``solve_precoding_slot`` over CSI uncertainty balls.

    Each SNR constraint is replaced by its S-procedure block with a slack
    variable; per-UAV power and the spectral cap are kept.

    Args:
        problem: SlotProblem; ``problem.H`` holds the estimated stream rows.
        model: UncertaintyModel around ``problem.H`` (see ``UncertaintyModel.from_rows``).
    """
    K, N = problem.H.shape
    if model.h_hat.shape != (K, N):
        raise ValueError(f"model has shape {model.h_hat.shape}, expected ({K}, {N})")
    return _solve_slot(problem, tol, model)


def _solve_slot(problem, tol, model):
    H = problem.H
    K, N = H.shape
    scale = _channel_scale(H)
    unit = problem.sigma2 / scale**2
    cap_n = problem.spectral_cap / unit
    pmax_n = problem.P_max / unit
    model_n = None
    if model is not None:
        model_n = UncertaintyModel(epsilon=model.epsilon / scale, h_hat=model.h_hat / scale)

    if problem.P_max == 0:
        return PrecodingMatrix.zeros(N, K), SolverReport(
            status=STATUS_INFEASIBLE, objective=math.nan, cause="per_uav_power",
            message="zero per-UAV power cannot meet a positive SNR target",
        )

    if model_n is None and K == 1:
        return _solve_single_stream(H / scale, problem.gamma, cap_n, pmax_n, unit, tol)

    sdr, Ws, _ = _build_sdr(H / scale, problem.gamma, cap_n, pmax_n, model_n)
    solver = _solve(sdr, tol)
    if not _solved(sdr):
        cause = _diagnose(H / scale, problem.gamma, cap_n, pmax_n, tol, model_n)
        logger.info("Slot infeasible (%s, solver status %s)", cause, sdr.status)
        return PrecodingMatrix.zeros(N, K), SolverReport(
            status=STATUS_INFEASIBLE, objective=math.nan, iterations=_iterations(sdr),
            cause=cause, message=f"solver status {sdr.status}", solver=solver,
        )

    lifted = [Wk.value for Wk in Ws]
    lower_bound = float(sdr.value) * unit
    if model_n is None:
        Wn, violation, recovery = _recover_rank_one(lifted, H / scale, problem.gamma, cap_n, pmax_n)
    else:
        Wn, violation, recovery = _recover_robust(lifted, H / scale, problem.gamma, cap_n, pmax_n, model_n)

    W = PrecodingMatrix(Wn * math.sqrt(unit))
    status = STATUS_OPTIMAL if violation <= FEASIBILITY_TOL else STATUS_INFEASIBLE
    report = SolverReport(
        status=status,
        objective=W.power,
        iterations=_iterations(sdr),
        max_constraint_violation=float(violation),
        lower_bound=lower_bound,
        cause=None if status == STATUS_OPTIMAL else "rank_one_recovery",
        message=f"recovery={recovery}",
        solver=solver,
    )
    logger.debug("Slot solved: power %.4g W (bound %.4g W, %s)", report.objective, lower_bound, recovery)
    return W, report


def _solve_single_stream(Hn, gamma, cap_n, pmax_n, unit, tol):
    N = Hn.shape[1]
    socp, w = _build_single_stream(Hn, gamma, cap_n, pmax_n)
    solver = _solve(socp, tol)
    if not _solved(socp):
        cause = _diagnose(Hn, gamma, cap_n, pmax_n, tol)
        logger.info("Slot infeasible (%s, solver status %s)", cause, socp.status)
        return PrecodingMatrix.zeros(N, 1), SolverReport(
            status=STATUS_INFEASIBLE, objective=math.nan, iterations=_iterations(socp),
            cause=cause, message=f"solver status {socp.status}", solver=solver,
        )

    Wn = np.asarray(w.value).reshape(N, 1)
    amplitude = complex(Hn[0] @ Wn[:, 0])
    if abs(amplitude) > 0:
        Wn = Wn * np.exp(-1j * np.angle(amplitude))
    gain = abs(amplitude) ** 2
    if 0 < gain < gamma:
        # solver tolerance can leave the SNR a hair short
        Wn = Wn * math.sqrt(gamma / gain)
    violation = max(constraint_violation(Hn, Wn, gamma, 1.0, cap_n, pmax_n).values())
    W = PrecodingMatrix(Wn * math.sqrt(unit))
    status = STATUS_OPTIMAL if violation <= FEASIBILITY_TOL else STATUS_INFEASIBLE
    report = SolverReport(
        status=status,
        objective=W.power,
        iterations=_iterations(socp),
        max_constraint_violation=float(violation),
        lower_bound=float(socp.value) ** 2 * unit,
        cause=None if status == STATUS_OPTIMAL else "rank_one_recovery",
        message="recovery=single_stream",
        solver=solver,
    )
    logger.debug("Single-stream slot solved: power %.4g W", report.objective)
    return W, report


def robust_violation(W, gamma, model, sigma2=1.0):
    """Largest negative minimum eigenvalue of the S-procedure blocks at their best slack."""
    W = W.W if isinstance(W, PrecodingMatrix) else np.asarray(W)
    lifted = [np.outer(W[:, k], W[:, k].conj()) for k in range(W.shape[1])]
    worst = 0.0
    for k in range(W.shape[1]):
        _, eig = best_slack(lifted, gamma, model, k, sigma2)
        worst = max(worst, -eig)
    return worst


def _recover_robust(lifted, Hn, gamma, cap_n, pmax_n, model_n):
    D = _principal_directions(lifted, Hn)

    def excess(alpha):
        return robust_violation(alpha * D, gamma, model_n) / gamma

    alpha = 1.0
    if excess(1.0) > FEASIBILITY_TOL:
        low, high = 1.0, 2.0
        while excess(high) > FEASIBILITY_TOL and high < 64.0:
            high *= 2.0
        for _ in range(40):
            mid = 0.5 * (low + high)
            low, high = (mid, high) if excess(mid) > FEASIBILITY_TOL else (low, mid)
        alpha = high
        logger.warning("Robust rank-one recovery rescaled by %.4g", alpha)
    W = alpha * D
    families = constraint_violation(Hn, W, gamma, 1.0, cap_n, pmax_n)
    families["snr"] = excess(alpha)
    return W, max(families.values()), "robust_rescale" if alpha > 1.0 else "principal"
