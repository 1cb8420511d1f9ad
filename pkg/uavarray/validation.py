"""Acceptance checks run by the ``validate`` subcommand."""

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from uavarray.evaluation import capacity_sweep, hover_array, radiation_comparison, sidelobe_peak_db
from uavarray.geometry import ula_grid
from uavarray.optimizer import SlotProblem, solve_precoding_slot, zf_precoder
from uavarray.report import chance_validation_row
from uavarray.security import (
    ChanceConstraintParams,
    UncertaintyModel,
    best_slack,
    binomial_std_error,
    spectral_cap,
    validate_chance_constraint,
    worst_case_snr,
)
from uavarray.topology import (
    asymptotic_eigenvalues,
    fekete_points,
    gauss_lobatto_nodes,
    grouped_topology,
    grouped_upper_bound,
    subset_vandermonde_objective,
    topology_from_config,
    triangular_diagonals,
    true_eigenvalues,
)
from uavarray.trajectory import check_trajectory as check_trajectory_invariants
from uavarray.trajectory import double_loop_optimize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def check_fekete():
    worst = 0.0
    for K in range(2, 9):
        solution = fekete_points(K)
        if not solution.converged:
            return CheckResult("fekete", False, f"K={K}: {solution.message}")
        worst = max(worst, float(np.max(np.abs(solution.beta - gauss_lobatto_nodes(K)))))
    return CheckResult("fekete", worst <= 1e-8, f"max Gauss-Lobatto deviation {worst:.3g}")


def check_triangular_diagonals(rng):
    worst_qr = worst_product = 0.0
    for _ in range(50):
        N = int(rng.integers(2, 8))
        K = int(rng.integers(1, N + 1))
        eta = np.sort(rng.uniform(-1.0, 1.0, N))
        formula = triangular_diagonals(eta, K, "formula")
        qr = triangular_diagonals(eta, K, "qr")
        worst_qr = max(worst_qr, float(np.max(np.abs(formula - qr) / np.abs(qr))))
        objective = subset_vandermonde_objective(eta, K)
        worst_product = max(worst_product, abs(np.prod(formula) - objective) / objective)
    passed = worst_qr <= 1e-9 and worst_product <= 1e-8
    return CheckResult("triangular_diagonals", passed,
                       f"formula/qr {worst_qr:.3g}, telescoping {worst_product:.3g}")


def check_eigen_asymptotics():
    details = []
    passed = True
    for K in (2, 3, 4):
        eta = gauss_lobatto_nodes(K)
        errors = []
        for nu in (1e-1, 1e-2, 1e-3):
            H_tilde = np.exp(1j * nu * np.outer(ula_grid(K), eta))
            ratio = true_eigenvalues(H_tilde, K) / asymptotic_eigenvalues(eta, K, K, nu, 0.0).lambda_asym
            errors.append(float(np.max(np.abs(ratio - 1.0))))
        # below nu = 1e-2 the smallest eigenvalue sits at the double-precision SVD floor
        passed &= errors[-1] <= 0.01 and errors[0] >= errors[1] and errors[2] <= max(errors[1], 1e-3)
        details.append(f"K={K}: {errors[-1]:.2e}")
    nu = 0.3
    lam = true_eigenvalues(np.exp(1j * nu * np.outer(ula_grid(2), [-1.0, 1.0])))
    closed = np.array([2 + 2 * math.cos(nu), 2 - 2 * math.cos(nu)])
    passed &= bool(np.allclose(lam, closed, rtol=1e-12, atol=1e-14))
    return CheckResult("eigen_asymptotics", bool(passed), ", ".join(details))


def check_grouping_bound(rng):
    passed = True
    fekete = {K: fekete_points(K) for K in range(2, 9)}
    for _ in range(100):
        N = int(rng.integers(2, 9))
        K = int(rng.integers(2, N + 1))
        beta = fekete[K]
        eta = rng.uniform(-1.0, 1.0, N)
        passed &= subset_vandermonde_objective(eta, K) <= grouped_upper_bound(N, K, beta) * (1 + 1e-12)
    for N, K in ((4, 2), (6, 3), (8, 4), (6, 2)):
        beta = fekete[K]
        attained = subset_vandermonde_objective(grouped_topology(N, K, beta), K)
        passed &= math.isclose(attained, grouped_upper_bound(N, K, beta), rel_tol=1e-9)
    return CheckResult("grouping_bound", bool(passed))


def chance_validation_table(config, samples):
    """Empirical Pr(Eve SNR <= xi) at the spectral cap for N = 1, 4, 8 (one CSV row each)."""
    params = ChanceConstraintParams(xi=1.0, kappa=0.99, Q=3, sigmaE2=1.0)
    rows = []
    for N in (1, 4, 8):
        W = np.zeros((N, 1), dtype=complex)
        W[0, 0] = math.sqrt(spectral_cap(params, N))
        p = validate_chance_constraint(W, params, samples, config.rng(offset=20 + N))
        rows.append({"N": N, **chance_validation_row(samples, params, p, binomial_std_error(params.kappa, samples))})
    return pd.DataFrame(rows)


def check_chance_constraint(config, samples):
    closed_form = spectral_cap(ChanceConstraintParams(xi=1.0, kappa=0.99, Q=3, sigmaE2=1.0), 1)
    passed = abs(closed_form - 0.17542) <= 1e-4
    table = chance_validation_table(config, samples)
    passed &= bool(np.all(table["empirical_probability"] >= table["kappa"] - 3 * table["std_error"]))
    details = [f"N=1 cap {closed_form:.5f}"]
    details += [f"N={r.N}: {r.empirical_probability:.4f}" for r in table.itertuples()]
    return CheckResult("chance_constraint", bool(passed), ", ".join(details))


def check_precoder_optimality(rng):
    worst_mrt = 0.0
    sandwich = True
    for _ in range(20):
        N = int(rng.integers(2, 6))
        h = rng.standard_normal((1, N)) + 1j * rng.standard_normal((1, N))
        W, report = solve_precoding_slot(SlotProblem(H=h, gamma=1.0, sigma2=1.0))
        mrt = 1.0 / float(np.sum(np.abs(h) ** 2))
        worst_mrt = max(worst_mrt, abs(report.objective - mrt) / mrt)
    for _ in range(20):
        H = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
        W, report = solve_precoding_slot(SlotProblem(H=H, gamma=2.0, sigma2=1.0))
        zf = zf_precoder(H, 2.0, 1.0).power
        sandwich &= report.ok and report.lower_bound * (1 - 1e-6) <= report.objective <= zf * (1 + 1e-6)
    return CheckResult("precoder_optimality", worst_mrt <= 1e-6 and bool(sandwich), f"MRT deviation {worst_mrt:.2e}")


def check_robust_blocks(rng):
    found = 0
    passed = True
    gamma, sigma2 = 2.0, 1.0
    for _ in range(100):
        if found == 10:
            break
        H = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
        W = 1.5 * zf_precoder(H, gamma, sigma2).W
        model = UncertaintyModel.from_rows(H, 0.05)
        lifted = [np.outer(W[:, k], W[:, k].conj()) for k in range(2)]
        if min(best_slack(lifted, gamma, model, k, sigma2)[1] for k in range(2)) < -1e-9:
            continue
        found += 1
        for k in range(2):
            passed &= worst_case_snr(W, k, model, sigma2, probes=10_000, rng=rng) >= gamma * (1 - 1e-6)
    return CheckResult("robust_blocks", bool(passed) and found == 10, f"{found} certified instances")


def check_trajectory_run(config):
    traj, _, report = double_loop_optimize(config, topology_from_config(config))
    if not report.ok and report.status != "max_iters":
        return CheckResult("trajectory", False, f"{report.status}: {report.cause} at slot {report.slot}")
    problems = check_trajectory_invariants(traj, config)
    history = np.asarray(report.history)
    monotone = bool(np.all(np.diff(history) <= 1e-6 * history[:-1])) if history.size > 1 else True
    if not monotone:
        problems.append("Gamma increased across accepted iterations")
    return CheckResult("trajectory", not problems, "; ".join(problems) or f"Gamma {report.objective:.4g} W")


def check_radiation(config):
    sizes = {kind: hover_array(config, kind).size for kind in ("planar", "cube")}
    if sizes["planar"] != sizes["cube"]:
        return CheckResult("radiation", False, f"unmatched array sizes {sizes}")
    result = radiation_comparison(config)
    frame = result.frame
    bs_x, bs_y = config.bs_position
    gamma_db = 10 * math.log10(config.gamma)
    passed = True
    peaks = {}
    for kind, part in frame.groupby("array"):
        at_bs = part.loc[(part["x"] == bs_x) & (part["y"] == bs_y), "snr_db"]
        passed &= not at_bs.empty and abs(float(at_bs.iloc[0]) - gamma_db) <= 0.5
        peaks[kind] = sidelobe_peak_db(result.__class__(result.sweep_variables, result.metric, part,
                                                        result.replications, result.rng_seed), config)
    passed &= peaks["cube"] <= peaks["planar"]
    return CheckResult("radiation", bool(passed), f"N={sizes['cube']}, sidelobe peaks {peaks}")


def check_capacity_ordering(config):
    frame = capacity_sweep(config, n_values=(4, 8)).frame
    passed = True
    for N, part in frame.groupby("N"):
        at_zero = part[part["phi"] == 0.0]
        nula = at_zero[at_zero["topology"] == "NULA"].set_index("gamma_db")["capacity"]
        ula = at_zero[at_zero["topology"] == "ULA"].set_index("gamma_db")["capacity"]
        passed &= bool(np.all(nula >= ula - 1e-12))
        for (name, phi), curve in part.groupby(["topology", "phi"]):
            base = part[(part["topology"] == name) & (part["phi"] == 0.0)].set_index("gamma_db")["capacity"]
            passed &= bool(np.all(curve.set_index("gamma_db")["capacity"] <= base + 1e-12))
    again = capacity_sweep(config, n_values=(4, 8)).frame
    passed &= frame.equals(again)
    return CheckResult("capacity_ordering", bool(passed))


def run_acceptance(config, include_trajectory=True):
    """Run every acceptance check; returns a DataFrame (name, passed, detail)."""
    rng = config.rng(offset=7)
    checks = [
        check_fekete,
        lambda: check_triangular_diagonals(rng),
        check_eigen_asymptotics,
        lambda: check_grouping_bound(rng),
        lambda: check_chance_constraint(config, config.validation_samples),
        lambda: check_precoder_optimality(rng),
        lambda: check_robust_blocks(rng),
        lambda: check_radiation(config),
        lambda: check_capacity_ordering(config),
    ]
    if include_trajectory:
        checks.append(lambda: check_trajectory_run(config))
    results = []
    for check in checks:
        result = check()
        log = logger.info if result.passed else logger.error
        log("Check %s: %s %s", result.name, "PASS" if result.passed else "FAIL", result.detail)
        results.append(result)
    return pd.DataFrame([r.__dict__ for r in results])
