"""Report formatting and export utilities."""

from pathlib import Path

import numpy as np
import pandas as pd

from uavarray.topology import TopologyVector

FLOAT_FORMAT = "%.17g"


def generate_filename(subcommand, seed, suffix="csv"):
    """Generate an output filename.

    Returns:
        str: Filename like 'optimize_2024.csv'
    """
    safe_name = subcommand.replace(" ", "_").replace("/", "_")
    return f"{safe_name}_{seed}.{suffix}"


def write_csv(frame, path):
    """Write a table with round-trip-exact floats."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def trajectory_to_dataframe(traj):
    """Columns slot, x, y, slot_power_watts; slot 0 is the start point."""
    powers = np.concatenate([[0.0], traj.per_slot_power])
    return pd.DataFrame({
        "slot": np.arange(traj.centers.shape[0]),
        "x": traj.centers[:, 0],
        "y": traj.centers[:, 1],
        "slot_power_watts": powers,
    })


def precoders_to_dataframe(precoders):
    """Columns slot, n, k, re, im (slots numbered from 1)."""
    rows = []
    for slot, W in enumerate(precoders, 1):
        W = W.W if hasattr(W, "W") else np.asarray(W)
        n, k = np.indices(W.shape)
        rows.append(pd.DataFrame({
            "slot": slot,
            "n": n.ravel(),
            "k": k.ravel(),
            "re": W.real.ravel(),
            "im": W.imag.ravel(),
        }))
    if not rows:
        return pd.DataFrame(columns=["slot", "n", "k", "re", "im"])
    return pd.concat(rows, ignore_index=True)


def channel_to_dataframe(channel):
    """Columns m, n, re, im."""
    H = channel.entries if hasattr(channel, "entries") else np.asarray(channel)
    m, n = np.indices(H.shape)
    return pd.DataFrame({"m": m.ravel(), "n": n.ravel(), "re": H.real.ravel(), "im": H.imag.ravel()})


def topology_to_dataframe(topology, axis=None):
    """Columns index, eta (plus axis for per-axis topologies)."""
    if isinstance(topology, (tuple, list)):
        names = "xyz"
        return pd.concat(
            [topology_to_dataframe(t, names[i]) for i, t in enumerate(topology)], ignore_index=True,
        )
    eta = topology.eta if hasattr(topology, "eta") else np.asarray(topology)
    frame = pd.DataFrame({"index": np.arange(eta.size), "eta": eta})
    if axis is not None:
        frame.insert(0, "axis", axis)
    return frame


def read_topology_csv(path):
    """Load a topology written by ``topology_to_dataframe``.

    Per-axis files return a tuple of TopologyVectors ordered x, y[, z].
    """
    frame = pd.read_csv(path)
    if "eta" not in frame.columns:
        raise ValueError(f"{path}: missing 'eta' column")
    if "axis" in frame.columns:
        return tuple(
            TopologyVector.from_values(group.sort_values("index")["eta"].to_numpy())
            for _, group in frame.groupby("axis", sort=True)
        )
    if "index" in frame.columns:
        frame = frame.sort_values("index")
    return TopologyVector.from_values(frame["eta"].to_numpy())


def chance_validation_row(samples, params, probability, std_error):
    return {
        "trial_count": samples,
        "xi": params.xi,
        "kappa": params.kappa,
        "empirical_probability": probability,
        "std_error": std_error,
    }


def format_fekete_report(solution):
    """Fekete solution as structured text."""
    report = solution.method_report
    lines = [
        "[fekete]",
        f"K = {solution.beta.size}",
        f"converged = {str(solution.converged).lower()}",
        "beta = [" + ", ".join(f"{b:.17g}" for b in solution.beta) + "]",
        f"objective = {solution.objective:.17g}",
    ]
    for key in sorted(report):
        value = report[key]
        lines.append(f"{key} = {value:.17g}" if isinstance(value, float) else f"{key} = {value}")
    if solution.message:
        lines.append(f'message = "{solution.message}"')
    return "\n".join(lines) + "\n"


def format_solver_log(report):
    """Outer-loop log as structured text: one line per accepted iteration."""
    lines = [
        "[solver]",
        f"status = {report.status}",
        f"iterations = {report.iterations}",
        f"objective_watts = {report.objective:.17g}",
        f"lower_bound_watts = {report.lower_bound:.17g}",
        f"max_constraint_violation = {report.max_constraint_violation:.17g}",
    ]
    if report.cause:
        lines.append(f"cause = {report.cause}")
    if report.slot is not None:
        lines.append(f"slot = {report.slot}")
    if report.message:
        lines.append(f'message = "{report.message}"')
    lines.append("")
    lines.append("[history]")
    for s, gamma in enumerate(report.history, 1):
        lines.append(f"iteration {s}: Gamma = {gamma:.17g}")
    return "\n".join(lines) + "\n"
