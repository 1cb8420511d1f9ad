"""Array-center trajectory design: no-fly linearization, SCA step and the double loop."""

import logging
import math
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from uavarray.channel import exact_channel, served_streams
from uavarray.geometry import array_from_config, bs_geometry_from_positions, slot_schedule
from uavarray.optimizer import (
    STATUS_INFEASIBLE,
    STATUS_MAX_ITERS,
    STATUS_OPTIMAL,
    PrecodingMatrix,
    SlotProblem,
    SolverReport,
    solve_precoding_slot,
    total_power,
)
from uavarray.security import ChanceConstraintParams, spectral_cap
from uavarray.topology import fekete_receiver_grid

logger = logging.getLogger(__name__)

ZONE_MARGIN = 1e-4
SPEED_MARGIN = 1e-6
REACH_MARGIN = 1e-3
INCREASE_TOL = 1e-6
PATH_INFLATION = 1e-3


@dataclass(frozen=True)
class Halfspace:
    """Convex restriction normal . p >= offset of a no-fly constraint."""

    normal: np.ndarray
    offset: float

    def value(self, p):
        return float(self.normal @ np.asarray(p, dtype=float) - self.offset)


def linearize_no_fly(p_prev, zone):
    """First-order restriction of ||p - chi||^2 >= radius^2 around p_prev.

    ||p_prev - chi||^2 + 2 (p_prev - chi)^T (p - p_prev) >= radius^2.

    Raises:
        ValueError: p_prev coincides with the zone center; perturb the
            initialization.
    """
    p_prev = np.asarray(p_prev, dtype=float)
    chi = np.asarray(zone.center, dtype=float)
    gap = p_prev - chi
    if not np.any(gap):
        raise ValueError("linearization point equals the no-fly center; perturb initialization")
    normal = 2.0 * gap
    offset = zone.radius**2 - float(gap @ gap) + float(normal @ p_prev)
    return Halfspace(normal=normal, offset=offset)


@dataclass(frozen=True)
class Trajectory:
    """Array-center positions for slots 0..I and the transmit power per slot 1..I."""

    centers: np.ndarray
    per_slot_power: np.ndarray
    total_Gamma: float
    transmit: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        centers = np.array(self.centers, dtype=float).reshape(-1, 2)
        powers = np.array(self.per_slot_power, dtype=float).reshape(-1)
        transmit = np.ones(powers.size, dtype=bool) if self.transmit is None else np.asarray(self.transmit, bool)
        if powers.size != centers.shape[0] - 1:
            raise ValueError("one power value per slot (I) and I+1 centers are required")
        for arr in (centers, powers, transmit):
            arr.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "per_slot_power", powers)
        object.__setattr__(self, "transmit", transmit)

    @property
    def I(self):
        return self.per_slot_power.size

    @classmethod
    def straight_line(cls, config):
        """Constant-speed line from d_I to d_F, nudged off any zone center."""
        t = np.linspace(0.0, 1.0, config.I + 1)[:, None]
        start, end = np.asarray(config.d_I), np.asarray(config.d_F)
        centers = start + t * (end - start)
        direction = end - start
        normal = np.array([-direction[1], direction[0]]) / max(np.linalg.norm(direction), 1e-12)
        for zone in config.no_fly_zones:
            hits = np.all(np.isclose(centers, zone.center, atol=1e-9), axis=1)
            centers[hits] += 1e-3 * normal
        return cls(centers=centers, per_slot_power=np.zeros(config.I), total_Gamma=0.0)


def check_trajectory(traj, config, tol=1e-6):
    """Endpoint, speed and clearance violations of a trajectory (empty when valid)."""
    problems = []
    if not np.allclose(traj.centers[0], config.d_I, atol=tol):
        problems.append("centers[0] != d_I")
    if not np.allclose(traj.centers[-1], config.d_F, atol=tol):
        problems.append("centers[I] != d_F")
    steps = np.linalg.norm(np.diff(traj.centers, axis=0), axis=1)
    if np.any(steps > config.step_limit * (1.0 + tol)):
        problems.append(f"step {steps.max():.6g} m exceeds {config.step_limit:.6g} m")
    for j, zone in enumerate(config.no_fly_zones):
        clearance = np.linalg.norm(traj.centers - np.asarray(zone.center), axis=1)
        if np.any(clearance < zone.radius - tol):
            problems.append(f"no_fly_zones[{j}] entered (clearance {clearance.min():.6g} m)")
    return problems


@dataclass(frozen=True)
class PowerSurrogate:
    """Path-loss-scaled slot power: unit_gain_power * (4 pi f_c d(p) / c)^2."""

    target: tuple
    altitude: float
    unit_gain_power: float
    f_c: float
    c: float

    @classmethod
    def from_slot(cls, config, center, slot_power):
        d = math.hypot(*(np.asarray(center) - np.asarray(config.bs_position)), config.altitude)
        gain = (4.0 * math.pi * config.f_c * d / config.c) ** 2
        return cls(config.bs_position, config.altitude, slot_power / gain, config.f_c, config.c)

    def __call__(self, p):
        d = math.hypot(*(np.asarray(p) - np.asarray(self.target)), self.altitude)
        return self.unit_gain_power * (4.0 * math.pi * self.f_c * d / self.c) ** 2


def slot_surrogates(traj, config):
    """PowerSurrogate of every slot 1..I built from an accepted trajectory."""
    return [PowerSurrogate.from_slot(config, traj.centers[i], traj.per_slot_power[i - 1])
            for i in range(1, config.I + 1)]


def _slot_weights(surrogates, phases):
    u = np.array([s.unit_gain_power if phase.transmit else 0.0 for s, phase in zip(surrogates, phases)])
    top = float(u.max()) if u.size else 0.0
    if top <= 0.0:
        return np.array([1.0 if phase.transmit else 0.0 for phase in phases])
    return u / top


def _solve_plan(prev, weights, targets, anchors, phases, margin, config):
    count = len(phases)
    P = cp.Variable((count, 2))
    chain = cp.vstack([prev.reshape(1, 2), P])
    constraints = [
        cp.norm(chain[1:] - chain[:-1], 2, axis=1) <= config.step_limit * (1.0 - SPEED_MARGIN),
        P[count - 1] == np.asarray(config.d_F, dtype=float),
    ]
    constraints += [P[j] == chain[j] for j, phase in enumerate(phases) if not phase.transmit]
    for zone in config.no_fly_zones:
        halfspaces = [linearize_no_fly(a, zone) for a in anchors]
        normals = np.array([h.normal for h in halfspaces])
        offsets = np.array([h.offset + margin * float(np.linalg.norm(h.normal)) for h in halfspaces])
        constraints.append(cp.sum(cp.multiply(normals, P), axis=1) >= offsets)
    objective = cp.sum(cp.multiply(weights, cp.sum(cp.square(P - targets), axis=1)))
    problem = cp.Problem(cp.Minimize(objective), constraints)
    try:
        problem.solve(solver="CLARABEL")
    except cp.error.SolverError as e:
        logger.warning("Trajectory plan solver failed: %s", e)
        return None
    if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        return None
    return np.asarray(P.value, dtype=float)


def plan_centers(prev_traj, config, surrogates, schedule=None, start=1, previous_center=None):
    """Place the centers of slots start..I jointly.

    Minimizes sum_j w_j ||p_j - BS||^2, with w_j the normalized unit-gain power
    of slot j (zero on repositioning slots), subject to the per-slot speed
    limit, p_I = d_F, p_j = p_{j-1} on repositioning slots and every no-fly
    halfspace linearized at the previous iterate's center of the same slot.
    Reaching d_F around the zones is part of the joint constraints. When the
    margined halfspaces leave no room the plan is retried without margin.

    Returns:
        (I - start + 1, 2) array of centers, or None when infeasible.
    """
    schedule = slot_schedule(config) if schedule is None else schedule
    prev = np.asarray(prev_traj.centers[start - 1] if previous_center is None else previous_center, dtype=float)
    phases = schedule[start - 1:]
    weights = _slot_weights(surrogates[start - 1:], phases)
    targets = np.tile(np.asarray(config.bs_position, dtype=float), (len(phases), 1))
    anchors = prev_traj.centers[start:]
    plan = _solve_plan(prev, weights, targets, anchors, phases, ZONE_MARGIN, config)
    if plan is None and config.no_fly_zones:
        logger.warning("Slots %d..%d: margined no-fly halfspaces infeasible; retrying without margin",
                       start, config.I)
        plan = _solve_plan(prev, weights, targets, anchors, phases, 0.0, config)
    return plan


def _plan_failure(prev, slot_i, phases, config):
    moving = sum(phase.transmit for phase in phases)
    reach = np.linalg.norm(prev - np.asarray(config.d_F)) > moving * config.step_limit
    cause = "reachability" if reach or not config.no_fly_zones else "no_fly_zone"
    return SolverReport(STATUS_INFEASIBLE, math.nan, cause=cause, slot=slot_i,
                        message=f"no feasible centers for slots {slot_i}..{config.I}")


def trajectory_step(prev_traj, slot_i, config, surrogate, previous_center=None, schedule=None):
    """Next array center for slot i.

    The remaining slots i..I are planned jointly (``plan_centers``) with
    ``surrogate`` weighting slot i and the previous iterate's surrogates the
    others; the first planned center is returned. A repositioning slot returns
    the previous center.

    Args:
        prev_traj: Trajectory of the previous outer iteration.
        slot_i: Slot index in 1..I.
        config: ScenarioConfig.
        surrogate: PowerSurrogate of the slot.
        previous_center: Center of slot i-1 in the current sweep; defaults to
            the previous iterate's.
        schedule: Slot schedule; defaults to ``slot_schedule(config)``.

    Returns:
        (2-D point, SolverReport).
    """
    if not 1 <= slot_i <= config.I:
        raise ValueError(f"slot_i must lie in 1..{config.I}")
    schedule = slot_schedule(config) if schedule is None else schedule
    prev = np.asarray(prev_traj.centers[slot_i - 1] if previous_center is None else previous_center, dtype=float)
    surrogates = slot_surrogates(prev_traj, config)
    surrogates[slot_i - 1] = surrogate
    plan = plan_centers(prev_traj, config, surrogates, schedule, slot_i, prev)
    if plan is None:
        return prev, _plan_failure(prev, slot_i, schedule[slot_i - 1:], config)
    return plan[0], SolverReport(STATUS_OPTIMAL, float(surrogate(plan[0])), slot=slot_i)


def initial_trajectory(config, schedule=None, samples=4000):
    """Zone-clearing start path flown at constant speed on the moving slots.

    The segment d_I -> d_F is sampled densely; samples inside an inflated zone
    are pushed sideways onto its boundary on the side the segment passes, so
    each crossing becomes an arc. Repositioning slots hold their position.

    Returns:
        Trajectory with zero slot powers, or None when the path is longer than
        the moving slots can fly.
    """
    schedule = slot_schedule(config) if schedule is None else schedule
    start, end = np.asarray(config.d_I, dtype=float), np.asarray(config.d_F, dtype=float)
    direction = end - start
    length = float(np.linalg.norm(direction))
    u = direction / length if length > 0 else np.array([1.0, 0.0])
    side = np.array([-u[1], u[0]])
    path = start + np.linspace(0.0, 1.0, samples)[:, None] * direction
    for zone in config.no_fly_zones:
        chi = np.asarray(zone.center, dtype=float)
        radius = zone.radius + PATH_INFLATION * (1.0 + zone.radius)
        along = (path - chi) @ u
        across = (path - chi) @ side
        inside = along**2 + across**2 < radius**2
        sign = np.where(across >= 0.0, 1.0, -1.0)
        lifted = sign * np.sqrt(np.maximum(radius**2 - along**2, 0.0))
        path[inside] = chi + along[inside, None] * u + lifted[inside, None] * side

    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(path, axis=0), axis=1))])
    moving = np.array([phase.transmit for phase in schedule], dtype=float)
    if arc[-1] > moving.sum() * config.step_limit * (1.0 - REACH_MARGIN):
        return None
    if arc[-1] > 0.0:
        progress = np.concatenate([[0.0], np.cumsum(moving) / moving.sum()]) * arc[-1]
        centers = np.column_stack([np.interp(progress, arc, path[:, 0]), np.interp(progress, arc, path[:, 1])])
    else:
        centers = np.tile(start, (config.I + 1, 1))
    centers[0], centers[-1] = start, end
    return Trajectory(centers=centers, per_slot_power=np.zeros(config.I), total_Gamma=0.0,
                      transmit=moving.astype(bool))


def _topology_axes(topology):
    if isinstance(topology, (tuple, list)):
        axes = [t.eta if hasattr(t, "eta") else np.asarray(t) for t in topology]
    else:
        axes = [topology.eta if hasattr(topology, "eta") else np.asarray(topology)]
    return axes + [None] * (3 - len(axes))


def slot_rows(config, topology, center_xy, phi, receive=None):
    """Served stream rows (K x N) for the array centered above center_xy."""
    eta, eta_y, eta_z = _topology_axes(topology)
    array = array_from_config(
        config, eta, center=(center_xy[0], center_xy[1], config.altitude), phi=phi, eta_y=eta_y, eta_z=eta_z,
    )
    bs = bs_geometry_from_positions(center_xy, config.altitude, config.bs_position, config, u=receive)
    return served_streams(exact_channel(array, bs, config), config.K, config.combiner)


def receive_positions(config):
    """Fekete receive grid when enabled, else None (ULA)."""
    if config.fekete_receiver and config.bs_kind == "linear":
        return fekete_receiver_grid(config.n_bs, config.K)
    return None


@dataclass
class _Sweep:
    trajectory: Trajectory = None
    precoders: list = field(default_factory=list)
    lower_bound: float = 0.0
    violation: float = 0.0
    failure: SolverReport = None


def _precode(centers, config, topology, schedule, cap, receive, tol):
    """Per-slot precoding along fixed centers (zero precoders on repositioning slots)."""
    precoders, powers = [], []
    lower_bound = violation = 0.0
    n = config.n_uav
    for i in range(1, config.I + 1):
        phase = schedule[i - 1]
        if not phase.transmit:
            precoders.append(PrecodingMatrix.zeros(n, config.K))
            powers.append(0.0)
            continue
        rows = slot_rows(config, topology, centers[i], phase.phi, receive)
        problem = SlotProblem(H=rows, gamma=config.gamma, sigma2=config.sigma2, spectral_cap=cap,
                              P_max=config.P_max, previous_center=tuple(centers[i - 1]),
                              speed_limit=config.step_limit)
        W, report = solve_precoding_slot(problem, tol)
        if not report.ok:
            return _Sweep(failure=SolverReport(
                STATUS_INFEASIBLE, math.nan, cause=report.cause, slot=i, message=report.message,
            ))
        precoders.append(W)
        powers.append(report.objective)
        lower_bound += report.lower_bound
        violation = max(violation, report.max_constraint_violation)

    traj = Trajectory(
        centers=np.asarray(centers),
        per_slot_power=np.array(powers),
        total_Gamma=total_power(precoders),
        transmit=np.array([s.transmit for s in schedule]),
    )
    return _Sweep(trajectory=traj, precoders=precoders, lower_bound=lower_bound, violation=violation)


def _sweep(prev_traj, config, topology, schedule, cap, receive, tol):
    plan = plan_centers(prev_traj, config, slot_surrogates(prev_traj, config), schedule)
    if plan is None:
        return _Sweep(failure=_plan_failure(np.asarray(config.d_I, dtype=float), 1, schedule, config))
    centers = np.vstack([np.asarray(config.d_I, dtype=float), plan])
    return _precode(centers, config, topology, schedule, cap, receive, tol)


def _infeasible(traj, failure):
    return traj, [], SolverReport(
        STATUS_INFEASIBLE, math.nan, cause=failure.cause, slot=failure.slot,
        message=failure.message,
    )


def double_loop_optimize(config, topology, tol=None):
    """Alternate per-slot precoding and trajectory updates until the centers settle.

    The start path clears every zone (``initial_trajectory``) and is precoded
    slot by slot. Each outer iteration then re-plans all centers against the
    power surrogates of the last accepted iterate (``plan_centers``) and
    precodes every slot at its new center. The loop stops when
    max_i ||p^(s)[i] - p^(s-1)[i]||^2 falls below epsilon_out, when Gamma would
    increase, or after max_outer iterations. A failed re-plan or slot solve
    after the start path keeps the best accepted iterate with status max_iters.

    Args:
        config: ScenarioConfig.
        topology: TopologyVector, or per-axis TopologyVectors for planar/cube arrays.
        tol: Inner solver tolerance; defaults to config.inner_tol.

    Returns:
        (Trajectory, list of PrecodingMatrix, SolverReport). ``history`` on the
        report holds Gamma of the start path and of every accepted iteration.
    """
    tol = config.inner_tol if tol is None else tol
    schedule = slot_schedule(config)
    cap = spectral_cap(ChanceConstraintParams.from_config(config), config.n_uav)
    receive = receive_positions(config)
    line = Trajectory.straight_line(config)

    moving = sum(phase.transmit for phase in schedule)
    span = math.dist(config.d_I, config.d_F)
    budget = moving * config.step_limit
    if span > budget * (1.0 - REACH_MARGIN):
        return _infeasible(line, SolverReport(
            STATUS_INFEASIBLE, math.nan, cause="reachability", slot=0,
            message=f"d_F is {span:.6g} m away but at most {budget:.6g} m can be flown",
        ))
    start = initial_trajectory(config, schedule)
    if start is None:
        return _infeasible(line, SolverReport(
            STATUS_INFEASIBLE, math.nan, cause="reachability", slot=0,
            message=f"the detour around the no-fly zones exceeds the {budget:.6g} m that can be flown",
        ))
    problems = check_trajectory(start, config)
    if problems:
        return _infeasible(start, SolverReport(
            STATUS_INFEASIBLE, math.nan, cause="no_fly_zone", slot=0, message="; ".join(problems),
        ))

    best = _precode(start.centers, config, topology, schedule, cap, receive, tol)
    if best.failure is not None:
        logger.error("Start path infeasible at slot %s: %s", best.failure.slot, best.failure.cause)
        return _infeasible(start, best.failure)
    history = [best.trajectory.total_Gamma]
    logger.info("Start path: Gamma = %.6g W", history[0])

    status, message = STATUS_MAX_ITERS, f"no convergence within {config.max_outer} outer iterations"
    iterations = 0
    for s in range(1, config.max_outer + 1):
        iterations = s
        sweep = _sweep(best.trajectory, config, topology, schedule, cap, receive, tol)
        if sweep.failure is not None:
            failure = sweep.failure
            message = (f"outer iteration {s} failed at slot {failure.slot} ({failure.cause}); "
                       "best iterate kept")
            logger.warning(message)
            break

        gamma_s = sweep.trajectory.total_Gamma
        logger.info("Outer iteration %d: Gamma = %.6g W", s, gamma_s)
        if gamma_s > best.trajectory.total_Gamma * (1.0 + INCREASE_TOL):
            status, message = STATUS_OPTIMAL, f"Gamma increased at iteration {s}; best iterate kept"
            logger.info(message)
            break

        move = float(np.max(np.sum((sweep.trajectory.centers - best.trajectory.centers) ** 2, axis=1)))
        history.append(gamma_s)
        best = sweep
        if move < config.epsilon_out:
            status, message = STATUS_OPTIMAL, f"converged after {s} iteration(s)"
            break

    report = SolverReport(
        status=status,
        objective=best.trajectory.total_Gamma,
        iterations=iterations,
        max_constraint_violation=best.violation,
        lower_bound=best.lower_bound,
        message=message,
        history=tuple(history),
    )
    logger.info("Double loop finished: %s (Gamma = %.6g W)", message, report.objective)
    return best.trajectory, best.precoders, report
