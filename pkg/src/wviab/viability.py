"""Constraint sets of measures, contingent-cone tests and dyadic viable synthesis."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NotInConstraint, ScenarioError
from .flows import DEFAULT_DT, MeasureTrajectory, fmt
from .inclusions import SetValuedDynamics, Selection, _ctl_repr, _parallel_map, simplex_grid, solve_selection
from .measures import EmpiricalMeasure, TangentVector, moment2, perturb, support_radius

MEMBERSHIP_TOL = 1e-9
# distances below this are floating-point residue of exact membership
DISTANCE_FLOOR = 1e-13


@dataclass(frozen=True)
class ConstraintSet:
    """Closed set Q of measures given through oracles.

    ``distance`` estimates dist_W2(mu; Q); ``project`` (optional) returns a
    nearest point; ``tangent_candidates(nu)`` lists generators whose convex
    combinations approximate the closed convex hull of the contingent cone.
    """

    distance: Callable[[EmpiricalMeasure], float]
    project: Callable[[EmpiricalMeasure], EmpiricalMeasure] | None
    tangent_candidates: Callable[[EmpiricalMeasure], list]
    descriptor: str
    params: dict = field(default_factory=dict)

    def contains(self, mu: EmpiricalMeasure, tol: float = MEMBERSHIP_TOL) -> bool:
        return self.distance(mu) <= tol

    def to_dict(self) -> dict:
        return {"type": self.descriptor, "params": self.params}


def _scale(mu: EmpiricalMeasure, center: np.ndarray, s: float) -> EmpiricalMeasure:
    return EmpiricalMeasure(center + s * (mu.points - center), mu.weights)


def whole_space() -> ConstraintSet:
    return ConstraintSet(lambda mu: 0.0, lambda mu: mu,
                         lambda nu: [TangentVector.on(nu, np.zeros_like(nu.points))], "whole_space")


def m2_ball(c: float) -> ConstraintSet:
    """{M2^2 <= c}; projection by radial scaling is exact since M2 = W2(., delta_0)."""
    radius = math.sqrt(c)

    def distance(mu):
        return max(0.0, moment2(mu) - radius)

    def project(mu):
        m = moment2(mu)
        return mu if m <= radius else _scale(mu, np.zeros(mu.dim), radius / m)

    def candidates(nu):
        return [TangentVector.on(nu, -nu.points), TangentVector.on(nu, np.zeros_like(nu.points))]

    return ConstraintSet(distance, project, candidates, "m2_ball", {"c": c})


def variance_ball(c: float) -> ConstraintSet:
    """{Var <= c}; projection scales about the mean (sqrt(Var) = W2 to the nearest Dirac)."""
    radius = math.sqrt(c)

    def distance(mu):
        return max(0.0, math.sqrt(mu.variance()) - radius)

    def project(mu):
        s = math.sqrt(mu.variance())
        return mu if s <= radius else _scale(mu, mu.mean(), radius / s)

    def candidates(nu):
        out = [TangentVector.on(nu, nu.mean() - nu.points), TangentVector.on(nu, np.zeros_like(nu.points))]
        for k in range(nu.dim):
            e = np.zeros(nu.dim)
            e[k] = 1.0
            out += [TangentVector.on(nu, e), TangentVector.on(nu, -e)]
        return out

    return ConstraintSet(distance, project, candidates, "variance_ball", {"c": c})


def mean_norm_ball(c: float) -> ConstraintSet:
    """{|mean| <= c}; projection translates the cloud."""

    def distance(mu):
        return max(0.0, float(np.linalg.norm(mu.mean())) - c)

    def project(mu):
        m = mu.mean()
        nm = float(np.linalg.norm(m))
        return mu if nm <= c else EmpiricalMeasure(mu.points - (1 - c / nm) * m, mu.weights)

    def candidates(nu):
        return [TangentVector.on(nu, -np.broadcast_to(nu.mean(), nu.points.shape)),
                TangentVector.on(nu, np.zeros_like(nu.points))]

    return ConstraintSet(distance, project, candidates, "mean_norm_ball", {"c": c})


def mean_slice(m0) -> ConstraintSet:
    """{mean = m0}; W2 distance to the slice is |mean - m0| (translation is optimal)."""
    m0 = np.atleast_1d(np.asarray(m0, dtype=float))

    def distance(mu):
        return float(np.linalg.norm(mu.mean() - m0))

    def project(mu):
        return EmpiricalMeasure(mu.points + (m0 - mu.mean()), mu.weights)

    def candidates(nu):
        c = nu.points - nu.mean()
        return [TangentVector.on(nu, np.zeros_like(nu.points)), TangentVector.on(nu, c), TangentVector.on(nu, -c)]

    return ConstraintSet(distance, project, candidates, "mean_slice", {"m0": m0.tolist()})


def from_spec(spec: dict) -> ConstraintSet:
    kind, params = spec.get("type"), spec.get("params", {})
    try:
        if kind == "m2_ball":
            return m2_ball(float(params.get("c", 1.0)))
        if kind == "variance_ball":
            return variance_ball(float(params["c"]))
        if kind == "mean_norm_ball":
            return mean_norm_ball(float(params["c"]))
        if kind == "mean_slice":
            return mean_slice(params["m0"])
        if kind == "whole_space":
            return whole_space()
    except KeyError as exc:
        raise ScenarioError(f"constraint {spec!r} is missing {exc}") from exc
    raise ScenarioError(f"unknown constraint type {kind!r} (epigraph constraints are built from a Lyapunov spec)")


def contingent_test(
    Q: ConstraintSet, nu: EmpiricalMeasure, xi: TangentVector, h0: float = 0.1, K: int = 10,
    abs_threshold: float = 1e-3, rel_factor: float = 0.1,
) -> tuple[list[float], bool]:
    """Ratios dist((Id + h xi)#nu; Q) / h along h = h0 2^-k and a tangency verdict."""
    if Q.distance(nu) > MEMBERSHIP_TOL:
        raise NotInConstraint(f"base measure is at distance {Q.distance(nu)!r} from {Q.descriptor}")
    ratios = []
    for k in range(K + 1):
        h = h0 / 2**k
        dist = Q.distance(perturb(nu, xi, h))
        ratios.append(0.0 if dist <= DISTANCE_FLOOR else dist / h)
    tail, head = ratios[-1], ratios[0]
    return ratios, bool(tail <= abs_threshold and tail <= rel_factor * head)


@dataclass(frozen=True)
class ViabilityReport:
    trajectory: MeasureTrajectory
    g_values: np.ndarray
    gronwall_margin: np.ndarray
    depth_used: int
    status: str
    controls: tuple = ()
    tolerance: float = 0.0
    first_failure: int | None = None
    monitor_violations: tuple = ()

    @property
    def viable(self) -> bool:
        return self.status == "viable"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "depth": self.depth_used,
            "tolerance": self.tolerance,
            "first_failure": self.first_failure,
            "nodes": [float(t) for t in self.trajectory.times],
            "g_values": [float(g) for g in self.g_values],
            "gronwall_margin": [float(g) for g in self.gronwall_margin],
            "controls": [_ctl_repr(c) for c in self.controls],
            "monitor_violations": list(self.monitor_violations),
        }


def gronwall_monitor(report: ViabilityReport, Lambda: float, L: float) -> np.ndarray:
    """Central-difference estimate of g' - (Lambda + L) g at interior nodes."""
    g = np.asarray(report.g_values, dtype=float)
    t = report.trajectory.times
    if len(g) < 3:
        raise ValueError("need at least 3 nodes")
    gdot = (g[2:] - g[:-2]) / (t[2:] - t[:-2])
    return gdot - (Lambda + L) * g[1:-1]


def viability_tolerance(mu0: EmpiricalMeasure) -> float:
    return 1e-3 * (1.0 + support_radius(mu0))


def viable_trajectory(
    dyn: SetValuedDynamics,
    Q: ConstraintSet,
    mu0: EmpiricalMeasure,
    T: float,
    depth: int,
    dt: float = DEFAULT_DT,
    resolution: int = 8,
    t0: float = 0.0,
    tol: float | None = None,
    theta_snap: float | None = None,
    threads: int | None = None,
) -> ViabilityReport:
    """Greedy node-wise viable synthesis on the dyadic grid t_k = t0 + k T / 2^depth.

    Every interval tries the pure controls and the simplex grid of convex
    combinations, keeps the first candidate with the smallest end-of-step
    distance to Q, and never projects the state.
    """
    if Q.distance(mu0) > MEMBERSHIP_TOL:
        raise NotInConstraint(f"initial measure lies outside {Q.descriptor}")
    tol = viability_tolerance(mu0) if tol is None else tol
    theta_snap = tol if theta_snap is None else theta_snap
    combos = simplex_grid(dyn.size, resolution)
    candidates = [int(np.argmax(c)) if c.max() == 1.0 else c for c in combos]
    n = 2**depth
    grid = t0 + T * np.arange(n + 1) / n

    mu, states, g, chosen, violations = mu0, [mu0], [Q.distance(mu0)], [], []
    for k in range(n):
        a, b = grid[k], grid[k + 1]
        trials = _parallel_map(lambda c: dyn.advance(c, a, b, mu, dt), candidates, threads)
        scores = [Q.distance(m) for m in trials]
        best = int(np.argmin(scores))
        mu = trials[best]
        states.append(mu)
        chosen.append(candidates[best])
        g.append(scores[best])
        if Q.project is not None and scores[best] > theta_snap:
            violations.append(k + 1)

    g = np.array(g)
    failing = np.flatnonzero(g > tol)
    status = "viable" if failing.size == 0 else "failed"
    traj = MeasureTrajectory(grid, states, {"selection": Selection(grid, tuple(chosen)).to_dict(), "dt": dt})
    report = ViabilityReport(traj, g, np.zeros(0), depth, status, tuple(chosen), tol,
                             int(failing[0]) if failing.size else None, tuple(violations))
    margin = gronwall_monitor(report, dyn.Lambda, dyn.L) if len(g) >= 3 else np.zeros(0)
    return ViabilityReport(traj, g, margin, depth, status, tuple(chosen), tol,
                           report.first_failure, tuple(violations))


def verify_replay(report: ViabilityReport, dyn: SetValuedDynamics, dt: float = DEFAULT_DT, atol: float = 1e-9) -> bool:
    """Re-integrate the recorded selection and compare with the reported states."""
    sel = Selection(report.trajectory.times, report.controls)
    replay = solve_selection(dyn, sel, report.trajectory.initial, dt)
    return all(a.allclose(b, atol) for a, b in zip(replay.states, report.trajectory.states))


def g_slope(report: ViabilityReport) -> float:
    """Least-squares slope of the node distances against time."""
    return float(np.polyfit(report.trajectory.times, report.g_values, 1)[0])


def report_csv(report: ViabilityReport) -> str:
    lines = ["t,g"] + [f"{fmt(t)},{fmt(v)}" for t, v in zip(report.trajectory.times, report.g_values)]
    return "\n".join(lines) + "\n"
