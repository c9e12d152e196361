"""Lyapunov functionals on measures and exponentially decaying trajectories.

Decay is obtained as a viability problem for the lifted system on R^{d+1}:
atoms carry an extra coordinate y that decays at rate rho, and the state must
stay in the epigraph {mu x delta_y : y >= W(mu)}.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, ScenarioError
from .fields import FieldEntry
from .flows import DEFAULT_DT, MeasureTrajectory, fmt
from .inclusions import SetValuedDynamics
from .measures import EmpiricalMeasure, TangentVector, perturb, w2
from .viability import ConstraintSet, ViabilityReport, viable_trajectory

DIRAC_SPREAD_TOL = 1e-10


@dataclass(frozen=True)
class LyapunovFunctional:
    """W : measures -> [0, inf) with decay rate rho.

    ``domain`` returns False where W is +inf; such points are never encoded as
    large floats.
    """

    fn: Callable[[EmpiricalMeasure], float]
    rho: float
    descriptor: str = "custom"
    domain: Callable[[EmpiricalMeasure], bool] | None = None
    params: dict = field(default_factory=dict)

    def in_domain(self, mu: EmpiricalMeasure) -> bool:
        return self.domain is None or bool(self.domain(mu))

    def value(self, mu: EmpiricalMeasure) -> float:
        if not self.in_domain(mu):
            raise DomainError(f"{self.descriptor} is infinite at this measure")
        return float(self.fn(mu))

    __call__ = value

    def to_dict(self) -> dict:
        return {"type": self.descriptor, "rho": self.rho, **self.params}


def m2sq(rho: float) -> LyapunovFunctional:
    return LyapunovFunctional(lambda mu: float(mu.weights @ np.einsum("ij,ij->i", mu.points, mu.points)),
                              rho, "m2sq")


def variance(rho: float) -> LyapunovFunctional:
    return LyapunovFunctional(lambda mu: mu.variance(), rho, "variance")


def w2sq_to_target(target: EmpiricalMeasure, rho: float) -> LyapunovFunctional:
    return LyapunovFunctional(lambda mu: w2(mu, target) ** 2, rho, "w2sq_to_target",
                              params={"target": target.to_dict()})


def from_spec(spec: dict, dim: int) -> LyapunovFunctional:
    kind = spec.get("type")
    rho = float(spec.get("rho", 1.0))
    if kind == "m2sq":
        return m2sq(rho)
    if kind == "variance":
        return variance(rho)
    if kind == "w2sq_to_target":
        if "target" in spec:
            target = EmpiricalMeasure.from_dict(spec["target"])
        else:
            target = EmpiricalMeasure.dirac(np.zeros(dim))
        return w2sq_to_target(target, rho)
    raise ScenarioError(f"unknown Lyapunov type {kind!r}")


def directional_lower_derivative(
    W: LyapunovFunctional, mu: EmpiricalMeasure, xi: TangentVector, h0: float = 1e-2, K: int = 10
) -> float:
    """min_k (W((Id + h_k xi)#mu) - W(mu)) / h_k over h_k = h0 2^-k.

    The pushforward curve is one admissible family in the liminf, so this is
    an upper estimate of the lower derivative.
    """
    base = W.value(mu)
    quotients = []
    for k in range(K + 1):
        h = h0 / 2**k
        moved = perturb(mu, xi, h)
        if W.in_domain(moved):
            quotients.append((W.fn(moved) - base) / h)
    if not quotients:
        raise DomainError("every probe left the domain of W")
    return float(min(quotients))


def lift(mu: EmpiricalMeasure, y: float) -> EmpiricalMeasure:
    """mu x delta_y as a cloud in R^{d+1}."""
    return EmpiricalMeasure(np.hstack([mu.points, np.full((mu.n, 1), float(y))]), mu.weights)


def marginal(bmu: EmpiricalMeasure) -> EmpiricalMeasure:
    """Projection onto the first d coordinates (atoms kept, no merging)."""
    return EmpiricalMeasure._trusted(bmu.points[:, :-1], bmu.weights)


def envelope_coordinate(bmu: EmpiricalMeasure) -> float:
    return float(bmu.weights @ bmu.points[:, -1])


def dirac_spread(bmu: EmpiricalMeasure) -> float:
    y = bmu.points[:, -1]
    return float(y.max() - y.min())


def extend_system(dyn: SetValuedDynamics, W: LyapunovFunctional) -> SetValuedDynamics:
    """Lifted dynamics (v, -rho * int y) with v admissible for the x-marginal."""
    rho = W.rho

    def lifted(entry: FieldEntry) -> FieldEntry:
        def fn(t, Z, bmu):
            base = marginal(bmu)
            vx = entry(t, Z[:, :-1], base)
            # int y dmu; atoms share y so this also re-synchronizes any drift
            vy = np.full((Z.shape[0], 1), -rho * envelope_coordinate(bmu))
            return np.hstack([vx, vy])

        return FieldEntry(fn, entry.M + rho, entry.Lambda, entry.L + rho, True,
                          spec={"type": "lifted", "base": entry.spec, "rho": rho})

    return SetValuedDynamics(tuple(lifted(f) for f in dyn.family),
                             M=dyn.M + rho, Lambda=dyn.Lambda, L=dyn.L + rho, labels=dyn.labels)


def epigraph_constraint(W: LyapunovFunctional) -> ConstraintSet:
    """{mu x delta_y : y >= W(mu)} in R^{d+1}.

    Distance is measured by moving only the y-coordinate: the y-spread (distance
    to product form) plus max(0, W(mu) - y).
    """

    def distance(bmu):
        y = bmu.points[:, -1]
        ybar = envelope_coordinate(bmu)
        # drift below the Dirac tolerance is re-synchronized to the mean, not penalized
        spread = 0.0 if dirac_spread(bmu) <= DIRAC_SPREAD_TOL else math.sqrt(float(bmu.weights @ (y - ybar) ** 2))
        return spread + max(0.0, W.value(marginal(bmu)) - ybar)

    def project(bmu):
        base = EmpiricalMeasure(bmu.points[:, :-1], bmu.weights)
        return lift(base, max(envelope_coordinate(bmu), W.value(base)))

    def candidates(bnu):
        up = np.zeros_like(bnu.points)
        up[:, -1] = 1.0
        return [TangentVector.on(bnu, np.zeros_like(bnu.points)), TangentVector.on(bnu, up)]

    return ConstraintSet(distance, project, candidates, "epigraph", {"lyapunov": W.to_dict()})


def epigraph_tangent(W: LyapunovFunctional, mu: EmpiricalMeasure, v: np.ndarray) -> TangentVector:
    """The lifted direction (v, -rho y) at mu x delta_{W(mu)}."""
    y = W.value(mu)
    bmu = lift(mu, y)
    return TangentVector.on(bmu, np.hstack([v, np.full((mu.n, 1), -W.rho * y)]))


@dataclass(frozen=True)
class DecayCertificate:
    trajectory: MeasureTrajectory
    w_values: np.ndarray
    envelope: np.ndarray
    slack: np.ndarray
    status: str
    tolerance: float
    y_values: np.ndarray
    first_violation: int | None = None
    reports: tuple = ()

    @property
    def certified(self) -> bool:
        return self.status == "certified"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "tolerance": self.tolerance,
            "first_violation": self.first_violation,
            "t": [float(t) for t in self.trajectory.times],
            "W": [float(x) for x in self.w_values],
            "envelope": [float(x) for x in self.envelope],
            "slack": [float(x) for x in self.slack],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "W", "envelope", "slack"])
        for row in zip(self.trajectory.times, self.w_values, self.envelope, self.slack):
            writer.writerow([fmt(x) for x in row])
        return buf.getvalue()


def decay_tolerance(w0: float) -> float:
    return 1e-3 * max(1.0, w0)


def stable_trajectory(
    dyn: SetValuedDynamics,
    W: LyapunovFunctional,
    mu0: EmpiricalMeasure,
    T: float,
    depth: int,
    dt: float = DEFAULT_DT,
    window: float | None = None,
    resolution: int = 8,
    threads: int | None = None,
) -> DecayCertificate:
    """Trajectory with W(mu(t)) <= W(mu0) exp(-rho t), synthesized window by window.

    Each window of length ``window`` (default: the whole horizon) is a viable
    synthesis at dyadic ``depth`` for the lifted system in the epigraph, with
    the envelope coordinate restarted at W of the current state.
    """
    w0 = W.value(mu0)
    ext = extend_system(dyn, W)
    Q = epigraph_constraint(W)
    window = T if window is None else window
    n_windows = max(1, math.ceil(T / window - 1e-9))
    times, states, ys, reports = [0.0], [mu0], [w0], []
    mu, t0 = mu0, 0.0
    for i in range(n_windows):
        length = min(window, T - t0)
        report = viable_trajectory(ext, Q, lift(mu, W.value(mu)), length, depth, dt,
                                   resolution=resolution, t0=t0, tol=math.inf, threads=threads)
        reports.append(report)
        for t, s in zip(report.trajectory.times[1:], report.trajectory.states[1:]):
            times.append(float(t))
            states.append(EmpiricalMeasure._trusted(s.points[:, :-1], s.weights))
            ys.append(envelope_coordinate(s))
        mu = states[-1]
        t0 = times[-1]
    times = np.array(times)
    w_values = np.array([W.value(s) for s in states])
    envelope = w0 * np.exp(-W.rho * times)
    slack = envelope - w_values
    tol = decay_tolerance(w0)
    bad = np.flatnonzero(slack < -tol)
    traj = MeasureTrajectory(times, states, {"lyapunov": W.to_dict(), "windows": n_windows})
    return DecayCertificate(traj, w_values, envelope, slack, "certified" if bad.size == 0 else "violated",
                            tol, np.array(ys), int(bad[0]) if bad.size else None, tuple(reports))
