"""Velocity fields, RK4 characteristic flows and continuity-equation solutions.

A continuity equation driven by a Lipschitz field is solved by moving every
atom along the characteristic ODE; weights never change, so the trajectory is
the pushforward of the initial cloud by the flow map.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import FieldAuditError, NumericalError
from .measures import EmpiricalMeasure, moment2, support_radius

DEFAULT_DT = 1e-2


@dataclass(frozen=True)
class VelocityField:
    """Time-dependent field v(t, x) with |v| <= M (1 + |x|) and Lip(v(t)) <= Lambda.

    ``fn`` is evaluated row-wise: ``fn(t, X)`` with X of shape (n, d) returns (n, d).
    """

    fn: Callable[[float, np.ndarray], np.ndarray]
    sublinearity_const: float
    lipschitz_const: float
    name: str = "field"

    def __call__(self, t: float, x) -> np.ndarray:
        X = np.asarray(x, dtype=float)
        single = X.ndim == 1
        out = np.asarray(self.fn(t, np.atleast_2d(X)), dtype=float)
        return out[0] if single else out

    def audit(self, dim: int, radius: float = 5.0, t_range=(0.0, 1.0), n_samples: int = 256, seed: int = 0) -> None:
        """Spot-check the declared constants on random samples; raise FieldAuditError on violation."""
        rng = np.random.default_rng(seed)
        ts = rng.uniform(*t_range, size=n_samples)
        X = rng.uniform(-radius, radius, size=(n_samples, dim))
        Y = X + rng.normal(scale=radius / 10, size=X.shape)
        tol = 1e-9
        for t, x, y in zip(ts, X, Y):
            vx, vy = self(t, x), self(t, y)
            if np.linalg.norm(vx) > self.sublinearity_const * (1 + np.linalg.norm(x)) + tol:
                raise FieldAuditError(f"{self.name}: |v({t}, {x})| exceeds M(1+|x|)")
            if np.linalg.norm(vx - vy) > self.lipschitz_const * np.linalg.norm(x - y) + tol:
                raise FieldAuditError(f"{self.name}: Lipschitz bound violated near {x}")


@dataclass(frozen=True)
class MeasureTrajectory:
    """States on an increasing time grid; atom count and weights are constant."""

    times: np.ndarray
    states: tuple
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or len(times) != len(self.states) or len(times) == 0:
            raise ValueError("times and states must be non-empty and of equal length")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        dims = {s.dim for s in self.states}
        counts = {s.n for s in self.states}
        if len(dims) != 1 or len(counts) != 1:
            raise ValueError("all states must share dimension and atom count")
        w0 = self.states[0].weights
        if any(s.weights is not w0 and not np.array_equal(s.weights, w0) for s in self.states):
            raise ValueError("weights must not change along a trajectory")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", tuple(self.states))

    @property
    def initial(self) -> EmpiricalMeasure:
        return self.states[0]

    @property
    def final(self) -> EmpiricalMeasure:
        return self.states[-1]

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > tol:
            raise KeyError(f"t={t} is not a node of this trajectory")
        return k

    def at(self, t: float) -> EmpiricalMeasure:
        return self.states[self.index_of(t)]

    def points(self) -> np.ndarray:
        return np.stack([s.points for s in self.states])

    def to_csv(self, path=None) -> str:
        text = trajectory_csv(self)
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def fmt(x: float) -> str:
    """Shortest round-trip decimal form; locale independent."""
    return repr(float(x))


def trajectory_csv(traj: MeasureTrajectory) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    d = traj.initial.dim
    writer.writerow(["t", "atom_id"] + [f"x_{k}" for k in range(d)] + ["weight"])
    for t, state in zip(traj.times, traj.states):
        for i, (x, w) in enumerate(zip(state.points, state.weights)):
            writer.writerow([fmt(t), i] + [fmt(c) for c in x] + [fmt(w)])
    return buf.getvalue()


def read_trajectory_csv(text: str) -> MeasureTrajectory:
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    d = len(header) - 3
    times: list[float] = []
    groups: dict[float, list] = {}
    for row in body:
        t = float(row[0])
        if t not in groups:
            groups[t] = []
            times.append(t)
        groups[t].append([float(c) for c in row[2:]])
    states = [EmpiricalMeasure(np.array(groups[t])[:, :d], np.array(groups[t])[:, d]) for t in times]
    return MeasureTrajectory(np.array(times), states)


def effective_step(dt: float, lipschitz: float) -> float:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if lipschitz > 0:
        return min(dt, 1.0 / (2.0 * lipschitz))
    return dt


def rk4(f: Callable[[float, np.ndarray], np.ndarray], t0: float, t1: float, X: np.ndarray, dt: float) -> np.ndarray:
    """Classical RK4 from t0 to t1 on a uniform grid of ceil((t1-t0)/dt) steps."""
    if t1 < t0:
        raise ValueError("integration must run forward in time")
    if t1 == t0:
        return np.array(X, dtype=float)
    n = max(1, math.ceil((t1 - t0) / dt - 1e-12))
    h = (t1 - t0) / n
    X = np.array(X, dtype=float)
    for k in range(n):
        t = t0 + k * h
        k1 = f(t, X)
        k2 = f(t + h / 2, X + (h / 2) * k1)
        k3 = f(t + h / 2, X + (h / 2) * k2)
        k4 = f(t + h, X + h * k3)
        X = X + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(X)):
            raise NumericalError(f"state became non-finite at t={t + h}")
    return X


def flow_map(v: VelocityField, tau: float, t: float, x0, dt: float = DEFAULT_DT) -> np.ndarray:
    """Characteristic flow Phi_(tau,t)(x0) of dx/ds = v(s, x)."""
    x0 = np.asarray(x0, dtype=float)
    single = x0.ndim <= 1
    X = np.atleast_2d(x0.reshape(1, -1) if single else x0)
    out = rk4(v.fn, tau, t, X, effective_step(dt, v.lipschitz_const))
    return out[0] if single else out


def uniform_nodes(tau: float, T: float, dt: float) -> np.ndarray:
    n = max(1, math.ceil((T - tau) / dt - 1e-12))
    return tau + (T - tau) * np.arange(n + 1) / n


def solve_continuity(
    v: VelocityField,
    tau: float,
    T: float,
    mu_tau: EmpiricalMeasure,
    dt: float = DEFAULT_DT,
    nodes: Sequence[float] | None = None,
) -> MeasureTrajectory:
    """mu(t) = Phi_(tau,t) # mu_tau, recorded at ``nodes`` (default: every integration step)."""
    if T < tau:
        raise ValueError("T must be >= tau")
    step = effective_step(dt, v.lipschitz_const)
    grid = uniform_nodes(tau, T, step) if nodes is None else np.asarray(nodes, dtype=float)
    if T == tau:
        grid = np.array([tau])
    X = np.array(mu_tau.points)
    states = [mu_tau]
    for a, b in zip(grid[:-1], grid[1:]):
        X = rk4(v.fn, a, b, X, step)
        states.append(EmpiricalMeasure._trusted(_frozen(X), mu_tau.weights))
    return MeasureTrajectory(grid, states, {"field": v.name, "dt": step})


def _frozen(X: np.ndarray) -> np.ndarray:
    X = np.array(X)
    X.setflags(write=False)
    return X


def apriori_constants(r: float, M: float, horizon: float) -> tuple[float, float]:
    """Grönwall closure of |x'| <= M (1 + |x|) started in B(0, r).

    Returns (R_r, c_r): supports stay in B(0, R_r), and since |v| <= M (1 + R_r)
    there, W2(mu(t), mu(s)) <= c_r M (t - s) with c_r = 1 + R_r.
    """
    if r < 0 or M < 0 or horizon < 0:
        raise ValueError("arguments must be nonnegative")
    R = (1.0 + r) * math.exp(M * horizon) - 1.0
    return R, 1.0 + R


def check_apriori(traj: MeasureTrajectory, M: float, tol: float = 1e-8) -> dict:
    """Evaluate the support and time-continuity bounds on a trajectory.

    Returns the worst excesses (<= tol means satisfied).
    """
    from .measures import w2

    r = support_radius(traj.initial)
    horizon = traj.times[-1] - traj.times[0]
    R, c = apriori_constants(r, M, horizon)
    radius_excess = max(support_radius(s) - R for s in traj.states)
    modulus_excess = -math.inf
    k = len(traj.states)
    for i in range(k):
        for j in range(i + 1, k):
            d = w2(traj.states[i], traj.states[j])
            modulus_excess = max(modulus_excess, d - c * M * (traj.times[j] - traj.times[i]))
    return {"R_r": R, "c_r": c, "radius_excess": radius_excess, "modulus_excess": modulus_excess}


def m2_series(traj: MeasureTrajectory) -> np.ndarray:
    return np.array([moment2(s) for s in traj.states])
