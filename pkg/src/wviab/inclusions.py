"""Continuity inclusions driven by a finite family of fields and its convex hull.

Admissible velocities at (t, mu) are convex combinations of the family members
evaluated at the current measure. Solutions are generated by piecewise-constant
selections; during a step the control is frozen but the measure argument is
re-fed at every RK4 stage, so mean-field couplings are integrated exactly as
an ODE system on the atoms.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import ControlGridMismatch, FieldAuditError
from .fields import FieldEntry
from .flows import (
    DEFAULT_DT,
    MeasureTrajectory,
    VelocityField,
    _frozen,
    effective_step,
    rk4,
    solve_continuity,
)
from .measures import EmpiricalMeasure, moment2, perturb, support_radius, w2, TangentVector

Control = int | np.ndarray


@dataclass(frozen=True)
class SetValuedDynamics:
    """V(t, mu) = co{ f_u(t, ., mu) : u in U } for a finite family of field entries."""

    family: tuple
    M: float | None = None
    Lambda: float | None = None
    L: float | None = None
    labels: tuple = ()

    def __post_init__(self):
        fam = tuple(self.family)
        if not fam:
            raise ValueError("family must be non-empty")
        object.__setattr__(self, "family", fam)
        if self.M is None:
            object.__setattr__(self, "M", max(f.M for f in fam))
        if self.Lambda is None:
            object.__setattr__(self, "Lambda", max(f.Lambda for f in fam))
        if self.L is None:
            object.__setattr__(self, "L", max(f.L for f in fam))
        if not self.labels:
            object.__setattr__(self, "labels", tuple(range(len(fam))))

    @property
    def size(self) -> int:
        return len(self.family)

    def control_weights(self, control: Control) -> np.ndarray:
        if isinstance(control, (int, np.integer)):
            if not 0 <= control < self.size:
                raise ControlGridMismatch(f"control index {control} outside 0..{self.size - 1}")
            w = np.zeros(self.size)
            w[int(control)] = 1.0
            return w
        w = np.asarray(control, dtype=float)
        if w.shape != (self.size,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ControlGridMismatch(f"invalid convex weights {control!r}")
        return w

    def velocity(self, t: float, X: np.ndarray, mu: EmpiricalMeasure, control: Control) -> np.ndarray:
        if isinstance(control, (int, np.integer)):
            return self.family[int(control)](t, X, mu)
        w = self.control_weights(control)
        out = np.zeros_like(X, dtype=float)
        for wk, f in zip(w, self.family):
            if wk > 0:
                out = out + wk * f(t, X, mu)
        return out

    def family_values(self, t: float, X: np.ndarray, mu: EmpiricalMeasure) -> np.ndarray:
        """Array of shape (|U|, n, d) with every member evaluated at X."""
        return np.stack([f(t, X, mu) for f in self.family])

    def field_of(self, t: float, mu: EmpiricalMeasure, control: Control) -> VelocityField:
        """Member of V(t, mu) as a time-frozen, measure-frozen velocity field."""
        m = self.M * (1.0 + moment2(mu))
        return VelocityField(lambda s, X: self.velocity(t, X, mu, control), m, self.Lambda,
                             name=f"V({t},mu)[{control!r}]")

    def rhs(self, control: Control, weights: np.ndarray) -> Callable[[float, np.ndarray], np.ndarray]:
        def f(t, X):
            return self.velocity(t, X, EmpiricalMeasure._trusted(X, weights), control)
        return f

    def advance(self, control: Control, t0: float, t1: float, mu: EmpiricalMeasure, dt: float) -> EmpiricalMeasure:
        X = rk4(self.rhs(control, mu.weights), t0, t1, mu.points, effective_step(dt, self.Lambda))
        return EmpiricalMeasure._trusted(_frozen(X), mu.weights)

    def audit(self, measures: Sequence[EmpiricalMeasure], t_samples=(0.0,), n_points: int = 64,
              seed: int = 0, tol: float = 1e-6) -> None:
        """Spot-check growth, x-Lipschitz and measure-Lipschitz constants."""
        rng = np.random.default_rng(seed)
        dim = measures[0].dim
        for t in t_samples:
            for mu in measures:
                X = rng.uniform(-3, 3, size=(n_points, dim))
                Y = X + rng.normal(scale=0.3, size=X.shape)
                vals_x = self.family_values(t, X, mu)
                vals_y = self.family_values(t, Y, mu)
                env = self.M * (1 + np.linalg.norm(X, axis=1) + moment2(mu))
                if np.any(np.linalg.norm(vals_x, axis=2) > env + tol):
                    raise FieldAuditError("growth bound M(1 + |x| + M2(mu)) violated")
                lip = np.linalg.norm(vals_x - vals_y, axis=2) / np.linalg.norm(X - Y, axis=1)
                if np.any(lip > self.Lambda + tol):
                    raise FieldAuditError("Lipschitz-in-x bound violated")
            for mu, nu in itertools.combinations(measures, 2):
                X = rng.uniform(-3, 3, size=(n_points, dim))
                vm, vn = self.family_values(t, X, mu), self.family_values(t, X, nu)
                gaps = np.linalg.norm(vm[:, None] - vn[None, :], axis=3).max(axis=2)
                if np.any(gaps.min(axis=1) > self.L * w2(mu, nu) + tol):
                    raise FieldAuditError("measure-Lipschitz matching bound violated")


@dataclass(frozen=True)
class Selection:
    """Piecewise-constant selection: controls[k] is active on [grid[k], grid[k+1]]."""

    grid: np.ndarray
    controls: tuple

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
            raise ControlGridMismatch("selection grid must be strictly increasing with >= 2 nodes")
        controls = tuple(c if isinstance(c, (int, np.integer)) else np.asarray(c, dtype=float)
                         for c in self.controls)
        if len(controls) != len(grid) - 1:
            raise ControlGridMismatch(f"{len(controls)} controls for {len(grid) - 1} intervals")
        for c in controls:
            if not isinstance(c, (int, np.integer)):
                if np.any(c < 0) or abs(c.sum() - 1.0) > 1e-12:
                    raise ControlGridMismatch(f"convex weights {c} must be nonnegative and sum to 1")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "controls", controls)

    @classmethod
    def dyadic(cls, t0: float, t1: float, depth: int, controls: Sequence[Control]) -> "Selection":
        return cls(t0 + (t1 - t0) * np.arange(2**depth + 1) / 2**depth, tuple(controls))

    @classmethod
    def constant(cls, control: Control, t0: float, t1: float) -> "Selection":
        return cls(np.array([t0, t1]), (control,))

    def to_dict(self) -> dict:
        return {
            "grid": [float(t) for t in self.grid],
            "controls": [int(c) if isinstance(c, (int, np.integer)) else [float(x) for x in c]
                         for c in self.controls],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Selection":
        controls = [c if isinstance(c, int) else np.asarray(c, dtype=float) for c in data["controls"]]
        return cls(np.asarray(data["grid"], dtype=float), tuple(controls))


@dataclass(frozen=True)
class ReachableSample:
    time: float
    measures: tuple
    selections: tuple
    draws: int = 0  # random draws consumed per trajectory, for continuing the streams


def inclusion_radius(r: float, M: float, horizon: float) -> float:
    """A-priori support radius for inclusion solutions started in B(0, r).

    With |v(x)| <= M (1 + |x| + M2(mu)) and M2(mu) <= support radius R(t), one
    gets R' <= M (1 + 2R), hence 1 + 2R(t) <= (1 + 2r) exp(2 M t).
    """
    return ((1.0 + 2.0 * r) * math.exp(2.0 * M * horizon) - 1.0) / 2.0


def solve_selection(
    dyn: SetValuedDynamics,
    sel: Selection,
    mu0: EmpiricalMeasure,
    dt: float = DEFAULT_DT,
    T: float | None = None,
    record: str = "grid",
) -> MeasureTrajectory:
    """Solve the inclusion along a selection; ``record`` is "grid" or "steps"."""
    if T is not None and (T > sel.grid[-1] + 1e-12 or T < sel.grid[0]):
        raise ControlGridMismatch(f"selection grid [{sel.grid[0]}, {sel.grid[-1]}] does not cover T={T}")
    for c in sel.controls:
        dyn.control_weights(c)
    step = effective_step(dt, dyn.Lambda)
    end = sel.grid[-1] if T is None else T
    times, states = [sel.grid[0]], [mu0]
    mu = mu0
    for (a, b), c in zip(zip(sel.grid[:-1], sel.grid[1:]), sel.controls):
        if a >= end - 1e-15:
            break
        b = min(b, end)
        if record == "steps":
            n = max(1, math.ceil((b - a) / step - 1e-12))
            sub = a + (b - a) * np.arange(n + 1) / n
            for s0, s1 in zip(sub[:-1], sub[1:]):
                mu = dyn.advance(c, s0, s1, mu, step)
                times.append(s1)
                states.append(mu)
        else:
            mu = dyn.advance(c, a, b, mu, step)
            times.append(b)
            states.append(mu)
    return MeasureTrajectory(np.array(times), states, {"selection": sel.to_dict(), "dt": step})


def simplex_grid(k: int, resolution: int) -> np.ndarray:
    """Pure controls first, then all other points of the simplex with denominators ``resolution``."""
    pure = np.eye(k)
    if resolution <= 1 or k == 1:
        return pure
    pts = []
    for comp in itertools.product(range(resolution + 1), repeat=k - 1):
        s = sum(comp)
        if s <= resolution:
            w = np.array(comp + (resolution - s,), dtype=float) / resolution
            if w.max() < 1.0:
                pts.append(w)
    return np.vstack([pure] + pts) if pts else pure


def ball_sample(dim: int, radius: float, n: int = 64) -> np.ndarray:
    """Fixed quasi-uniform sample of the closed ball B(0, radius)."""
    z = 2.0 * qmc.Halton(d=dim, scramble=False).random(n) - 1.0
    sup = np.abs(z).max(axis=1)
    euc = np.linalg.norm(z, axis=1)
    scale = np.divide(sup, euc, out=np.zeros_like(sup), where=euc > 0)
    return radius * z * scale[:, None]


@dataclass(frozen=True)
class FilippovResult:
    trajectory: MeasureTrajectory
    reference: MeasureTrajectory
    realized_distance: np.ndarray
    bound: np.ndarray
    eta: np.ndarray
    controls: tuple

    @property
    def times(self) -> np.ndarray:
        return self.trajectory.times

    def realized_at(self, t: float) -> float:
        return float(self.realized_distance[self.trajectory.index_of(t)])

    def bound_at(self, t: float) -> float:
        return float(self.bound[self.trajectory.index_of(t)])


def _sup_mismatch(target: np.ndarray, members: np.ndarray, combos: np.ndarray) -> np.ndarray:
    # members: (|U|, n, d); combos: (C, |U|) -> sup_x |target - sum_u c_u f_u(x)| per combo
    mixed = np.tensordot(combos, members, axes=(1, 0))
    return np.linalg.norm(mixed - target[None], axis=2).max(axis=1)


def filippov_track(
    dyn: SetValuedDynamics,
    w: VelocityField,
    reference: MeasureTrajectory,
    mu_tau: EmpiricalMeasure,
    dt: float = DEFAULT_DT,
    resolution: int = 8,
    n_ball: int = 64,
) -> FilippovResult:
    """Greedy inclusion solution tracking the curve driven by ``w``.

    On each reference interval the admissible combination closest to ``w`` in
    sup-norm (over atoms of both measures plus a fixed ball sample) is frozen.
    The returned bound is exp((Lambda + L)(t - tau)) (W2(mu_tau, nu(tau)) + int eta).
    """
    if mu_tau.dim != reference.initial.dim:
        from .errors import DimensionError
        raise DimensionError("tracked measure and reference differ in dimension")
    r = max(max(support_radius(s) for s in reference.states), support_radius(mu_tau))
    ball = ball_sample(mu_tau.dim, r, n_ball)
    combos = simplex_grid(dyn.size, resolution)
    tau = reference.times[0]
    step = effective_step(dt, dyn.Lambda)

    mu = mu_tau
    states, controls, realized, eta = [mu], [], [w2(mu, reference.states[0])], []
    for k, (a, b) in enumerate(zip(reference.times[:-1], reference.times[1:])):
        nu = reference.states[k]
        S = np.vstack([mu.points, nu.points, ball])
        target = w(a, S)
        best = int(np.argmin(_sup_mismatch(target, dyn.family_values(a, S, mu), combos)))
        eta.append(float(_sup_mismatch(target, dyn.family_values(a, S, nu), combos).min()))
        c = combos[best]
        control = int(np.argmax(c)) if c.max() == 1.0 else c
        mu = dyn.advance(control, a, b, mu, step)
        states.append(mu)
        controls.append(control)
        realized.append(w2(mu, reference.states[k + 1]))
    nu_end = reference.states[-1]
    S = np.vstack([nu_end.points, ball])
    eta.append(float(_sup_mismatch(w(reference.times[-1], S), dyn.family_values(reference.times[-1], S, nu_end), combos).min()))

    eta = np.array(eta)
    dts = np.diff(reference.times)
    integral = np.concatenate([[0.0], np.cumsum(np.maximum(eta[:-1], eta[1:]) * dts)])
    growth = np.exp((dyn.Lambda + dyn.L) * (reference.times - tau))
    bound = growth * (realized[0] + integral)
    traj = MeasureTrajectory(reference.times, states, {"controls": [_ctl_repr(c) for c in controls], "dt": step})
    return FilippovResult(traj, reference, np.array(realized), bound, eta, tuple(controls))


def _ctl_repr(c):
    return int(c) if isinstance(c, (int, np.integer)) else [float(x) for x in c]


def _draw_controls(rng: np.random.Generator, n_controls: int, count: int) -> list[int]:
    # One double per interval keeps prefixes of a stream identical across horizons.
    return [min(int(rng.random() * n_controls), n_controls - 1) for _ in range(count)]


def _parallel_map(fn, items, threads: int | None):
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def reachable_sample(
    dyn: SetValuedDynamics,
    mu0: EmpiricalMeasure,
    t: float,
    n: int,
    dt: float = DEFAULT_DT,
    seed: int = 0,
    depth: int = 6,
    t0: float = 0.0,
    threads: int | None = None,
) -> ReachableSample:
    """Endpoints at time t of n random piecewise-constant selections on a dyadic grid.

    Trajectory i draws its controls from its own stream seeded by (seed, i).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    count = 2**depth

    def run(i):
        rng = np.random.default_rng([seed, i])
        sel = Selection.dyadic(t0, t, depth, _draw_controls(rng, dyn.size, count))
        return solve_selection(dyn, sel, mu0, dt).final, sel

    out = _parallel_map(run, range(n), threads)
    return ReachableSample(t, tuple(m for m, _ in out), tuple(s for _, s in out), draws=count)


def continue_sample(
    dyn: SetValuedDynamics,
    sample: ReachableSample,
    t: float,
    dt: float = DEFAULT_DT,
    seed: int = 0,
    depth: int = 6,
    threads: int | None = None,
) -> ReachableSample:
    """Continue every measure of ``sample`` to time t, resuming each trajectory's stream."""
    count = 2**depth

    def run(i):
        rng = np.random.default_rng([seed, i])
        _draw_controls(rng, dyn.size, sample.draws)
        sel = Selection.dyadic(sample.time, t, depth, _draw_controls(rng, dyn.size, count))
        return solve_selection(dyn, sel, sample.measures[i], dt).final, sel

    out = _parallel_map(run, range(len(sample.measures)), threads)
    return ReachableSample(t, tuple(m for m, _ in out), tuple(s for _, s in out), draws=sample.draws + count)


def sampled_hausdorff(a: Sequence[EmpiricalMeasure], b: Sequence[EmpiricalMeasure]) -> tuple[float, float]:
    """(max_a min_b W2, max_b min_a W2): the two one-sided containment defects."""
    D = np.array([[w2(x, y) for y in b] for x in a])
    return float(D.min(axis=1).max()), float(D.min(axis=0).max())


def _is_pow2(k: int) -> bool:
    return k > 0 and (k & (k - 1)) == 0


def semigroup_check(
    dyn: SetValuedDynamics,
    mu0: EmpiricalMeasure,
    tau: float,
    t: float,
    n: int = 50,
    depth: int = 4,
    dt: float = DEFAULT_DT,
    seed: int = 0,
) -> tuple[float, float]:
    """Compare R_t(mu0) with R_{t - tau}(R_tau(mu0)) on coupled samples.

    ``tau`` must split [0, t] on the depth-``depth`` dyadic grid; both sides
    then use intervals of the same width.
    """
    width = t / 2**depth
    k = round(tau / width)
    rest = 2**depth - k
    if abs(k * width - tau) > 1e-12 or not (_is_pow2(k) and _is_pow2(rest)):
        raise ControlGridMismatch("tau must split the dyadic grid into two dyadic blocks")
    first, second = k.bit_length() - 1, rest.bit_length() - 1
    direct = reachable_sample(dyn, mu0, t, n, dt, seed, depth)
    mid = reachable_sample(dyn, mu0, tau, n, dt, seed, first)
    cont = continue_sample(dyn, mid, t, dt, seed, second)
    return sampled_hausdorff(direct.measures, cont.measures)


def initial_velocity_solution(
    dyn: SetValuedDynamics,
    tau: float,
    mu_tau: EmpiricalMeasure,
    u_tau: Control,
    dt: float = DEFAULT_DT,
    h0: float = 0.5,
    K: int = 8,
) -> MeasureTrajectory:
    """Inclusion solution from mu_tau whose initial velocity is the admissible field u_tau.

    The frozen field v_tau drives a reference curve; the returned curve tracks
    it greedily. ``meta["velocity_certificate"]`` stores the ratios
    W2(mu(tau + h), (Id + h v_tau)#mu_tau) / h for h = h0 2^-k, k = 0..K.
    """
    dyn.control_weights(u_tau)
    v_tau = VelocityField(lambda s, X: dyn.velocity(tau, X, mu_tau, u_tau),
                          dyn.M * (1 + moment2(mu_tau)), dyn.Lambda, name="v_tau")
    finest = h0 / 2**K
    m = max(1, math.ceil(finest / min(dt, effective_step(dt, dyn.Lambda)) - 1e-12))
    nodes = tau + finest / m * np.arange(2**K * m + 1)
    reference = solve_continuity(v_tau, tau, tau + h0, mu_tau, finest / m, nodes=nodes)
    result = filippov_track(dyn, v_tau, reference, mu_tau, finest / m)
    xi = TangentVector.on(mu_tau, v_tau(tau, mu_tau.points))
    hs = [h0 / 2**k for k in range(K + 1)]
    ratios = [w2(result.trajectory.at(tau + h), perturb(mu_tau, xi, h)) / h for h in hs]
    meta = dict(result.trajectory.meta)
    meta["velocity_certificate"] = {"h": hs, "ratios": ratios, "passed": certificate_passes(ratios)}
    return MeasureTrajectory(result.trajectory.times, result.trajectory.states, meta)


def certificate_passes(ratios: Sequence[float], jitter: float = 0.05, factor: float = 0.1) -> bool:
    r = np.asarray(ratios, dtype=float)
    monotone = bool(np.all(r[1:] <= r[:-1] * (1 + jitter) + 1e-14))
    return monotone and bool(r[-1] <= factor * r[0] + 1e-14)
