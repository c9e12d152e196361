"""Acceptance suite shared by ``wviab selftest`` and ``tests/test_acceptance.py``.

Every criterion returns a :class:`CriterionResult` holding deterministic
metrics and text artifacts; runtimes are reported separately so artifacts stay
byte-reproducible for a fixed seed.
"""

from __future__ import annotations

import csv
import filecmp
import io
import itertools
import json
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from . import fields
from .flows import VelocityField, check_apriori, flow_map, fmt, solve_continuity
from .inclusions import SetValuedDynamics, filippov_track, initial_velocity_solution, semigroup_check
from .lyapunov import (
    directional_lower_derivative,
    epigraph_constraint,
    epigraph_tangent,
    lift,
    m2sq,
    stable_trajectory,
    variance,
    w2sq_to_target,
)
from .measures import EmpiricalMeasure, TangentVector, superdifferential_gap, wasserstein2
from .viability import contingent_test, g_slope, m2_ball, viable_trajectory


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    metrics: dict
    runtime: float = 0.0
    artifacts: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_short(v)}" for k, v in self.metrics.items())
        return f"[{status}] criterion {self.number}: {self.title} ({shown}; {self.runtime:.2f}s)"


def _short(v):
    if isinstance(v, float):
        return f"{v:.3g}"
    return str(v)


def _rng(seed: int, number: int) -> np.random.Generator:
    return np.random.default_rng([seed, number])


def _table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(x) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


# ---------------------------------------------------------------- criterion 1

def brute_force_w2(x: np.ndarray, y: np.ndarray) -> float:
    """Minimum over all permutation couplings of equal-weight clouds."""
    n = x.shape[0]
    cost = ((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=2)
    perms = np.array(list(itertools.permutations(range(n))))
    totals = cost[np.arange(n)[None, :], perms].sum(axis=1)
    return math.sqrt(totals.min() / n)


def criterion_ot_oracle(seed: int, cases: int = 500) -> CriterionResult:
    rng = _rng(seed, 1)
    rows, worst = [], 0.0
    for i in range(cases):
        n, d = int(rng.integers(1, 8)), int(rng.integers(1, 4))
        x, y = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        got = wasserstein2(EmpiricalMeasure(x), EmpiricalMeasure(y))[0]
        ref = brute_force_w2(x, y)
        worst = max(worst, abs(got - ref))
        rows.append((i, n, d, got, ref))
    return CriterionResult(1, "exact OT equals brute-force permutation minimum", worst <= 1e-9,
                           {"cases": cases, "max_abs_diff": worst},
                           artifacts={"c1_ot_oracle.csv": _table(["case", "n", "d", "w2", "brute"], rows)})


# ---------------------------------------------------------------- criterion 2

def criterion_superdifferential(seed: int, cases: int = 1000) -> CriterionResult:
    rng = _rng(seed, 2)
    rows, worst = [], -math.inf
    for i in range(cases):
        d = int(rng.integers(1, 4))
        n, k = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        mu = EmpiricalMeasure(rng.normal(size=(n, d)), rng.dirichlet(np.ones(n)))
        nu = mu if i % 10 == 0 else EmpiricalMeasure(rng.normal(size=(k, d)), rng.dirichlet(np.ones(k)))
        xi = TangentVector.on(mu, rng.normal(size=(mu.n, d)))
        h = 2.0 ** -int(rng.integers(0, 11))
        gap = superdifferential_gap(mu, nu, xi, h)
        worst = max(worst, gap)
        rows.append((i, mu.n, nu.n, d, h, gap))
    return CriterionResult(2, "superdifferential inequality of W2^2/2", worst <= 1e-9,
                           {"cases": cases, "max_gap": worst},
                           artifacts={"c2_superdifferential.csv": _table(["case", "n", "k", "d", "h", "gap"], rows)})


# ---------------------------------------------------------------- criterion 3

def flow_suite() -> list[tuple[str, VelocityField]]:
    A = np.array([[-0.5, 1.0], [-1.0, -0.5]])
    nA = float(np.linalg.norm(A, 2))
    B = np.array([[0.3, -0.8], [0.8, 0.3]])
    nB = float(np.linalg.norm(B, 2))
    target = np.array([0.5, -0.5])

    def near_sharp(t, X):
        r = np.linalg.norm(X, axis=1, keepdims=True)
        return (1.0 + r) * X / np.sqrt(r**2 + 0.25)

    return [
        ("zero", VelocityField(lambda t, X: np.zeros_like(X), 0.0, 0.0, "zero")),
        ("constant", VelocityField(lambda t, X: np.broadcast_to([1.0, 0.0], X.shape).copy(), 1.0, 0.0, "constant")),
        ("spiral", VelocityField(lambda t, X: X @ A.T, nA, nA, "spiral")),
        ("attraction", VelocityField(lambda t, X: -(X - target), max(1.0, float(np.linalg.norm(target))), 1.0, "attraction")),
        ("expansion", VelocityField(lambda t, X: X, 1.0, 1.0, "expansion")),
        ("near_sharp", VelocityField(near_sharp, 1.0, 3.0, "near_sharp")),
        ("time_varying", VelocityField(lambda t, X: math.sin(3 * t) * (X @ B.T), nB, nB, "time_varying")),
    ]


def rk4_order_ratios(dts=(0.2, 0.1, 0.05, 0.025), T: float = 2.0) -> list[float]:
    A = np.array([[-0.5, 1.0], [-1.0, -0.5]])
    v = VelocityField(lambda t, X: X @ A.T, float(np.linalg.norm(A, 2)), 0.0, "linear")
    x0 = np.array([1.0, 0.5])
    exact = expm(A * T) @ x0
    errs = [float(np.linalg.norm(flow_map(v, 0.0, T, x0, dt) - exact)) for dt in dts]
    return [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]


def criterion_apriori(seed: int) -> CriterionResult:
    rng = _rng(seed, 3)
    rows, worst_r, worst_m = [], -math.inf, -math.inf
    for name, v in flow_suite():
        for rep in range(2):
            pts = rng.uniform(-1, 1, size=(20, 2))
            pts /= np.maximum(1.0, np.linalg.norm(pts, axis=1, keepdims=True))
            mu0 = EmpiricalMeasure(pts)
            traj = solve_continuity(v, 0.0, 1.5, mu0, 0.01, nodes=np.linspace(0.0, 1.5, 16))
            chk = check_apriori(traj, v.sublinearity_const)
            worst_r, worst_m = max(worst_r, chk["radius_excess"]), max(worst_m, chk["modulus_excess"])
            rows.append((name, rep, chk["R_r"], chk["radius_excess"], chk["modulus_excess"]))
    ratios = rk4_order_ratios()
    ok = worst_r <= 1e-8 and worst_m <= 1e-6 and all(12 <= r <= 20 for r in ratios)
    arts = {
        "c3_apriori.csv": _table(["field", "rep", "R_r", "radius_excess", "modulus_excess"], rows),
        "c3_rk4_order.csv": _table(["halving", "error_ratio"], list(enumerate(ratios))),
    }
    return CriterionResult(3, "a-priori support/continuity bounds and RK4 order", ok,
                           {"radius_excess": worst_r, "modulus_excess": worst_m,
                            "order_ratios": "/".join(f"{r:.2f}" for r in ratios)}, artifacts=arts)


# ---------------------------------------------------------------- criterion 4

def random_member(rng: np.random.Generator, d: int):
    kind = int(rng.integers(0, 4))
    if kind == 0:
        return fields.constant(rng.normal(size=d))
    if kind == 1:
        A = rng.normal(size=(d, d))
        A *= rng.uniform(0.2, 1.0) / np.linalg.norm(A, 2)
        return fields.linear(A, rng.normal(scale=0.5, size=d))
    if kind == 2:
        return fields.attraction(float(rng.uniform(0.2, 1.5)), rng.normal(size=d))
    return fields.interaction(("linear", "soft")[int(rng.integers(0, 2))], float(rng.uniform(0.2, 1.0)))


def random_cloud(rng: np.random.Generator, n: int, d: int, scale: float = 1.0) -> EmpiricalMeasure:
    return EmpiricalMeasure(rng.normal(scale=scale, size=(n, d)), rng.dirichlet(2 * np.ones(n)))


def criterion_filippov(seed: int, cases: int = 100) -> CriterionResult:
    rng = _rng(seed, 4)
    rows, worst, tightest = [], -math.inf, 0.0
    for i in range(cases):
        d = int(rng.integers(1, 3))
        dyn = SetValuedDynamics(tuple(random_member(rng, d) for _ in range(int(rng.integers(1, 4)))))
        A = rng.normal(scale=0.5, size=(d, d))
        b = rng.normal(size=d)
        w = VelocityField(lambda t, X, A=A, b=b: X @ A.T + b, max(np.linalg.norm(A, 2), np.linalg.norm(b)),
                          float(np.linalg.norm(A, 2)), "w")
        nu0 = random_cloud(rng, int(rng.integers(3, 7)), d)
        mu_tau = random_cloud(rng, int(rng.integers(3, 7)), d)
        ref = solve_continuity(w, 0.0, 1.0, nu0, 0.05)
        res = filippov_track(dyn, w, ref, mu_tau, 0.05)
        excess = float((res.realized_distance - res.bound).max())
        worst = max(worst, excess)
        # the bound equals the realized distance at t = tau, so measure tightness afterwards
        tightest = max(tightest, float(np.max(res.realized_distance[1:] / np.maximum(res.bound[1:], 1e-300))))
        rows.append((i, d, dyn.size, float(res.realized_distance[-1]), float(res.bound[-1]), excess))
    exact_worst = 0.0
    for i in range(10):
        d = 2
        member = random_member(rng, d)
        while member.measure_dependent:
            member = random_member(rng, d)
        dyn = SetValuedDynamics((random_member(rng, d), member))
        w = VelocityField(lambda t, X, f=member: f(t, X, None), member.M, member.Lambda, "member")
        nu0 = random_cloud(rng, 5, d)
        ref = solve_continuity(w, 0.0, 1.0, nu0, 0.05)
        res = filippov_track(dyn, w, ref, nu0, 0.05)
        exact_worst = max(exact_worst, float(res.realized_distance.max()))
    ok = worst <= 1e-6 and exact_worst <= 1e-8
    return CriterionResult(4, "Filippov tracking bound", ok,
                           {"cases": cases, "max_excess_over_bound": worst, "max_realized_over_bound": tightest,
                            "exact_case_max": exact_worst},
                           artifacts={"c4_filippov.csv": _table(
                               ["case", "d", "family", "final_distance", "final_bound", "max_excess"], rows)})


# ---------------------------------------------------------------- criterion 5

def semigroup_scenarios():
    return [
        ("translations", SetValuedDynamics((fields.constant([1.0]), fields.constant([-1.0]), fields.zero(1))),
         EmpiricalMeasure([[0.0], [0.5]]), 4),
        ("mean_field", SetValuedDynamics((fields.interaction("linear", 1.0), fields.attraction(1.0, [1.0, 0.0]),
                                          fields.attraction(1.0, [-1.0, 0.0]))),
         EmpiricalMeasure([[0.0, 0.0], [1.0, 1.0], [-0.5, 0.3]]), 3),
        ("rotation_drift", SetValuedDynamics((fields.linear([[0.0, -1.0], [1.0, 0.0]]), fields.constant([0.5, 0.0]))),
         EmpiricalMeasure([[1.0, 0.0], [0.0, 0.5]], [0.3, 0.7]), 2),
    ]


def criterion_semigroup(seed: int, n: int = 50) -> CriterionResult:
    rows, worst = [], 0.0
    for name, dyn, mu0, depth in semigroup_scenarios():
        fwd, bwd = semigroup_check(dyn, mu0, 0.5, 1.0, n=n, depth=depth, dt=0.01, seed=seed)
        worst = max(worst, fwd, bwd)
        rows.append((name, dyn.size, depth, fwd, bwd))
    return CriterionResult(5, "reachable-set semigroup (sampled two-sided containment)", worst <= 1e-3,
                           {"samples_per_side": n, "max_defect": worst},
                           artifacts={"c5_semigroup.csv": _table(["scenario", "U", "depth", "direct_in_cont", "cont_in_direct"], rows)})


# ---------------------------------------------------------------- criterion 6

def velocity_scenarios(seed: int):
    rng = _rng(seed, 6)
    cloud = EmpiricalMeasure(rng.normal(size=(6, 2)), rng.dirichlet(2 * np.ones(6)))
    return [
        ("singleton_spiral", SetValuedDynamics((fields.linear([[-0.5, 1.0], [-1.0, -0.5]]),)), 0.0, cloud, 0),
        ("linear_oscillator", SetValuedDynamics((fields.linear([[0.0, 1.0], [-2.0, -0.3]]),)), 0.0, cloud, 0),
        ("mean_field_attraction", SetValuedDynamics((fields.interaction("linear", 1.0), fields.attraction(1.0, [1.0, 1.0]))),
         0.3, cloud, 0),
        ("mean_field_attraction_u1", SetValuedDynamics((fields.interaction("linear", 1.0), fields.attraction(1.0, [1.0, 1.0]))),
         0.3, cloud, 1),
        ("soft_mixture", SetValuedDynamics((fields.interaction("soft", 0.8), fields.constant([0.5, -0.2]))),
         0.0, cloud, np.array([0.5, 0.5])),
    ]


def criterion_initial_velocity(seed: int) -> CriterionResult:
    rows, ok = [], True
    worst_final = 0.0
    for name, dyn, tau, mu, u in velocity_scenarios(seed):
        traj = initial_velocity_solution(dyn, tau, mu, u, dt=0.01, h0=0.5, K=8)
        cert = traj.meta["velocity_certificate"]
        r = cert["ratios"]
        ok = ok and cert["passed"]
        worst_final = max(worst_final, r[-1] / r[0] if r[0] > 0 else 0.0)
        rows.append([name] + list(r))
    header = ["scenario"] + [f"k{k}" for k in range(9)]
    return CriterionResult(6, "initial-velocity o(h) certificate", ok,
                           {"scenarios": len(rows), "worst_final_over_initial": worst_final},
                           artifacts={"c6_velocity_ratios.csv": _table(header, rows)})


# ---------------------------------------------------------------- criterion 7

def feasible_viability_scenario():
    dyn = SetValuedDynamics((fields.constant([1.0, 0.0]), fields.linear(-np.eye(2))))
    ang = np.array([0.0, 1.5, 3.0, 4.5])
    mu0 = EmpiricalMeasure(np.c_[np.cos(ang), np.sin(ang)])
    return dyn, mu0


def infeasible_viability_scenario():
    dyn = SetValuedDynamics((fields.constant([1.0, 0.0]),))
    ang = np.array([-0.3, -0.1, 0.1, 0.3])
    mu0 = EmpiricalMeasure(np.c_[np.cos(ang), np.sin(ang)])
    return dyn, mu0


def translated_ball_excess(mu0: EmpiricalMeasure, t: np.ndarray) -> np.ndarray:
    """Closed-form distance to {M2^2 <= 1} after translating an M2 = 1 cloud by t e_1."""
    m1 = float(mu0.mean()[0])
    return np.sqrt(1.0 + 2.0 * t * m1 + t**2) - 1.0


def criterion_viability(seed: int) -> CriterionResult:
    Q = m2_ball(1.0)
    dyn, mu0 = feasible_viability_scenario()
    good = viable_trajectory(dyn, Q, mu0, 2.0, 6, 0.01)
    dyn_bad, mu_bad = infeasible_viability_scenario()
    bad = viable_trajectory(dyn_bad, Q, mu_bad, 1.0, 5, 0.01)
    t = bad.trajectory.times
    closed = translated_ball_excess(mu_bad, t)
    closed_slope = float(np.polyfit(t, closed, 1)[0])
    slope = g_slope(bad)
    rel = abs(slope - closed_slope) / closed_slope
    ok = good.viable and float(good.g_values.max()) <= 1e-3 and bad.status == "failed" and slope > 0 and rel <= 0.2
    arts = {
        "c7_feasible.json": json.dumps(good.to_dict(), sort_keys=True) + "\n",
        "c7_infeasible.json": json.dumps(bad.to_dict(), sort_keys=True) + "\n",
    }
    return CriterionResult(7, "dyadic viable synthesis", ok,
                           {"feasible_max_g": float(good.g_values.max()), "infeasible_status": bad.status,
                            "first_failure": bad.first_failure, "g_slope": slope, "closed_form_slope": closed_slope,
                            "slope_rel_err": rel}, artifacts=arts)


# ---------------------------------------------------------------- criterion 8

def epigraph_equivalence_cases(seed: int, cases: int = 200):
    rng = _rng(seed, 8)
    out = []
    for i in range(cases):
        d = int(rng.integers(1, 3))
        mu = random_cloud(rng, int(rng.integers(3, 8)), d)
        rho = float(rng.uniform(0.1, 3.0))
        kind = i % 3
        if kind == 0:
            W = m2sq(rho)
        elif kind == 1:
            W = variance(rho)
        else:
            W = w2sq_to_target(random_cloud(rng, int(rng.integers(2, 5)), d), rho)
        A = rng.normal(size=(d, d))
        b = rng.normal(scale=0.5, size=d)
        out.append((W, mu, mu.points @ A.T + b))
    return out


def epigraph_agreement(W, mu, v, h0: float = 1e-2, K: int = 10) -> tuple[bool, bool, float]:
    """(derivative says decay-compatible, contingent test says tangent, D + rho W)."""
    xi = TangentVector.on(mu, v)
    lhs = directional_lower_derivative(W, mu, xi, h0, K) + W.rho * W.value(mu)
    bxi = epigraph_tangent(W, mu, v)
    bmu = lift(mu, W.value(mu))
    _, tangent = contingent_test(epigraph_constraint(W), bmu, bxi, h0, K)
    return lhs <= 0, tangent, lhs


def criterion_decay(seed: int) -> CriterionResult:
    dyn = SetValuedDynamics((fields.linear(-np.eye(2)),))
    mu0 = EmpiricalMeasure([[1.0, 0.5], [-0.8, 0.2], [0.3, -1.1]], [0.2, 0.5, 0.3])
    cert = stable_trajectory(dyn, m2sq(2.0), mu0, 2.0, 6, 0.01)
    w0 = float(cert.w_values[0])
    low = float((cert.w_values - (cert.envelope - 1e-4)).min())
    high = float(((cert.envelope + 5e-3 * w0) - cert.w_values).min())
    band_ok = cert.certified and low >= 0 and high >= 0

    rows, agree, boundary_ok = [], 0, True
    cases = epigraph_equivalence_cases(seed)
    for i, (W, mu, v) in enumerate(cases):
        says_decay, tangent, lhs = epigraph_agreement(W, mu, v)
        same = says_decay == tangent
        agree += same
        if not same and abs(lhs) > 1e-2 * max(1.0, W.value(mu)):
            boundary_ok = False
        rows.append((i, W.descriptor, lhs, int(says_decay), int(tangent)))
    frac = agree / len(cases)
    ok = band_ok and frac >= 0.95 and boundary_ok
    arts = {
        "c8_certificate.csv": cert.to_csv(),
        "c8_epigraph_equivalence.csv": _table(["case", "W", "D_plus_rhoW", "decay", "tangent"], rows),
    }
    return CriterionResult(8, "exponential decay certificate and epigraph equivalence", ok,
                           {"band_low_margin": low, "band_high_margin": high, "agreement": frac,
                            "disagreements_near_boundary": boundary_ok}, artifacts=arts)


# ---------------------------------------------------------------- suite

CRITERIA = (
    criterion_ot_oracle,
    criterion_superdifferential,
    criterion_apriori,
    criterion_filippov,
    criterion_semigroup,
    criterion_initial_velocity,
    criterion_viability,
    criterion_decay,
)


# wall-clock budgets in seconds; kept out of the artifacts so they stay reproducible
RUNTIME_BUDGETS = {1: 10.0, 2: 30.0}


def run_criterion(fn, seed: int) -> CriterionResult:
    start = time.perf_counter()
    res = fn(seed)
    res.runtime = time.perf_counter() - start
    budget = RUNTIME_BUDGETS.get(res.number)
    if budget is not None and res.runtime > budget:
        res.passed = False
        res.metrics["over_budget_s"] = budget
    return res


def write_artifacts(results, out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for res in results:
        for name, text in res.artifacts.items():
            p = out_dir / name
            with open(p, "w", newline="") as fh:
                fh.write(text)
            written.append(p)
    summary = _table(["criterion", "title", "passed", "metrics"],
                     [(r.number, r.title, int(r.passed), json.dumps(r.metrics, sort_keys=True, default=str))
                      for r in results])
    p = out_dir / "acceptance.csv"
    p.write_text(summary)
    written.append(p)
    return written


def run_suite(seed: int, out_dir: Path | None = None, echo=None) -> list[CriterionResult]:
    results = []
    for fn in CRITERIA:
        res = run_criterion(fn, seed)
        if echo:
            echo(res.line())
        results.append(res)
    if out_dir is not None:
        write_artifacts(results, Path(out_dir))
    return results


def compare_dirs(a: Path, b: Path) -> list[str]:
    """Names of files that differ (or exist on one side only), ignoring the manifest."""
    names = {p.name for p in Path(a).iterdir()} | {p.name for p in Path(b).iterdir()}
    names.discard("manifest.json")
    bad = []
    for name in sorted(names):
        pa, pb = Path(a) / name, Path(b) / name
        if not (pa.exists() and pb.exists() and filecmp.cmp(pa, pb, shallow=False)):
            bad.append(name)
    return bad


def determinism_result(first_dir: Path, seed: int) -> CriterionResult:
    """Re-run the suite into a scratch directory and compare artifacts byte for byte."""
    start = time.perf_counter()
    with tempfile.TemporaryDirectory() as tmp:
        run_suite(seed, Path(tmp))
        diff = compare_dirs(Path(first_dir), Path(tmp))
        n_files = len([p for p in Path(tmp).iterdir()])
    res = CriterionResult(9, "selftest artifacts are byte-identical across runs", not diff,
                          {"files": n_files, "differing": ";".join(diff) or "none"})
    res.runtime = time.perf_counter() - start
    return res
