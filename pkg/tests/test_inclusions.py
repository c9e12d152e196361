import math

import numpy as np
import pytest

from wviab import fields
from wviab.errors import ControlGridMismatch, FieldAuditError
from wviab.flows import VelocityField, solve_continuity
from wviab.inclusions import (
    Selection,
    SetValuedDynamics,
    certificate_passes,
    filippov_track,
    inclusion_radius,
    reachable_sample,
    semigroup_check,
    simplex_grid,
    solve_selection,
    initial_velocity_solution,
)
from wviab.measures import EmpiricalMeasure, support_radius, w2

pm_one = SetValuedDynamics((fields.constant([-1.0]), fields.constant([1.0])))
origin = EmpiricalMeasure.dirac([0.0])


def test_singleton_matches_continuity_equation(rng):
    entry = fields.linear([[0.0, 1.0], [-1.0, -0.2]])
    dyn = SetValuedDynamics((entry,))
    mu = EmpiricalMeasure(rng.normal(size=(4, 2)), rng.dirichlet(np.ones(4)))
    sel = Selection.dyadic(0.0, 1.0, 3, [0] * 8)
    traj = solve_selection(dyn, sel, mu, 0.01)
    v = VelocityField(lambda t, X: entry(t, X, None), entry.M, entry.Lambda)
    ref = solve_continuity(v, 0.0, 1.0, mu, 0.01, nodes=traj.times)
    assert all(a.allclose(b, 1e-12) for a, b in zip(traj.states, ref.states))


def test_constant_selection_plus_one():
    traj = solve_selection(pm_one, Selection.constant(1, 0.0, 1.0), origin, 0.01)
    assert traj.final.points[0, 0] == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("depth", [1, 2, 3, 4])
def test_alternating_controls_balance(depth):
    ctrl = [(k + 1) % 2 for k in range(2**depth)]
    traj = solve_selection(pm_one, Selection.dyadic(0.0, 1.0, depth, ctrl), origin, 0.01)
    assert abs(traj.final.points[0, 0]) <= 1e-12
    integral = np.concatenate([[0.0], np.cumsum([2 * c - 1 for c in ctrl]) / 2**depth])
    assert np.allclose(traj.points()[:, 0, 0], integral, atol=1e-12)


def test_convex_combination_equals_averaged_field(rng):
    f1 = fields.linear([[-1.0, 0.0], [0.0, 0.5]])
    f2 = fields.interaction("soft", 0.8)
    dyn = SetValuedDynamics((f1, f2))
    avg = SetValuedDynamics((fields.FieldEntry(lambda t, X, mu: 0.5 * f1(t, X, mu) + 0.5 * f2(t, X, mu),
                                               1.0, 1.0, 0.8, True),))
    mu = EmpiricalMeasure(rng.normal(size=(5, 2)), rng.dirichlet(np.ones(5)))
    a = solve_selection(dyn, Selection.constant([0.5, 0.5], 0.0, 1.0), mu, 0.01)
    b = solve_selection(avg, Selection.constant(0, 0.0, 1.0), mu, 0.01)
    assert a.final.allclose(b.final, 1e-12)


def test_selection_must_cover_horizon():
    with pytest.raises(ControlGridMismatch):
        solve_selection(pm_one, Selection.constant(0, 0.0, 1.0), origin, 0.01, T=2.0)


def test_invalid_control_rejected():
    with pytest.raises(ControlGridMismatch):
        solve_selection(pm_one, Selection.constant(5, 0.0, 1.0), origin, 0.01)
    with pytest.raises(ControlGridMismatch):
        solve_selection(pm_one, Selection.constant([0.7, 0.7], 0.0, 1.0), origin, 0.01)


def test_selection_roundtrip():
    sel = Selection.dyadic(0.0, 2.0, 2, [0, [0.25, 0.75], 1, 0])
    back = Selection.from_dict(sel.to_dict())
    assert np.array_equal(back.grid, sel.grid) and back.to_dict() == sel.to_dict()


def test_simplex_grid_pure_first():
    g = simplex_grid(3, 4)
    assert np.array_equal(g[:3], np.eye(3))
    assert np.allclose(g.sum(axis=1), 1.0)
    assert len(g) == math.comb(4 + 2, 2)


def test_inclusion_radius_bound(rng):
    dyn = SetValuedDynamics((fields.interaction("linear", 0.5), fields.attraction(-0.4, [0.0, 0.0]),
                             fields.constant([0.3, 0.0])))
    dyn.audit([EmpiricalMeasure(rng.normal(size=(4, 2))) for _ in range(3)])
    for seed in range(5):
        mu = EmpiricalMeasure(rng.uniform(-1, 1, size=(5, 2)))
        R = inclusion_radius(support_radius(mu), dyn.M, 2.0)
        sample = reachable_sample(dyn, mu, 2.0, 4, 0.01, seed, depth=3)
        assert max(support_radius(m) for m in sample.measures) <= R + 1e-8


def test_audit_catches_understated_constants():
    liar = SetValuedDynamics((fields.linear([[2.0]]),), M=0.5, Lambda=0.5)
    with pytest.raises(FieldAuditError):
        liar.audit([origin])


# Filippov tracking

def _reference(entry, mu, T=1.0, dt=0.01):
    w = VelocityField(lambda t, X: entry(t, X, None), entry.M, entry.Lambda)
    return w, solve_continuity(w, 0.0, T, mu, dt, nodes=np.linspace(0.0, T, 17))


def test_exact_tracking_when_reference_in_family(rng):
    entry = fields.linear([[0.0, -1.0], [1.0, 0.0]])
    dyn = SetValuedDynamics((fields.constant([1.0, 0.0]), entry))
    mu = EmpiricalMeasure(rng.normal(size=(4, 2)))
    w, ref = _reference(entry, mu)
    res = filippov_track(dyn, w, ref, mu, 0.01)
    assert res.realized_distance.max() <= 1e-8
    assert np.all(res.eta <= 1e-12)


def test_gronwall_when_only_start_differs(rng):
    entry = fields.linear([[-0.5, 1.0], [-1.0, -0.5]])
    dyn = SetValuedDynamics((entry, fields.constant([0.0, 1.0])))
    mu = EmpiricalMeasure(rng.normal(size=(4, 2)))
    nu = EmpiricalMeasure(rng.normal(size=(3, 2)))
    w, ref = _reference(entry, nu)
    res = filippov_track(dyn, w, ref, mu, 0.01)
    envelope = np.exp((dyn.Lambda + dyn.L) * ref.times) * w2(mu, nu)
    assert np.all(res.realized_distance <= envelope + 1e-6)


def test_reference_outside_family():
    dyn = SetValuedDynamics(tuple(fields.constant([u]) for u in np.linspace(-1, 1, 5)))
    w, ref = _reference(fields.constant([2.0]), origin)
    res = filippov_track(dyn, w, ref, origin, 0.01)
    assert np.allclose(res.eta, 1.0)
    assert np.allclose(res.realized_distance, ref.times, atol=1e-12)
    assert all(c == 4 for c in res.controls)
    assert np.all(res.realized_distance <= res.bound + 1e-6)


# reachable sets

def test_singleton_reachable_all_equal():
    dyn = SetValuedDynamics((fields.attraction(1.0, [0.5]),))
    sample = reachable_sample(dyn, EmpiricalMeasure([[0.0], [2.0]]), 1.0, 6, 0.01, seed=3, depth=3)
    assert all(m.allclose(sample.measures[0], 0.0) for m in sample.measures)


def test_reachable_means_in_control_range():
    sample = reachable_sample(pm_one, origin, 1.0, 30, 0.01, seed=0, depth=5)
    means = [m.mean()[0] for m in sample.measures]
    assert all(-1 - 1e-12 <= x <= 1 + 1e-12 for x in means)
    assert len({round(x, 9) for x in means}) > 5


def test_reachable_deterministic_and_thread_independent():
    a = reachable_sample(pm_one, origin, 1.0, 12, 0.01, seed=9, depth=4, threads=1)
    b = reachable_sample(pm_one, origin, 1.0, 12, 0.01, seed=9, depth=4, threads=4)
    assert all(x.allclose(y, 0.0) for x, y in zip(a.measures, b.measures))


def test_semigroup_defect_small():
    dyn = SetValuedDynamics((fields.constant([1.0]), fields.constant([-1.0]), fields.linear([[-1.0]])))
    fwd, bwd = semigroup_check(dyn, EmpiricalMeasure([[0.0], [0.5]]), 0.5, 1.0, n=20, depth=3)
    assert max(fwd, bwd) <= 1e-3


def test_semigroup_requires_dyadic_split():
    with pytest.raises(ControlGridMismatch):
        semigroup_check(pm_one, origin, 0.3, 1.0, n=2, depth=3)


# prescribed initial velocity

def test_initial_velocity_singleton_autonomous():
    dyn = SetValuedDynamics((fields.linear([[0.0, 1.0], [-1.0, 0.0]]),))
    mu = EmpiricalMeasure([[1.0, 0.0], [0.0, 2.0]])
    traj = initial_velocity_solution(dyn, 0.0, mu, 0, dt=0.01)
    cert = traj.meta["velocity_certificate"]
    assert cert["passed"]
    # first-order Taylor remainder: ratio / h stays bounded
    assert max(r / h for r, h in zip(cert["ratios"], cert["h"])) < 5.0


def test_initial_velocity_linear_matches_exponential():
    A = np.array([[-0.5, 1.0], [0.0, -1.0]])
    dyn = SetValuedDynamics((fields.linear(A), fields.constant([0.0, 1.0])))
    mu = EmpiricalMeasure([[1.0, 1.0], [-1.0, 0.5], [0.2, -0.3]])
    traj = initial_velocity_solution(dyn, 0.0, mu, 0, dt=0.01)
    cert = traj.meta["velocity_certificate"]
    r = np.array(cert["ratios"])
    # W2 gap is O(h^2), so ratios halve with h
    assert np.all(r[1:] / r[:-1] < 0.6)
    assert cert["passed"]


def test_initial_velocity_measure_coupled():
    dyn = SetValuedDynamics((fields.interaction("soft", 1.0), fields.attraction(0.5, [1.0, 0.0])))
    mu = EmpiricalMeasure([[1.0, 0.0], [-1.0, 0.5], [0.0, -1.5]], [0.5, 0.25, 0.25])
    traj = initial_velocity_solution(dyn, 0.0, mu, [0.5, 0.5], dt=0.01)
    assert traj.meta["velocity_certificate"]["passed"]


def test_certificate_rule():
    assert certificate_passes([1.0, 0.5, 0.25, 0.05])
    assert not certificate_passes([1.0, 0.5, 0.8, 0.05])
    assert not certificate_passes([1.0, 0.9, 0.8])
