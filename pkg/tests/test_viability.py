import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import clouds
from wviab import fields
from wviab.acceptance import feasible_viability_scenario, infeasible_viability_scenario, translated_ball_excess
from wviab.errors import NotInConstraint, ScenarioError
from wviab.inclusions import SetValuedDynamics
from wviab.measures import EmpiricalMeasure, TangentVector, moment2, w2
from wviab.viability import (
    contingent_test,
    from_spec,
    g_slope,
    gronwall_monitor,
    m2_ball,
    mean_norm_ball,
    mean_slice,
    report_csv,
    variance_ball,
    verify_replay,
    viable_trajectory,
    whole_space,
)

CONSTRAINTS = [m2_ball(1.0), variance_ball(0.5), mean_norm_ball(0.3), mean_slice([0.2, -0.1])]


@pytest.mark.parametrize("Q", CONSTRAINTS, ids=lambda q: q.descriptor)
@settings(max_examples=40, deadline=None)
@given(mu=clouds(dim=2))
def test_projection_is_exact(Q, mu):
    p = Q.project(mu)
    assert Q.distance(p) <= 1e-9
    assert w2(mu, p) == pytest.approx(Q.distance(mu), abs=1e-8)
    if Q.distance(mu) == 0.0:
        assert p.allclose(mu, 1e-12)


@pytest.mark.parametrize("Q", CONSTRAINTS, ids=lambda q: q.descriptor)
@settings(max_examples=30, deadline=None)
@given(mu=clouds(dim=2), nu=clouds(dim=2))
def test_distance_is_one_lipschitz(Q, mu, nu):
    assert abs(Q.distance(mu) - Q.distance(nu)) <= w2(mu, nu) + 1e-9


def test_from_spec_roundtrip():
    for Q in CONSTRAINTS:
        assert from_spec(Q.to_dict()).to_dict() == Q.to_dict()
    with pytest.raises(ScenarioError):
        from_spec({"type": "nope"})


# contingent test

def test_whole_space_always_tangent(rng):
    nu = EmpiricalMeasure(rng.normal(size=(4, 2)))
    ratios, tangent = contingent_test(whole_space(), nu, TangentVector.on(nu, rng.normal(size=(4, 2))))
    assert tangent and all(r == 0.0 for r in ratios)


def test_mean_slice_directions(rng):
    pts = rng.normal(size=(5, 2))
    nu = EmpiricalMeasure(pts - pts.mean(axis=0))
    Q = mean_slice([0.0, 0.0])
    xi = rng.normal(size=(5, 2))
    _, tangent = contingent_test(Q, nu, TangentVector.on(nu, xi - nu.weights @ xi))
    assert tangent
    c = np.array([0.6, -0.8])
    ratios, tangent = contingent_test(Q, nu, TangentVector.on(nu, c))
    assert not tangent
    assert ratios[-1] == pytest.approx(1.0, abs=1e-9)


def test_m2_boundary_inward_tangent(rng):
    pts = rng.normal(size=(4, 2))
    nu = EmpiricalMeasure(pts / math.sqrt(np.mean(np.sum(pts**2, axis=1))))
    assert moment2(nu) == pytest.approx(1.0)
    _, tangent = contingent_test(m2_ball(1.0), nu, TangentVector.on(nu, -nu.points))
    assert tangent
    _, tangent = contingent_test(m2_ball(1.0), nu, TangentVector.on(nu, nu.points))
    assert not tangent


def test_contingent_requires_membership():
    nu = EmpiricalMeasure.dirac([5.0, 0.0])
    with pytest.raises(NotInConstraint):
        contingent_test(m2_ball(1.0), nu, TangentVector.on(nu, [0.0, 0.0]))


@pytest.mark.parametrize("lam", [0.1, 0.5, 3.0, 20.0])
def test_cone_scaling(rng, lam):
    pts = rng.normal(size=(4, 2))
    nu = EmpiricalMeasure(pts / math.sqrt(np.mean(np.sum(pts**2, axis=1))))
    for Q in (m2_ball(1.0), mean_slice(nu.mean()), variance_ball(nu.variance())):
        for cand in Q.tangent_candidates(nu):
            _, tangent = contingent_test(Q, nu, cand)
            if tangent:
                _, scaled = contingent_test(Q, nu, TangentVector.on(nu, lam * cand.values))
                assert scaled


# viable synthesis

def test_feasible_scenario_viable_and_replays():
    dyn, mu0 = feasible_viability_scenario()
    report = viable_trajectory(dyn, m2_ball(1.0), mu0, 2.0, 5, 0.01)
    assert report.viable and report.first_failure is None
    assert report.g_values.max() <= report.tolerance
    assert verify_replay(report, dyn, 0.01)
    # the contraction is chosen whenever the boundary is active
    assert 1 in [c for c in report.controls if isinstance(c, int)]


def test_infeasible_scenario_fails_linearly():
    dyn, mu0 = infeasible_viability_scenario()
    report = viable_trajectory(dyn, m2_ball(1.0), mu0, 1.0, 4, 0.01)
    assert report.status == "failed"
    assert report.first_failure == 1
    closed = translated_ball_excess(mu0, report.trajectory.times)
    assert np.allclose(report.g_values, closed, atol=1e-9)
    assert g_slope(report) > 0.5
    assert np.any(report.gronwall_margin > 0)


def test_depth_monotone():
    dyn, mu0 = feasible_viability_scenario()
    Q = m2_ball(1.0)
    worst = [viable_trajectory(dyn, Q, mu0, 2.0, d, 0.01).g_values.max() for d in range(0, 5)]
    assert all(b <= a + 1e-6 for a, b in zip(worst, worst[1:]))


def test_depth_zero_still_viable():
    dyn, mu0 = feasible_viability_scenario()
    assert viable_trajectory(dyn, m2_ball(1.0), mu0, 2.0, 0, 0.01).viable


def test_flow_invariant_slice():
    dyn = SetValuedDynamics((fields.interaction("soft", 1.0),))
    mu0 = EmpiricalMeasure([[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]])
    report = viable_trajectory(dyn, mean_slice([0.0, 0.0]), mu0, 1.0, 3, 0.01)
    assert report.viable and report.g_values.max() <= 1e-12


def test_gronwall_monitor_zero_trajectory():
    dyn = SetValuedDynamics((fields.zero(2),))
    report = viable_trajectory(dyn, m2_ball(1.0), EmpiricalMeasure.dirac([0.5, 0.0]), 1.0, 3, 0.01)
    assert np.all(gronwall_monitor(report, dyn.Lambda, dyn.L) <= 1e-6)


def test_gronwall_monitor_tangent_scenario():
    dyn, mu0 = feasible_viability_scenario()
    report = viable_trajectory(dyn, m2_ball(1.0), mu0, 2.0, 5, 0.01)
    assert np.all(gronwall_monitor(report, dyn.Lambda, dyn.L) <= 1e-2)


def test_initial_outside_rejected():
    with pytest.raises(NotInConstraint):
        viable_trajectory(SetValuedDynamics((fields.zero(1),)), m2_ball(1.0), EmpiricalMeasure.dirac([3.0]), 1.0, 2)


def test_report_serialization():
    dyn, mu0 = infeasible_viability_scenario()
    report = viable_trajectory(dyn, m2_ball(1.0), mu0, 1.0, 2, 0.01)
    d = report.to_dict()
    assert d["status"] == "failed" and len(d["g_values"]) == 5
    assert report_csv(report).startswith("t,g\n")
