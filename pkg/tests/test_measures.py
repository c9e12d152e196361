import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import clouds
from wviab.errors import BaseMismatchError, DimensionError, NumericalError
from wviab.measures import (
    EmpiricalMeasure,
    TangentVector,
    dump_measure,
    load_measure,
    moment2,
    plan_is_feasible,
    perturb,
    pushforward,
    superdifferential_gap,
    support_radius,
    w2,
    wasserstein2,
)


# construction

def test_weights_renormalized_and_zero_atoms_dropped():
    mu = EmpiricalMeasure([[0.0], [1.0], [2.0]], [0.5, 0.0, 0.5])
    assert mu.n == 2
    assert abs(mu.weights.sum() - 1.0) <= 1e-12
    assert np.all(mu.weights > 0)


@pytest.mark.parametrize("pts, w", [
    ([[np.nan]], None),
    ([[0.0], [1.0]], [0.5, -0.5]),
    ([[0.0], [1.0]], [0.2, 0.2]),
    (np.zeros((0, 2)), None),
])
def test_invalid_measures_rejected(pts, w):
    with pytest.raises((ValueError, NumericalError)):
        EmpiricalMeasure(pts, w)


def test_arrays_are_read_only():
    mu = EmpiricalMeasure([[1.0, 2.0]])
    with pytest.raises(ValueError):
        mu.points[0, 0] = 3.0


def test_json_roundtrip(tmp_path):
    mu = EmpiricalMeasure([[1.0, 2.0], [0.5, -1.0]], [0.25, 0.75])
    path = tmp_path / "m.json"
    dump_measure(mu, path)
    assert load_measure(path).allclose(mu, 0.0)


def test_declared_dim_mismatch():
    with pytest.raises(DimensionError):
        EmpiricalMeasure.from_dict({"dim": 3, "points": [[0.0, 1.0]]})


# wasserstein2 examples

def test_two_diracs():
    d, plan = wasserstein2(EmpiricalMeasure.dirac([0.0, 0.0]), EmpiricalMeasure.dirac([3.0, 4.0]))
    assert d == pytest.approx(5.0, abs=1e-12)
    assert plan.to_dict()["pairs"] == [[0, 0, 1.0]]


def test_identical_measures_have_zero_distance(rng):
    mu = EmpiricalMeasure(rng.normal(size=(7, 2)), rng.dirichlet(np.ones(7)))
    assert w2(mu, mu) <= 1e-12


def test_half_half_vs_midpoint():
    mu = EmpiricalMeasure([[0.0], [2.0]])
    assert w2(mu, EmpiricalMeasure.dirac([1.0])) == pytest.approx(1.0, abs=1e-12)


def test_permutation_oracle_n6(rng):
    x, y = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    best = min(np.mean(np.sum((x - y[list(p)]) ** 2, axis=1)) for p in itertools.permutations(range(6)))
    assert w2(EmpiricalMeasure(x), EmpiricalMeasure(y)) == pytest.approx(math.sqrt(best), abs=1e-9)


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        w2(EmpiricalMeasure.dirac([0.0]), EmpiricalMeasure.dirac([0.0, 0.0]))


def test_unequal_sizes_plan_marginals(rng):
    mu = EmpiricalMeasure(rng.normal(size=(5, 2)), rng.dirichlet(np.ones(5)))
    nu = EmpiricalMeasure(rng.normal(size=(8, 2)), rng.dirichlet(np.ones(8)))
    d, plan = wasserstein2(mu, nu)
    assert plan_is_feasible(plan, mu, nu)
    assert plan.optimal
    assert d == pytest.approx(math.sqrt(plan.cost), abs=1e-12)


def test_tiny_costs_solved_exactly():
    # cost entries near 1e-10 must not be swallowed by solver tolerances
    mu = EmpiricalMeasure([[0.84148747, 0.84147098], [0.84147098, 0.84147098]], [1 / 3, 2 / 3])
    assert w2(mu, EmpiricalMeasure(mu.points.copy(), mu.weights.copy())) <= 1e-12


# metric properties

@settings(max_examples=60, deadline=None)
@given(clouds(dim=2), clouds(dim=2))
def test_symmetry_and_plan_feasibility(mu, nu):
    d1, p1 = wasserstein2(mu, nu)
    d2, p2 = wasserstein2(nu, mu)
    assert abs(d1 - d2) <= 1e-10
    assert plan_is_feasible(p1, mu, nu) and plan_is_feasible(p2, nu, mu)


@settings(max_examples=40, deadline=None)
@given(clouds(dim=1), clouds(dim=1), clouds(dim=1))
def test_triangle_inequality(a, b, c):
    assert w2(a, c) <= w2(a, b) + w2(b, c) + 1e-9


@settings(max_examples=40, deadline=None)
@given(clouds())
def test_identity_of_indiscernibles(mu):
    assert w2(mu, EmpiricalMeasure(mu.points.copy(), mu.weights.copy())) <= 1e-9


# pushforward

def test_pushforward_identity(rng):
    mu = EmpiricalMeasure(rng.normal(size=(5, 3)))
    assert pushforward(mu, lambda X: X).allclose(mu)


def test_pushforward_constant_collapses(rng):
    mu = EmpiricalMeasure(rng.normal(size=(5, 2)), rng.dirichlet(np.ones(5)))
    out = pushforward(mu, lambda X: np.array([1.0, -2.0]))
    assert out.n == 1 and np.allclose(out.points, [[1.0, -2.0]])
    assert out.weights[0] == pytest.approx(1.0)


def test_pushforward_translation_distance(rng):
    mu = EmpiricalMeasure(rng.normal(size=(6, 2)), rng.dirichlet(np.ones(6)))
    c = np.array([0.3, -1.2])
    assert w2(pushforward(mu, lambda X: X + c), mu) == pytest.approx(np.linalg.norm(c), abs=1e-9)


def test_pushforward_scalar_map_changes_dimension():
    mu = EmpiricalMeasure([[3.0, 4.0], [0.0, 1.0]])
    out = pushforward(mu, lambda X: np.linalg.norm(X, axis=1))
    assert out.dim == 1 and sorted(out.points[:, 0]) == [1.0, 5.0]


def test_pushforward_nonfinite():
    with pytest.raises(NumericalError), np.errstate(divide="ignore", invalid="ignore"):
        pushforward(EmpiricalMeasure.dirac([0.0]), lambda X: X / 0.0)


@settings(max_examples=40, deadline=None)
@given(clouds(dim=2), st.floats(-2, 2), st.floats(-2, 2))
def test_pushforward_functorial(mu, a, b):
    f = lambda X: a * X + 1.0
    g = lambda X: np.sin(X) + b * X
    left = pushforward(pushforward(mu, f), g)
    right = pushforward(mu, lambda X: g(f(X)))
    assert w2(left, right) <= 1e-9


# moments and radius

@pytest.mark.parametrize("mu, expected", [
    (EmpiricalMeasure.dirac([3.0, 4.0]), 5.0),
    (EmpiricalMeasure([[-1.0], [1.0]]), 1.0),
    (EmpiricalMeasure.dirac([0.0]), 0.0),
])
def test_moment2(mu, expected):
    assert moment2(mu) == pytest.approx(expected)


def test_support_radius(rng):
    assert support_radius(EmpiricalMeasure.dirac([0.0, 0.0])) == 0.0
    assert support_radius(EmpiricalMeasure([[3.0, 4.0], [0.0, 1.0]])) == 5.0
    mu = EmpiricalMeasure(rng.normal(size=(4, 2)))
    assert support_radius(pushforward(mu, lambda X: 2 * X)) == pytest.approx(2 * support_radius(mu))


# perturb

def test_perturb_zero_step(rng):
    mu = EmpiricalMeasure(rng.normal(size=(4, 2)))
    assert perturb(mu, TangentVector.on(mu, rng.normal(size=(4, 2))), 0.0).allclose(mu)


@pytest.mark.parametrize("h", [-0.7, 0.1, 2.0])
def test_perturb_constant_is_translation(rng, h):
    mu = EmpiricalMeasure(rng.normal(size=(5, 2)), rng.dirichlet(np.ones(5)))
    c = np.array([1.0, 2.0])
    assert w2(perturb(mu, TangentVector.on(mu, c), h), mu) == pytest.approx(abs(h) * np.linalg.norm(c), abs=1e-9)


def test_perturb_collapse_to_origin(rng):
    mu = EmpiricalMeasure(rng.normal(size=(5, 2)))
    out = perturb(mu, TangentVector.from_map(mu, lambda X: -X), 1.0)
    assert out.n == 1 and np.allclose(out.points, 0.0) and out.weights[0] == pytest.approx(1.0)


def test_tangent_vector_base_mismatch(rng):
    mu = EmpiricalMeasure(rng.normal(size=(3, 2)))
    nu = EmpiricalMeasure(rng.normal(size=(3, 2)))
    with pytest.raises(BaseMismatchError):
        perturb(nu, TangentVector.on(mu, np.zeros((3, 2))), 0.1)


# superdifferential inequality

def test_gap_zero_direction(rng):
    mu = EmpiricalMeasure(rng.normal(size=(4, 2)))
    nu = EmpiricalMeasure(rng.normal(size=(3, 2)))
    assert abs(superdifferential_gap(mu, nu, TangentVector.on(mu, np.zeros((4, 2))), 0.5)) <= 1e-12


def test_gap_same_measure(rng):
    mu = EmpiricalMeasure(rng.normal(size=(5, 2)), rng.dirichlet(np.ones(5)))
    xi = TangentVector.on(mu, rng.normal(size=(5, 2)))
    for h in (1.0, 0.1, 0.01):
        assert superdifferential_gap(mu, mu, xi, h) <= 1e-12


@settings(max_examples=80, deadline=None)
@given(clouds(dim=2, max_atoms=8), clouds(dim=2, max_atoms=8), st.integers(0, 10), st.integers(0, 2**31))
def test_gap_nonpositive(mu, nu, k, seed):
    xi = TangentVector.on(mu, np.random.default_rng(seed).normal(size=mu.points.shape))
    assert superdifferential_gap(mu, nu, xi, 2.0**-k) <= 1e-9
