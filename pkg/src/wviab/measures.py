"""Finite particle measures, exact 2-Wasserstein transport and pushforwards.

Measures are weighted atom clouds. Optimal plans are computed exactly: the
equal-cardinality uniform case is an assignment problem, the general case a
transportation linear program whose vertex solution is refined on its support
so that marginals hold to machine precision.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import BaseMismatchError, DimensionError, NumericalError

MERGE_TOL = 1e-12
MARGINAL_TOL = 1e-10
_WEIGHT_INPUT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Probability measure sum_i w_i delta_{x_i} on R^d.

    ``points`` has shape (N, d), ``weights`` shape (N,). Zero-weight atoms are
    dropped and weights renormalized; both arrays are read-only afterwards.
    Duplicate atoms are allowed (only :func:`pushforward` merges).
    """

    points: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
            raise ValueError(f"points must be a non-empty (N, d) array, got shape {pts.shape}")
        if self.weights is None:
            w = np.full(pts.shape[0], 1.0 / pts.shape[0])
        else:
            w = np.array(self.weights, dtype=float).reshape(-1)
            if w.shape[0] != pts.shape[0]:
                raise ValueError(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(w))):
            raise NumericalError("measure contains non-finite coordinates or weights")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        keep = w > 0
        pts, w = pts[keep], w[keep]
        if pts.shape[0] == 0:
            raise ValueError("measure has no atom with positive weight")
        total = w.sum()
        if abs(total - 1.0) > _WEIGHT_INPUT_TOL:
            raise ValueError(f"weights sum to {total!r}, expected 1")
        w = w / total
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def _trusted(cls, points: np.ndarray, weights: np.ndarray) -> "EmpiricalMeasure":
        # Skip validation for internal hot loops (RK4 stages); caller guarantees invariants.
        obj = object.__new__(cls)
        object.__setattr__(obj, "points", points)
        object.__setattr__(obj, "weights", weights)
        return obj

    @classmethod
    def dirac(cls, x) -> "EmpiricalMeasure":
        return cls(np.atleast_1d(np.asarray(x, dtype=float))[None, :])

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @cached_property
    def base_hash(self) -> str:
        h = hashlib.sha1()
        h.update(np.ascontiguousarray(self.points).tobytes())
        h.update(np.ascontiguousarray(self.weights).tobytes())
        return h.hexdigest()

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def variance(self) -> float:
        c = self.points - self.mean()
        return float(self.weights @ np.einsum("ij,ij->i", c, c))

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "points": self.points.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EmpiricalMeasure":
        pts = np.asarray(data["points"], dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if "dim" in data and pts.shape[1] != int(data["dim"]):
            raise DimensionError(f"declared dim {data['dim']} but points have {pts.shape[1]} columns")
        return cls(pts, data.get("weights"))

    def allclose(self, other: "EmpiricalMeasure", atol: float = 1e-12) -> bool:
        """Atomwise equality (same ordering); use :func:`wasserstein2` for the metric notion."""
        return (
            self.points.shape == other.points.shape
            and np.allclose(self.points, other.points, rtol=0, atol=atol)
            and np.allclose(self.weights, other.weights, rtol=0, atol=atol)
        )


@dataclass(frozen=True)
class TransportPlan:
    """Sparse coupling: mass[k] moves from source atom source_index[k] to target_index[k]."""

    source_index: np.ndarray
    target_index: np.ndarray
    mass: np.ndarray
    cost: float
    optimal: bool = True

    def dense(self, n_source: int, n_target: int) -> np.ndarray:
        g = np.zeros((n_source, n_target))
        np.add.at(g, (self.source_index, self.target_index), self.mass)
        return g

    def to_dict(self) -> dict:
        pairs = [[int(i), int(j), float(m)] for i, j, m in zip(self.source_index, self.target_index, self.mass)]
        return {"pairs": pairs, "cost": float(self.cost)}

    def transposed(self) -> "TransportPlan":
        return TransportPlan(self.target_index, self.source_index, self.mass, self.cost, self.optimal)


@dataclass(frozen=True)
class TangentVector:
    """Vector field sampled at the atoms of a base measure (an element of L^2(mu))."""

    values: np.ndarray
    base_hash: str = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if not np.all(np.isfinite(v)):
            raise NumericalError("tangent vector has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def on(cls, mu: EmpiricalMeasure, values) -> "TangentVector":
        v = np.array(values, dtype=float)
        if v.ndim == 1 and mu.dim == 1:
            v = v[:, None]
        elif v.ndim == 1 and v.shape[0] == mu.dim:
            v = np.broadcast_to(v, mu.points.shape).copy()
        if v.shape != mu.points.shape:
            raise BaseMismatchError(f"tangent values shape {v.shape} != atom array shape {mu.points.shape}")
        return cls(v, mu.base_hash)

    @classmethod
    def from_map(cls, mu: EmpiricalMeasure, xi: Callable[[np.ndarray], np.ndarray]) -> "TangentVector":
        """Sample a map R^d -> R^d (vectorized over rows) at the atoms of ``mu``."""
        return cls.on(mu, xi(mu.points))

    def l2_norm_sq(self, mu: EmpiricalMeasure) -> float:
        _check_base(mu, self)
        return float(mu.weights @ np.einsum("ij,ij->i", self.values, self.values))


def _check_base(mu: EmpiricalMeasure, xi: TangentVector) -> None:
    if xi.base_hash != mu.base_hash or xi.values.shape != mu.points.shape:
        raise BaseMismatchError("tangent vector is not based on this measure")


def _check_dims(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> None:
    if mu.dim != nu.dim:
        raise DimensionError(f"dimension mismatch: {mu.dim} vs {nu.dim}")


def cost_matrix(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Squared Euclidean costs |x_i - y_j|^2, computed by differences (no cancellation)."""
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _is_uniform(w: np.ndarray) -> bool:
    return bool(np.all(np.abs(w - 1.0 / w.shape[0]) <= 1e-15))


def _solve_transport_lp(a: np.ndarray, b: np.ndarray, C: np.ndarray) -> np.ndarray:
    n, k = C.shape
    rows = sparse.kron(sparse.eye(n), np.ones((1, k)), format="csr")
    cols = sparse.kron(np.ones((1, n)), sparse.eye(k), format="csr")
    A_eq = sparse.vstack([rows, cols[:-1]]).tocsr()
    b_eq = np.concatenate([a, b[:-1]])
    # HiGHS tolerances are absolute, so normalize costs to O(1) before solving
    scale = C.max()
    c = C.ravel() / scale if scale > 0 else C.ravel()
    res = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs-ds",
                  options={"dual_feasibility_tolerance": 1e-10, "primal_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise NumericalError(f"transport LP failed: {res.message}")
    x = np.maximum(res.x, 0.0)
    support = np.flatnonzero(x > 0)
    # Vertex solutions live on a forest; re-solve the marginal equations on that support
    # so the mass balance holds to machine precision rather than LP tolerance.
    A_s = sparse.vstack([rows, cols]).tocsr()[:, support].toarray()
    rhs = np.concatenate([a, b])
    m_s, *_ = np.linalg.lstsq(A_s, rhs, rcond=None)
    if np.all(m_s >= -1e-14):
        refined = np.zeros_like(x)
        refined[support] = np.maximum(m_s, 0.0)
        if np.abs(A_s @ refined[support] - rhs).max() <= np.abs(A_s @ x[support] - rhs).max():
            x = refined
    return x.reshape(n, k)


def optimal_plan(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> TransportPlan:
    _check_dims(mu, nu)
    C = cost_matrix(mu.points, nu.points)
    n, k = C.shape
    if n == 1 or k == 1:
        si, ti = np.meshgrid(np.arange(n), np.arange(k), indexing="ij")
        si, ti = si.ravel(), ti.ravel()
        mass = (mu.weights[:, None] * nu.weights[None, :]).ravel()
    elif n == k and _is_uniform(mu.weights) and _is_uniform(nu.weights):
        si, ti = linear_sum_assignment(C)
        mass = np.full(n, 1.0 / n)
    else:
        G = _solve_transport_lp(mu.weights, nu.weights, C)
        si, ti = np.nonzero(G)
        mass = G[si, ti]
    cost = float(np.sum(mass * C[si, ti]))
    return TransportPlan(si, ti, mass, max(cost, 0.0), optimal=True)


def wasserstein2(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> tuple[float, TransportPlan]:
    """Exact W2 distance and an optimal plan between two particle measures."""
    plan = optimal_plan(mu, nu)
    return float(np.sqrt(plan.cost)), plan


def w2(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    return wasserstein2(mu, nu)[0]


def plan_is_feasible(plan: TransportPlan, mu: EmpiricalMeasure, nu: EmpiricalMeasure, tol: float = MARGINAL_TOL) -> bool:
    row = np.bincount(plan.source_index, weights=plan.mass, minlength=mu.n)
    col = np.bincount(plan.target_index, weights=plan.mass, minlength=nu.n)
    recomputed = float(np.sum(plan.mass * cost_matrix(mu.points, nu.points)[plan.source_index, plan.target_index]))
    return (
        bool(np.all(plan.mass >= 0))
        and np.abs(row - mu.weights).max() <= tol
        and np.abs(col - nu.weights).max() <= tol
        and abs(recomputed - plan.cost) <= tol
    )


def merge_atoms(points: np.ndarray, weights: np.ndarray, tol: float = MERGE_TOL) -> EmpiricalMeasure:
    """Collapse atoms closer than ``tol``; each cluster keeps its lowest-index location."""
    if points.shape[0] > 1:
        pairs = cKDTree(points).query_pairs(tol, output_type="ndarray")
        if len(pairs):
            n = points.shape[0]
            adj = sparse.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
            _, labels = connected_components(adj, directed=False)
            _, first = np.unique(labels, return_index=True)
            order = np.sort(first)
            lab_of_first = labels[order]
            remap = np.empty(labels.max() + 1, dtype=int)
            remap[lab_of_first] = np.arange(order.size)
            merged_w = np.bincount(remap[labels], weights=weights)
            return EmpiricalMeasure(points[order], merged_w)
    return EmpiricalMeasure(points, weights)


def pushforward(mu: EmpiricalMeasure, f: Callable[[np.ndarray], np.ndarray]) -> EmpiricalMeasure:
    """Image measure f#mu; ``f`` maps an (N, d) array of atoms to an (N, k) array."""
    img = np.asarray(f(mu.points), dtype=float)
    if img.ndim == 0:
        img = np.full((mu.n, 1), float(img))
    elif img.ndim == 1:
        # length-N output is a scalar map; anything else is a constant vector
        img = img[:, None] if img.shape[0] == mu.n else np.broadcast_to(img, (mu.n, img.shape[0]))
    if not np.all(np.isfinite(img)):
        raise NumericalError("pushforward image contains non-finite values")
    return merge_atoms(np.array(img), np.array(mu.weights))


def moment2(mu: EmpiricalMeasure) -> float:
    """Square root of the second moment, i.e. W2(mu, delta_0)."""
    return float(np.sqrt(mu.weights @ np.einsum("ij,ij->i", mu.points, mu.points)))


def support_radius(mu: EmpiricalMeasure) -> float:
    return float(np.max(np.linalg.norm(mu.points, axis=1)))


def perturb(mu: EmpiricalMeasure, xi: TangentVector, h: float) -> EmpiricalMeasure:
    """(Id + h xi)#mu."""
    _check_base(mu, xi)
    moved = mu.points + h * xi.values
    if not np.all(np.isfinite(moved)):
        raise NumericalError("perturbed atoms are non-finite")
    return merge_atoms(moved, np.array(mu.weights))


def superdifferential_gap(mu: EmpiricalMeasure, nu: EmpiricalMeasure, xi: TangentVector, h: float) -> float:
    """LHS minus RHS of the first-order upper expansion of W2^2/2 along (Id + h xi)#mu.

    Uses the optimal plan returned by :func:`wasserstein2`; the result is
    nonpositive up to round-off for every input.
    """
    _check_dims(mu, nu)
    _check_base(mu, xi)
    d0, plan = wasserstein2(mu, nu)
    d1, _ = wasserstein2(perturb(mu, xi, h), nu)
    x = mu.points[plan.source_index]
    y = nu.points[plan.target_index]
    v = xi.values[plan.source_index]
    inner = float(np.sum(plan.mass * np.einsum("ij,ij->i", v, x - y)))
    return 0.5 * d1**2 - 0.5 * d0**2 - h * inner - h**2 * xi.l2_norm_sq(mu)


def load_measure(path) -> EmpiricalMeasure:
    with open(path) as fh:
        return EmpiricalMeasure.from_dict(json.load(fh))


def dump_measure(mu: EmpiricalMeasure, path) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(mu.to_dict(), fh)
        fh.write("\n")
