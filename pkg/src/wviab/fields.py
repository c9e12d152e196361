"""Registry of velocity-field families used by scenarios.

A :class:`FieldEntry` is a possibly measure-dependent field
``(t, X, mu) -> V`` evaluated row-wise on an (n, d) array ``X``. Each entry
carries the constants it satisfies:

* ``M``: |v(x)| <= M (1 + |x| + M2(mu))
* ``Lambda``: Lipschitz constant in x
* ``L``: sup-norm Lipschitz constant with respect to W2(mu, nu)

Measure-independent entries also satisfy |v(x)| <= M (1 + |x|).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ScenarioError
from .measures import EmpiricalMeasure

KERNELS = ("linear", "soft")


@dataclass(frozen=True)
class FieldEntry:
    fn: Callable[[float, np.ndarray, EmpiricalMeasure], np.ndarray]
    M: float
    Lambda: float
    L: float = 0.0
    measure_dependent: bool = False
    spec: dict = field(default_factory=dict, compare=False)

    def __call__(self, t: float, X: np.ndarray, mu: EmpiricalMeasure | None = None) -> np.ndarray:
        return self.fn(t, X, mu)


def zero(dim: int) -> FieldEntry:
    return FieldEntry(lambda t, X, mu: np.zeros_like(X), 0.0, 0.0, spec={"type": "zero"})


def constant(c) -> FieldEntry:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    return FieldEntry(
        lambda t, X, mu: np.broadcast_to(c, X.shape).copy(),
        float(np.linalg.norm(c)), 0.0, spec={"type": "constant", "c": c.tolist()},
    )


def linear(A, b=None) -> FieldEntry:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.zeros(A.shape[0]) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
    norm_a = float(np.linalg.norm(A, 2))
    return FieldEntry(
        lambda t, X, mu: X @ A.T + b,
        max(norm_a, float(np.linalg.norm(b))), norm_a,
        spec={"type": "linear", "A": A.tolist(), "b": b.tolist()},
    )


def attraction(lam: float, target) -> FieldEntry:
    target = np.atleast_1d(np.asarray(target, dtype=float))
    return FieldEntry(
        lambda t, X, mu: -lam * (X - target),
        lam * max(1.0, float(np.linalg.norm(target))), abs(lam),
        spec={"type": "attraction", "lambda": lam, "target": target.tolist()},
    )


def _kernel(name: str, strength: float) -> Callable[[np.ndarray], np.ndarray]:
    if name == "linear":
        return lambda z: -strength * z
    if name == "soft":
        return lambda z: -strength * z / np.sqrt(1.0 + np.einsum("...k,...k->...", z, z))[..., None]
    raise ScenarioError(f"unknown interaction kernel {name!r}; choose from {KERNELS}")


def interaction(kernel: str, strength: float) -> FieldEntry:
    """v(x) = int K(x - y) dmu(y) for K(z) = -k z or -k z / sqrt(1 + |z|^2).

    Both kernels are k-Lipschitz with |K(z)| <= k |z|, so M = Lambda = L = k.
    """
    K = _kernel(kernel, strength)
    if kernel == "linear":
        # closed form avoids the O(n N) pairwise array
        fn = lambda t, X, mu: -strength * (X - mu.mean())
    else:
        fn = lambda t, X, mu: np.einsum("j,ijk->ik", mu.weights, K(X[:, None, :] - mu.points[None, :, :]))
    k = abs(float(strength))
    return FieldEntry(fn, k, k, k, measure_dependent=True,
                      spec={"type": "interaction", "kernel": kernel, "strength": strength})


def from_spec(spec: dict, dim: int) -> FieldEntry:
    kind = spec.get("type")
    try:
        if kind == "zero":
            return zero(dim)
        if kind == "constant":
            return constant(spec["c"])
        if kind == "linear":
            return linear(spec["A"], spec.get("b"))
        if kind == "attraction":
            return attraction(float(spec["lambda"]), spec.get("target", [0.0] * dim))
        if kind == "interaction":
            return interaction(spec.get("kernel", "linear"), float(spec["strength"]))
    except KeyError as exc:
        raise ScenarioError(f"field entry {spec!r} is missing {exc}") from exc
    raise ScenarioError(f"unknown field type {kind!r}")
