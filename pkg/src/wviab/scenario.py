"""Scenario files: dynamics, initial measure, horizon and optional constraint/Lyapunov specs."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import fields
from .errors import ScenarioError
from .inclusions import Selection, SetValuedDynamics
from .measures import EmpiricalMeasure

FIXTURE_ENV = "WVIAB_FIXTURES"


def fixture_dir() -> Path:
    env = os.environ.get(FIXTURE_ENV)
    return Path(env) if env else Path(__file__).parent / "fixtures"


def resolve(path) -> Path:
    """Use ``path`` as given if it exists, else look it up under the fixture directory."""
    p = Path(path)
    if p.exists():
        return p
    parts = p.parts[1:] if p.parts and p.parts[0] == "fixtures" else p.parts
    candidate = fixture_dir().joinpath(*parts) if parts else fixture_dir()
    return candidate if candidate.exists() else p


@dataclass
class Scenario:
    dynamics: SetValuedDynamics
    family_specs: list
    mu0: EmpiricalMeasure
    horizon: float
    dt: float
    depth: int = 6
    seed: int = 0
    constraint: dict | None = None
    lyapunov: dict | None = None
    selection: Selection | None = None
    extra: dict = field(default_factory=dict)
    digest: str = ""

    @property
    def dim(self) -> int:
        return self.mu0.dim


def parse_dynamics(spec: dict, dim: int) -> tuple[SetValuedDynamics, list]:
    family = spec.get("family")
    if not family:
        raise ScenarioError("dynamics.family must list at least one field entry")
    entries = [fields.from_spec(e, dim) for e in family]
    dyn = SetValuedDynamics(
        tuple(entries),
        M=spec.get("M"),
        Lambda=spec.get("Lambda"),
        L=spec.get("L"),
    )
    return dyn, list(family)


def parse(data: dict, overrides: dict | None = None) -> Scenario:
    data = dict(data)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    try:
        mu0 = EmpiricalMeasure.from_dict(data["mu0"])
        dyn, specs = parse_dynamics(data["dynamics"], mu0.dim)
        horizon = float(data["horizon"])
        dt = float(data.get("dt", 1e-2))
    except KeyError as exc:
        raise ScenarioError(f"scenario is missing {exc}") from exc
    if horizon <= 0:
        raise ScenarioError("horizon must be positive")
    if dt <= 0 or (dyn.Lambda > 0 and dt > 1.0 / (2.0 * dyn.Lambda) + 1e-15):
        raise ScenarioError(f"dt={dt} must lie in (0, 1/(2 Lambda)] with Lambda={dyn.Lambda}")
    sel = Selection.from_dict(data["selection"]) if "selection" in data else None
    known = {"dynamics", "mu0", "horizon", "dt", "selection_depth", "seed", "constraint", "lyapunov", "selection"}
    digest = hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()
    return Scenario(
        dynamics=dyn,
        family_specs=specs,
        mu0=mu0,
        horizon=horizon,
        dt=dt,
        depth=int(data.get("selection_depth", 6)),
        seed=int(data.get("seed", 0)),
        constraint=data.get("constraint"),
        lyapunov=data.get("lyapunov"),
        selection=sel,
        extra={k: v for k, v in data.items() if k not in known},
        digest=digest,
    )


def load(path, overrides: dict | None = None) -> Scenario:
    with open(resolve(path)) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: {exc}") from exc
    return parse(data, overrides)
