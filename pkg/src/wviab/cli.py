"""Command-line entry point: ``wviab <command> [options]``.

Exit codes: 0 success, 1 selftest failure, 2 parse/scenario error,
3 dimension mismatch, 4 numerical error, 5 viability failed, 6 decay violated.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, acceptance
from . import lyapunov as lyap
from . import scenario as scen
from . import viability as viab
from .errors import DimensionError, NumericalError, ScenarioError
from .flows import VelocityField, fmt, solve_continuity
from .inclusions import Selection, filippov_track, reachable_sample, solve_selection
from .measures import EmpiricalMeasure, load_measure, wasserstein2

EXIT_OK, EXIT_SELFTEST, EXIT_PARSE, EXIT_DIM, EXIT_NUMERIC, EXIT_NOT_VIABLE, EXIT_DECAY = 0, 1, 2, 3, 4, 5, 6


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write(out: Path, name: str, text: str, written: list) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    p = out / name
    with open(p, "w", newline="") as fh:
        fh.write(text)
    written.append(p)
    return p


def write_manifest(out: Path, command: str, digest: str, seed, started: float, written: list) -> Path:
    manifest = {
        "tool": "wviab",
        "version": __version__,
        "command": command,
        "scenario_sha256": digest,
        "seed": seed,
        "wall_clock_s": round(time.perf_counter() - started, 6),
        "outputs": [{"path": p.name, "sha256": _sha256(p)} for p in written],
    }
    p = out / "manifest.json"
    p.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return p


def verify_manifest(path) -> bool:
    """True iff every listed output exists next to the manifest with the recorded hash."""
    path = Path(path)
    data = json.loads(path.read_text())
    return all((path.parent / o["path"]).exists() and _sha256(path.parent / o["path"]) == o["sha256"]
               for o in data["outputs"])


def _load_scenario(args) -> scen.Scenario:
    overrides = {"seed": args.seed, "dt": args.dt, "selection_depth": args.depth}
    return scen.load(args.scenario, overrides)


def cmd_w2(args) -> int:
    started = time.perf_counter()
    paths = [scen.resolve(args.measure_a), scen.resolve(args.measure_b)]
    a, b = (load_measure(p) for p in paths)
    dist, plan = wasserstein2(a, b)
    print(f"{dist:.11f}")
    out, written = Path(args.out), []
    _write(out, "plan.json", json.dumps(plan.to_dict()) + "\n", written)
    digest = hashlib.sha256(b"".join(p.read_bytes() for p in paths)).hexdigest()
    write_manifest(out, "w2", digest, args.seed, started, written)
    return EXIT_OK


def _default_selection(sc: scen.Scenario) -> Selection:
    if sc.selection is not None:
        return sc.selection
    return Selection.dyadic(0.0, sc.horizon, sc.depth, [0] * 2**sc.depth)


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    sc = _load_scenario(args)
    traj = solve_selection(sc.dynamics, _default_selection(sc), sc.mu0, sc.dt, T=sc.horizon)
    out, written = Path(args.out), []
    _write(out, "trajectory.csv", traj.to_csv(), written)
    write_manifest(out, "simulate", sc.digest, sc.seed, started, written)
    print(f"wrote {len(traj.times)} nodes to {out / 'trajectory.csv'}")
    return EXIT_OK


def cmd_filippov(args) -> int:
    started = time.perf_counter()
    sc = _load_scenario(args)
    if "reference" not in sc.extra:
        raise ScenarioError("filippov scenarios need a 'reference' field entry")
    from .fields import from_spec
    entry = from_spec(sc.extra["reference"], sc.dim)
    if entry.measure_dependent:
        raise ScenarioError("the reference field must not depend on the measure")
    w = VelocityField(lambda t, X: entry(t, X, None), entry.M, entry.Lambda, "reference")
    nu0 = EmpiricalMeasure.from_dict(sc.extra["nu0"]) if "nu0" in sc.extra else sc.mu0
    ref = solve_continuity(w, 0.0, sc.horizon, nu0, sc.dt)
    res = filippov_track(sc.dynamics, w, ref, sc.mu0, sc.dt)
    rows = ["t,realized,bound,eta"] + [
        f"{fmt(t)},{fmt(r)},{fmt(b)},{fmt(e)}"
        for t, r, b, e in zip(res.times, res.realized_distance, res.bound, res.eta)
    ]
    out, written = Path(args.out), []
    _write(out, "filippov.csv", "\n".join(rows) + "\n", written)
    _write(out, "trajectory.csv", res.trajectory.to_csv(), written)
    write_manifest(out, "filippov", sc.digest, sc.seed, started, written)
    ok = bool(np.all(res.realized_distance <= res.bound + 1e-6))
    print(f"final distance {res.realized_distance[-1]:.6g}, bound {res.bound[-1]:.6g}, bound respected: {ok}")
    return EXIT_OK


def cmd_reach(args) -> int:
    started = time.perf_counter()
    sc = _load_scenario(args)
    n = int(sc.extra.get("samples", 16))
    sample = reachable_sample(sc.dynamics, sc.mu0, sc.horizon, n, sc.dt, sc.seed, sc.depth, threads=args.threads)
    d = sc.dim
    lines = [",".join(["sample", "atom_id"] + [f"x_{k}" for k in range(d)] + ["weight"])]
    for s, mu in enumerate(sample.measures):
        for i, (x, w) in enumerate(zip(mu.points, mu.weights)):
            lines.append(",".join([str(s), str(i)] + [fmt(c) for c in x] + [fmt(w)]))
    out, written = Path(args.out), []
    _write(out, "reach.csv", "\n".join(lines) + "\n", written)
    _write(out, "selections.json", json.dumps([s.to_dict() for s in sample.selections]) + "\n", written)
    write_manifest(out, "reach", sc.digest, sc.seed, started, written)
    print(f"wrote {n} reachable endpoints at t={sc.horizon}")
    return EXIT_OK


def cmd_viable(args) -> int:
    started = time.perf_counter()
    sc = _load_scenario(args)
    if not sc.constraint:
        raise ScenarioError("viable scenarios need a 'constraint' entry")
    Q = viab.from_spec(sc.constraint)
    report = viab.viable_trajectory(sc.dynamics, Q, sc.mu0, sc.horizon, sc.depth, sc.dt, threads=args.threads)
    out, written = Path(args.out), []
    _write(out, "viability.json", json.dumps(report.to_dict(), sort_keys=True) + "\n", written)
    _write(out, "trajectory.csv", report.trajectory.to_csv(), written)
    write_manifest(out, "viable", sc.digest, sc.seed, started, written)
    if report.viable:
        print(f"viable: max node distance {report.g_values.max():.3g} <= {report.tolerance:.3g}")
        return EXIT_OK
    k = report.first_failure
    print(f"failed: first failing node {k} at t={report.trajectory.times[k]:.6g}, distance {report.g_values[k]:.6g}")
    return EXIT_NOT_VIABLE


def cmd_lyapunov(args) -> int:
    started = time.perf_counter()
    sc = _load_scenario(args)
    if not sc.lyapunov:
        raise ScenarioError("lyapunov scenarios need a 'lyapunov' entry")
    W = lyap.from_spec(sc.lyapunov, sc.dim)
    cert = lyap.stable_trajectory(sc.dynamics, W, sc.mu0, sc.horizon, sc.depth, sc.dt,
                                  window=sc.extra.get("window"), threads=args.threads)
    out, written = Path(args.out), []
    _write(out, "certificate.csv", cert.to_csv(), written)
    _write(out, "certificate.json", json.dumps(cert.to_dict(), sort_keys=True) + "\n", written)
    write_manifest(out, "lyapunov", sc.digest, sc.seed, started, written)
    if cert.certified:
        print(f"certified: min slack {cert.slack.min():.3g} >= -{cert.tolerance:.3g}")
        return EXIT_OK
    k = cert.first_violation
    print(f"violated: first violation at node {k}, t={cert.trajectory.times[k]:.6g}, slack {cert.slack[k]:.6g}")
    return EXIT_DECAY


def cmd_selftest(args) -> int:
    started = time.perf_counter()
    seed = 0 if args.seed is None else args.seed
    out = Path(args.out)
    results = acceptance.run_suite(seed, out, echo=print)
    det = acceptance.determinism_result(out, seed)
    print(det.line())
    results.append(det)
    written = sorted(p for p in out.iterdir() if p.name != "manifest.json")
    write_manifest(out, "selftest", "", seed, started, written)
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    return EXIT_OK if passed == len(results) else EXIT_SELFTEST


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common.add_argument("--depth", type=int, default=None, help="dyadic selection depth")
    common.add_argument("--dt", type=float, default=None, help="integration step")

    parser = argparse.ArgumentParser(prog="wviab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"wviab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("w2", parents=[common], help="exact W2 distance between two measure files")
    p.add_argument("measure_a")
    p.add_argument("measure_b")
    p.set_defaults(func=cmd_w2)
    for name, func, text in [
        ("simulate", cmd_simulate, "solve a continuity equation/inclusion along a selection"),
        ("filippov", cmd_filippov, "track a reference curve and report the Filippov bound"),
        ("reach", cmd_reach, "sample reachable measures with random selections"),
        ("viable", cmd_viable, "synthesize a viable trajectory for a constraint"),
        ("lyapunov", cmd_lyapunov, "synthesize an exponentially decaying trajectory"),
    ]:
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--scenario", required=True)
        p.set_defaults(func=func)
    p = sub.add_parser("selftest", parents=[common], help="run the bundled acceptance suite")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DimensionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIM
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ScenarioError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
