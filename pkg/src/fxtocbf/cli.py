"""Command line: ``fxtocbf run|validate|batch``.

Exit status: 0 clean run, 2 when any QP step failed, 1 on a configuration
error or an aborted simulation.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

from .config import load_scenario, parse_scenario, serialize
from .qp import format_problem
from .simulator import POLICIES, ScenarioConfig, ScenarioError, SimLog, audit, run

__all__ = ["RunManifest", "parse_scenario", "run_command", "write_timeseries", "main"]

EXIT_OK, EXIT_CONFIG, EXIT_QP = 0, 1, 2
BASE_COLUMNS = ("time", "id", "x", "y", "theta", "v", "u", "phi",
                "h_xp", "h_m", "h_vmin", "h_vmax", "V_xf", "qp_status")
TIMESERIES = "timeseries.csv"
REPORT = "report.json"


@dataclass(frozen=True)
class RunManifest:
    scenario: str
    out: str
    seed: Optional[int] = None
    policy: Optional[str] = None
    emit_qp_dumps: bool = False

    def __post_init__(self):
        if self.seed is not None and not 0 <= self.seed < 2 ** 64:
            raise ScenarioError("seed", "must be a 64-bit unsigned integer")
        if self.policy is not None and self.policy not in POLICIES:
            raise ScenarioError("policy", f"must be one of {POLICIES}")

    def apply(self, cfg: ScenarioConfig) -> ScenarioConfig:
        d = cfg.disturbance
        if self.seed is not None:
            d = dataclasses.replace(d, seed=self.seed)
        if self.policy is not None:
            d = dataclasses.replace(d, policy=self.policy)
        return dataclasses.replace(cfg, disturbance=d)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def columns(cfg: ScenarioConfig) -> tuple:
    return BASE_COLUMNS + tuple(f"w_{c}" for c in cfg.disturbance.channels)


def timeseries_text(log: SimLog) -> str:
    lines = [",".join(columns(log.config))]
    for r in log.records:
        s = r.state
        row = (r.time, r.id, s.x, s.y, s.theta, s.v, r.control.u, r.control.phi,
               *r.h, r.V_xf, r.qp_status, *r.w)
        lines.append(",".join(_fmt(float(q) if isinstance(q, int) and not isinstance(q, bool) else q)
                              for q in row))
    return "\n".join(lines) + "\n"


def write_timeseries(log: SimLog, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(timeseries_text(log))


def report_dict(log: SimLog, manifest: RunManifest, status: int) -> dict:
    rep = audit(log).as_dict()
    d = log.config.disturbance
    return {"scenario": manifest.scenario, "seed": d.seed, "policy": d.policy,
            "exit_status": status, "error": log.error, "steps": len(log.times()), **rep}


def run_command(manifest: RunManifest) -> int:
    try:
        cfg = manifest.apply(load_scenario(manifest.scenario))
    except (OSError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    log = run(cfg, keep_problems=manifest.emit_qp_dumps)
    rep = audit(log)
    status = EXIT_QP if rep.qp_failures else EXIT_OK
    if log.error is not None:
        print(f"error: simulation aborted: {log.error}", file=sys.stderr)
        status = EXIT_CONFIG
    os.makedirs(manifest.out, exist_ok=True)
    write_timeseries(log, os.path.join(manifest.out, TIMESERIES))
    with open(os.path.join(manifest.out, REPORT), "w", encoding="utf-8") as fh:
        json.dump(report_dict(log, manifest, status), fh, indent=2)
        fh.write("\n")
    if manifest.emit_qp_dumps:
        qdir = os.path.join(manifest.out, "qp")
        os.makedirs(qdir, exist_ok=True)
        for k, (t, vid, problem) in enumerate(log.problems):
            with open(os.path.join(qdir, f"step{k:06d}_{vid}.txt"), "w", encoding="utf-8") as fh:
                fh.write(f"# time {t!r} vehicle {vid}\n")
                fh.write(format_problem(problem))
    return status


def validate_command(path: str, echo: bool = False) -> int:
    try:
        cfg = load_scenario(path)
    except (OSError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if echo:
        sys.stdout.write(serialize(cfg))
    else:
        print(f"ok: {path} ({len(cfg.vehicles)} vehicles, {cfg.n_steps + 1} steps)")
    return EXIT_OK


def batch_command(paths, out: str, jobs: int = 1, **kw) -> int:
    manifests = []
    for p in paths:
        stem = os.path.splitext(os.path.basename(p))[0]
        try:
            manifests.append(RunManifest(p, os.path.join(out, stem), **kw))
        except ScenarioError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            codes = list(pool.map(run_command, manifests))
    else:
        codes = [run_command(m) for m in manifests]
    for m, c in zip(manifests, codes):
        print(f"{m.scenario}: exit {c}")
    if EXIT_CONFIG in codes:
        return EXIT_CONFIG
    return EXIT_QP if EXIT_QP in codes else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fxtocbf", description="Lane-change FxT CLF/CBF QP simulator")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="override the disturbance seed")
        p.add_argument("--policy", choices=POLICIES, default=None, help="override the disturbance policy")
        p.add_argument("--emit-qp-dumps", action="store_true", help="write every step's QP as text")

    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("--scenario", required=True)
    r.add_argument("--out", required=True)
    common(r)
    v = sub.add_parser("validate", help="check a scenario document")
    v.add_argument("--scenario", required=True)
    v.add_argument("--echo", action="store_true", help="print the canonical serialization")
    b = sub.add_parser("batch", help="simulate several scenarios")
    b.add_argument("--scenario", required=True, nargs="+")
    b.add_argument("--out", required=True)
    b.add_argument("--jobs", type=int, default=1)
    common(b)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "validate":
            return validate_command(args.scenario, args.echo)
        kw = dict(seed=args.seed, policy=args.policy, emit_qp_dumps=args.emit_qp_dumps)
        if args.verb == "run":
            return run_command(RunManifest(args.scenario, args.out, **kw))
        return batch_command(args.scenario, args.out, args.jobs, **kw)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
