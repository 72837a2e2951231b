"""Command-line surface.

Subcommands: solve, certify, probe, control, oracle-check.  Exit codes are
a stable contract: 0 success, 1 config error, 2 non-convergence,
3 certificate refusal.  All outputs are deterministic for a fixed
(config, seed, flags) triple with EQVI_THREADS=0, and files are written
atomically via temp-file rename.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import certificates
from .config import ConfigError, build_control_problem, build_instance, build_outer_options, load_config
from .control import ProbeOptions, SearchSpec, plant_instance, refinement_study, solve_control
from .grid import BoundaryField, SpaceTimeField, field_to_csv
from .outer_solver import OuterOptions, probe_solution_set, solve_qvi

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NONCONVERGED = 2
EXIT_REFUSED = 3


def _atomic_write(path: str, text: str):
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path: str, obj):
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _xi_field(sol):
    inst = sol.instance
    if inst.gamma.mode == "trace":
        return BoundaryField(sol.xi, inst.grid)
    return SpaceTimeField(sol.xi, inst.grid)


def _solution_report(sol, include_fields=True) -> dict:
    rep = {
        "instance": sol.instance.name,
        "converged": sol.converged,
        "fp_residual": sol.fp_residual,
        "frozen_constraint_residual": sol.frozen_residual,
        "xi_membership_gap": sol.xi_membership_gap,
        "outer_iters": sol.outer_iters,
        "stage_drifts": list(sol.stage_drifts),
        "inner_sweeps_total": int(sum(r.sweeps_used for r in sol.inner_reports)),
        "worst_inner_residual": float(max((r.node_residual_max for r in sol.inner_reports), default=0.0)),
        "warnings": list(sol.warnings),
        "state_norm": None,
        "audit": sol.audit.as_dict() if sol.audit is not None else None,
        "smallness": None,
    }
    from .grid import norm_X

    rep["state_norm"] = norm_X(sol.x, sol.instance.norm)
    if sol.certificate is not None:
        rep["smallness"] = {
            "ok": sol.certificate.smallness_ok,
            "margin": sol.certificate.smallness_margin,
        }
    if include_fields:
        rep["columns"] = {
            "solution.csv": "t: time node, x: space node, value: state",
            "xi.csv": "t: time node, x: observation node, value: feedback selection",
        }
    return rep


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    inst = build_instance(cfg, name=os.path.basename(args.config))
    opts = build_outer_options(cfg)
    if args.tol is not None:
        opts = OuterOptions(selection=opts.selection, damping=opts.damping,
                            eps_schedule=opts.eps_schedule, tol_fp=args.tol,
                            max_outer=opts.max_outer, inner=opts.inner)
    if args.strict:
        report = certificates.validate_hypotheses(inst, seed=args.seed)
        if not report["ok"]:
            print("hypothesis validation failed:", file=sys.stderr)
            for name, chk in report["checks"].items():
                if not chk["ok"]:
                    print(f"  {name}: worst margin {chk['worst_margin']:.3e}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        sol = solve_qvi(inst, opts, force=args.force)
    except certificates.SmallnessError as err:
        _write_json(os.path.join(args.out, "report.json"),
                    {"instance": inst.name, "refused": True,
                     "smallness": {"ok": False, "statement": str(err)}})
        print(f"refused: smallness condition violated ({err})", file=sys.stderr)
        return EXIT_REFUSED
    os.makedirs(args.out, exist_ok=True)
    field_to_csv(sol.x, os.path.join(args.out, "solution.csv"))
    field_to_csv(_xi_field(sol), os.path.join(args.out, "xi.csv"))
    rep = _solution_report(sol)
    if sol.certificate is None and sol.warnings:
        rep["smallness"] = {"ok": False, "violated": True}
    _write_json(os.path.join(args.out, "report.json"), rep)
    print(f"converged={sol.converged} frozen_residual={sol.frozen_residual:.3e} "
          f"outer_iters={sol.outer_iters}")
    return EXIT_OK if sol.converged else EXIT_NONCONVERGED


def cmd_certify(args) -> int:
    cfg = load_config(args.config)
    inst = build_instance(cfg, name=os.path.basename(args.config))
    os.makedirs(args.out, exist_ok=True)
    hc = certificates.constants_for_instance(inst, seed=args.seed)
    sm = certificates.check_smallness(hc)
    out_path = os.path.join(args.out, "certificate.json")
    if not sm.ok:
        _write_json(out_path, {
            "smallness_ok": False,
            "smallness_margin": sm.margin,
            "violated_inequality": sm.statement,
            "constants": {k: getattr(hc, k) for k in hc.__dataclass_fields__},
        })
        print(f"smallness violated: {sm.statement}", file=sys.stderr)
        return EXIT_REFUSED
    cert = certificates.certificate_for_instance(inst, seed=args.seed)
    _write_json(out_path, cert.as_dict())
    print(f"smallness ok, margin {sm.margin:.6g}; state bound {cert.state_bound:.6g}")
    return EXIT_OK


def cmd_probe(args) -> int:
    cfg = load_config(args.config)
    inst = build_instance(cfg, name=os.path.basename(args.config))
    opts = build_outer_options(cfg)
    os.makedirs(args.out, exist_ok=True)
    try:
        result = probe_solution_set(inst, n_starts=args.starts, seed=args.seed,
                                    opts=opts, force=args.force)
    except certificates.SmallnessError as err:
        print(f"refused: smallness condition violated ({err})", file=sys.stderr)
        return EXIT_REFUSED
    from .grid import norm_X

    clusters = []
    for rep, size in zip(result.clusters, result.cluster_sizes):
        clusters.append({
            "state_norm": norm_X(rep.x, inst.norm),
            "members": size,
            "start": rep.start_tag,
            "frozen_constraint_residual": rep.frozen_residual,
            "audit_ok": None if rep.audit is None else rep.audit.ok,
        })
    _write_json(os.path.join(args.out, "clusters.json"), {
        "instance": inst.name,
        "n_clusters": len(clusters),
        "n_converged": result.n_converged,
        "n_failed": result.n_failed,
        "clusters": clusters,
    })
    print(f"{len(clusters)} cluster(s) from {result.n_converged} converged runs "
          f"({result.n_failed} failed)")
    return EXIT_OK if result.n_converged > 0 else EXIT_NONCONVERGED


def cmd_control(args) -> int:
    cfg = load_config(args.config)
    inst = build_instance(cfg, name=os.path.basename(args.config))
    space, rho, plant_seed, noise, probe_cfg = build_control_problem(cfg, inst)
    probe = ProbeOptions(n_starts=probe_cfg["n_starts"],
                         strategies=probe_cfg["strategies"],
                         outer=build_outer_options(cfg))
    cost, truth = plant_instance(plant_seed if args.seed == 0 else args.seed,
                                 space, noise_level=noise, rho=rho, probe=probe)
    os.makedirs(args.out, exist_ok=True)
    triple, value, sol, history = solve_control(
        space, cost, SearchSpec(kind="grid", resolution=args.grid_res), probe)
    lines = ["e," + ",".join(f"l{i}" for i in range(len(space.l_boxes)))
             + "," + ",".join(f"E{i}" for i in range(len(space.basis)))
             + ",cost,converged"]
    for rec in history.records:
        row = [f"{rec['e']:.17g}"] + [f"{v:.17g}" for v in rec["l"]] \
            + [f"{v:.17g}" for v in rec["E_coeffs"]] \
            + [f"{rec['cost']:.17g}", "1" if rec["converged"] else "0"]
        lines.append(",".join(row))
    _atomic_write(os.path.join(args.out, "control_history.csv"), "\n".join(lines) + "\n")
    if triple is None:
        _write_json(os.path.join(args.out, "best_triple.json"),
                    {"infeasible": True})
        print("all evaluations infeasible", file=sys.stderr)
        return EXIT_NONCONVERGED
    _write_json(os.path.join(args.out, "best_triple.json"), {
        "e": triple.e, "l": list(triple.l), "E_coeffs": list(triple.E_coeffs),
        "cost": value,
        "truth": {"e": truth.e, "l": list(truth.l), "E_coeffs": list(truth.E_coeffs)},
    })
    print(f"best cost {value:.6g} at e={triple.e:.6g}")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    from .oracle_suite import run_oracle_suite

    os.makedirs(args.out, exist_ok=True)
    rows, ok = run_oracle_suite(seed=args.seed)
    width = max(len(r["name"]) for r in rows)
    for r in rows:
        print(f"{r['name']:<{width}}  {'PASS' if r['ok'] else 'FAIL'}  {r['detail']}")
    _write_json(os.path.join(args.out, "oracle_report.json"), {"ok": ok, "rows": rows})
    return EXIT_OK if ok else EXIT_NONCONVERGED


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="eqvi",
        description="Numerical laboratory for evolution multivalued "
                    "quasi-variational inequalities with feedback.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", required=needs_config, help="instance JSON path")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--strict", action="store_true",
                       help="validate hypotheses on load")
        p.add_argument("--force", action="store_true",
                       help="solve even when the smallness condition fails")
        p.add_argument("--starts", type=int, default=8, help="probe starts")
        p.add_argument("--grid-res", type=int, default=9, dest="grid_res")
        p.add_argument("--tol", type=float, default=None, help="fixed-point tolerance")

    for name, fn in (("solve", cmd_solve), ("certify", cmd_certify),
                     ("probe", cmd_probe), ("control", cmd_control)):
        p = sub.add_parser(name)
        common(p)
        p.set_defaults(fn=fn)
    p = sub.add_parser("oracle-check")
    common(p, needs_config=False)
    p.set_defaults(fn=cmd_oracle_check)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except certificates.SmallnessError as err:
        print(f"refused: {err}", file=sys.stderr)
        return EXIT_REFUSED


if __name__ == "__main__":
    sys.exit(main())
