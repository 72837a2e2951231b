#!/usr/bin/env python3
"""Generate the shipped toy instance files.

Each candidate is accepted only when the branch-enumeration oracle verifies
at least one solution, the multi-start probe locates every oracle branch to
1e-6, every probe cluster matches an oracle branch, and the bound chain
holds.  Accepted instances are frozen as JSON under src/eqvi/instances/.
"""

import json
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from eqvi import certificates
from eqvi.grid import GammaSpec, Grid, NormParams, SpaceTimeField, norm_X
from eqvi.instance import QviInstance
from eqvi.operators import ConstraintMapSpec, FrictionLaw, PLaplacianParams, PsiSpec, ThetaFn
from eqvi.oracles import OracleFailure, oracle_qvi
from eqvi.outer_solver import probe_solution_set

OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "eqvi", "instances")

DESIGNS = [
    # (law kind, law params, grid, boundary, psi?, r0, r1, aggregator, load scale)
    ("abs", {"slopes": [0.3]}, (1, 1), "dirichlet", False, 1.0, 0.0, "mean_abs", 0.8),
    ("abs", {"slopes": [0.5]}, (2, 2), "dirichlet", False, 0.3, 0.0, "mean_abs", 2.5),
    ("abs", {"slopes": [0.4]}, (2, 2), "dirichlet", True, 0.8, 0.2, "mean_abs", 1.0),
    ("abs", {"slopes": [0.25]}, (1, 3), "dirichlet", False, 0.6, 0.1, "clipped_norm", 1.2),
    ("abs", {"slopes": [0.35]}, (1, 4), "dirichlet", True, 0.5, 0.0, "mean_abs", 0.9),
    ("neg_abs", {"slopes": [0.4]}, (1, 1), "dirichlet", False, 1.0, 0.0, "mean_abs", 0.0),
    ("neg_abs", {"slopes": [0.3]}, (1, 1), "dirichlet", False, 1.0, 0.0, "mean_abs", 2.0),
    ("neg_abs", {"slopes": [0.5]}, (1, 2), "dirichlet", False, 0.8, 0.1, "mean_abs", 3.0),
    ("zigzag", {"slopes": [-0.45, 0.15, 0.55], "kinks": [-0.2, 0.25]}, (2, 2), "dirichlet", False, 0.6, 0.1, "mean_abs", 0.8),
    ("neg_abs", {"slopes": [0.45]}, (1, 3), "dirichlet", False, 0.9, 0.0, "mean_abs", 3.0),
    ("zigzag", {"slopes": [-0.4, 0.1, 0.5], "kinks": [-0.25, 0.2]}, (1, 1), "dirichlet", False, 0.9, 0.0, "mean_abs", 0.3),
    ("zigzag", {"slopes": [-0.3, 0.2, 0.6], "kinks": [-0.3, 0.3]}, (1, 2), "dirichlet", False, 0.8, 0.1, "mean_abs", 0.5),
    ("zigzag", {"slopes": [0.5, -0.2, 0.5], "kinks": [-0.2, 0.2]}, (2, 1), "dirichlet", False, 0.7, 0.0, "mean_abs", 0.4),
    ("zigzag", {"slopes": [-0.35, 0.0, 0.4], "kinks": [-0.25, 0.25]}, (1, 3), "dirichlet", True, 0.8, 0.0, "mean_abs", 0.6),
    ("smooth_power", {"slopes": [0.3], "growth_exp": 1.0}, (2, 2), "dirichlet", False, 0.5, 0.0, "mean_abs", 1.5),
    ("smooth_power", {"slopes": [0.25], "growth_exp": 1.0}, (1, 4), "dirichlet", True, 0.6, 0.15, "mean_abs", 1.0),
    ("smooth_power", {"slopes": [0.2], "growth_exp": 1.0}, (1, 1), "free", False, 0.8, 0.0, "mean_abs", 0.7),
    ("abs", {"slopes": [0.3]}, (1, 1), "free", False, 0.6, 0.1, "mean_abs", 1.0),
    ("zigzag", {"slopes": [-0.3, 0.1, 0.45], "kinks": [-0.2, 0.2]}, (1, 1), "free", True, 0.7, 0.0, "mean_abs", 0.6),
    ("abs", {"slopes": [0.45]}, (2, 2), "dirichlet", True, 0.4, 0.1, "clipped_norm", 1.8),
]


def build(design, seed):
    kind, lp, (nx, nt), boundary, with_psi, r0, r1, agg, load_scale = design
    rng = np.random.default_rng(seed)
    grid = Grid(nx=nx, nt=nt, T=1.0, boundary=boundary)
    if grid.nt * grid.n_cols > 4:
        return None
    np2 = NormParams(2.0)
    law = FrictionLaw(kind=kind, slopes=tuple(lp["slopes"]),
                      kinks=tuple(lp.get("kinks", [])),
                      growth_exp=float(lp.get("growth_exp", 1.0)))
    if with_psi:
        mask = np.zeros(grid.n_cols, dtype=bool)
        mask[: max(1, grid.n_cols // 2)] = True
        psi = PsiSpec(theta=ThetaFn("const", round(float(rng.uniform(0.1, 0.4)), 3)),
                      beta=1.0, mask=mask)
    else:
        psi = PsiSpec(theta=ThetaFn("const", 1.0), beta=1.0,
                      mask=np.zeros(grid.n_cols, dtype=bool))
    e = round(float(rng.uniform(0.4, 1.5)), 3)
    vals = np.round(load_scale * rng.uniform(-1.0, 1.0, grid.shape), 4) \
        if load_scale > 0 else np.zeros(grid.shape)
    if kind == "neg_abs" and load_scale > 0:
        vals = np.round(load_scale * rng.uniform(-1.0, 1.0, grid.shape), 4)
    inst = QviInstance(
        grid=grid, norm=np2, f_params=PLaplacianParams(p=2.0, e=e), law=law,
        psi=psi,
        constraint=ConstraintMapSpec(r0=r0, r1=r1, aggregator=agg,
                                     r_max=max(2.0 * r0, r0 + 1.0)),
        source=SpaceTimeField(vals, grid),
        gamma=GammaSpec(mode="restriction", mask=np.ones(grid.n_cols, dtype=bool)),
        name=f"toy-{kind}")
    return inst


def valid(inst):
    try:
        certificates.certificate_for_instance(inst)
    except certificates.SmallnessError:
        return False, "smallness"
    try:
        branches = oracle_qvi(inst)
    except OracleFailure as err:
        return False, f"oracle: {err}"
    if not branches:
        return False, "no verified branch"
    probe = probe_solution_set(inst, n_starts=8, seed=0)
    if probe.n_failed:
        return False, "probe failures"
    for br in branches:
        dmin = min(
            (norm_X(SpaceTimeField(s.x.values - br["x"].values, inst.grid), inst.norm)
             for s in probe.clusters), default=np.inf)
        if dmin > 1e-7:
            return False, f"missed branch (d={dmin:.2e})"
    for s in probe.clusters:
        dmin = min(
            norm_X(SpaceTimeField(s.x.values - br["x"].values, inst.grid), inst.norm)
            for br in branches)
        if dmin > 1e-7:
            return False, f"spurious cluster (d={dmin:.2e})"
        if s.frozen_residual > 1e-7 or s.xi_membership_gap > 1e-12:
            return False, "residual too large"
    return True, f"{len(branches)} branch(es)"


def to_json(inst, design):
    kind, lp, (nx, nt), boundary, with_psi, r0, r1, agg, _ = design
    cfg = {
        "grid": {"nx": nx, "nt": nt, "T": 1.0, "a": 0.0, "b": 1.0, "boundary": boundary},
        "norm": {"p": 2.0},
        "operator_F": {"e": inst.f_params.e},
        "friction_law": {"kind": kind, "slopes": list(inst.law.slopes)},
        "psi": {
            "theta": {"kind": "const", "c0": inst.psi.theta.c0},
            "beta": 1.0,
            "mask": [bool(v) for v in inst.psi.mask],
        },
        "constraint_map": {"r0": r0, "r1": r1, "aggregator": agg,
                           "r_max": inst.constraint.r_max},
        "source_E": {"type": "values", "values": inst.source.values.tolist()},
        "gamma": {"mode": "restriction", "mask": [True] * inst.grid.n_cols},
    }
    if kind == "zigzag":
        cfg["friction_law"]["kinks"] = list(inst.law.kinks)
    if kind == "smooth_power":
        cfg["friction_law"]["growth_exp"] = inst.law.growth_exp
    return cfg


def main():
    written = 0
    for i, design in enumerate(DESIGNS):
        accepted = False
        for seed in range(200):
            inst = build(design, seed=1000 * i + seed)
            if inst is None:
                break
            ok, why = valid(inst)
            if ok:
                path = os.path.join(OUT_DIR, f"toy-qvi-{written:02d}.json")
                with open(path, "w") as fh:
                    json.dump(to_json(inst, design), fh, indent=2, sort_keys=True)
                    fh.write("\n")
                print(f"toy-qvi-{written:02d}: {design[0]} {design[2]} {design[3]} -> {why}")
                written += 1
                accepted = True
                break
        if not accepted:
            print(f"design {i} ({design[0]} {design[2]}) NEVER accepted: last reason {why}")
    print(f"{written} instances written")


if __name__ == "__main__":
    main()
