"""Built-in cross-validation suite driven by the oracle-check subcommand."""

from __future__ import annotations

import numpy as np

from .grid import GammaSpec, Grid, NormParams, SpaceTimeField, norm_X
from .inner_solver import InnerProblem, solve_inner, vi_residual
from .instance import QviInstance
from .operators import (
    ConstraintMapSpec,
    FrictionLaw,
    PLaplacianParams,
    PsiSpec,
    ThetaFn,
    clarke_subdiff,
)
from .oracles import oracle_clarke, oracle_inner_vi, oracle_qvi
from .outer_solver import probe_solution_set

BUILTIN_LAWS = {
    "abs": FrictionLaw(kind="abs", slopes=(0.7,)),
    "neg_abs": FrictionLaw(kind="neg_abs", slopes=(0.4,)),
    "zigzag": FrictionLaw(kind="zigzag", slopes=(-0.5, 0.2, 0.8), kinks=(-0.3, 0.25)),
    "smooth_power": FrictionLaw(kind="smooth_power", slopes=(0.6,), growth_exp=1.0),
}


def trivial_psi(grid: Grid) -> PsiSpec:
    return PsiSpec(theta=ThetaFn("const", 1.0), beta=1.0,
                   mask=np.zeros(grid.n_cols, dtype=bool))


def clarke_check(law: FrictionLaw, n_points: int = 100, tol: float = 1e-3,
                 seed: int = 0):
    """Analytic subdifferential vs the difference-quotient bracket.

    Random points keep a guard distance from the kinks (inside the sampling
    window the quotient bracket is legitimately wide); the kinks themselves
    are always included and must match exactly as hulls.
    """
    rng = np.random.default_rng(seed)
    smooth = law.kind == "smooth_power"
    levels = (1e-5, 1e-6, 1e-7) if smooth else (1e-3, 1e-4, 1e-5)
    guard = 20.0 * max(levels)
    pts = list(law.kinks)
    while len(pts) < n_points:
        s = float(rng.uniform(-2.0, 2.0))
        if all(abs(s - k) > guard for k in law.kinks):
            pts.append(s)
    worst = 0.0
    for s in pts:
        a = clarke_subdiff(law, s)
        b = oracle_clarke(law, s, t_levels=levels, z_levels=levels)
        worst = max(worst, abs(a.lo - b.lo), abs(a.hi - b.hi))
    return worst <= tol, worst


def random_inner_instance(rng) -> InnerProblem:
    nx, nt = [(1, 2), (2, 2), (1, 4), (3, 2), (2, 3), (1, 6), (1, 5)][int(rng.integers(7))]
    g = Grid(nx=nx, nt=nt, T=float(rng.uniform(0.5, 2.0)))
    np2 = NormParams(2.0)
    fp = PLaplacianParams(p=2.0, e=float(rng.uniform(0.3, 2.0)))
    if rng.random() < 0.5:
        psi = trivial_psi(g)
    else:
        psi = PsiSpec(theta=ThetaFn("const", float(rng.uniform(0.1, 1.0))),
                      beta=1.0, mask=rng.random(g.n_cols) < 0.6)
    return InnerProblem(
        f_params=fp, psi=psi, radius=float(rng.uniform(0.05, 0.8)),
        z=SpaceTimeField(rng.standard_normal(g.shape), g),
        load=SpaceTimeField(rng.uniform(-3.0, 3.0, g.shape), g),
        grid=g, norm=np2)


def inner_agreement(n_instances: int = 200, tol: float = 1e-8, seed: int = 0):
    """solve_inner vs active-set enumeration on random toy instances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        prob = random_inner_instance(rng)
        x, rep = solve_inner(prob)
        if not rep.converged:
            return False, float("inf")
        ref = oracle_inner_vi(prob)
        worst = max(worst, float(np.max(np.abs(x.values - ref.values))))
        if worst > tol:
            return False, worst
    return True, worst


def builtin_toy_instances():
    """Small in-memory toy family for the qvi cross-check."""
    np2 = NormParams(2.0)
    out = []
    g = Grid(nx=1, nt=1, T=1.0)
    full = np.ones(g.n_cols, dtype=bool)
    out.append(QviInstance(
        grid=g, norm=np2, f_params=PLaplacianParams(p=2.0, e=0.1),
        law=FrictionLaw(kind="neg_abs", slopes=(0.4,)), psi=trivial_psi(g),
        constraint=ConstraintMapSpec(r0=1.0),
        source=SpaceTimeField(np.zeros(g.shape), g),
        gamma=GammaSpec(mode="restriction", mask=full), name="toy-negabs"))
    g2 = Grid(nx=2, nt=2, T=1.0)
    full2 = np.ones(g2.n_cols, dtype=bool)
    out.append(QviInstance(
        grid=g2, norm=np2, f_params=PLaplacianParams(p=2.0, e=0.8),
        law=FrictionLaw(kind="abs", slopes=(0.3,)),
        psi=PsiSpec(theta=ThetaFn("const", 0.2), beta=1.0,
                    mask=np.array([True, False])),
        constraint=ConstraintMapSpec(r0=0.5, r1=0.2, aggregator="mean_abs", r_max=1.0),
        source=SpaceTimeField(np.full(g2.shape, 1.2), g2),
        gamma=GammaSpec(mode="restriction", mask=full2), name="toy-abs-qvi"))
    return out


def qvi_agreement(tol: float = 1e-6, seed: int = 0):
    """Every oracle branch is found by the probe; no spurious solutions."""
    worst = 0.0
    for inst in builtin_toy_instances():
        branches = oracle_qvi(inst)
        if not branches:
            return False, float("inf")
        probe = probe_solution_set(inst, n_starts=5, seed=seed)
        for br in branches:
            dists = []
            for sol in probe.clusters:
                d = SpaceTimeField(sol.x.values - br["x"].values, inst.grid)
                dists.append(norm_X(d, inst.norm))
            if not dists or min(dists) > tol:
                return False, float(min(dists)) if dists else float("inf")
            worst = max(worst, float(min(dists)))
        for sol in probe.clusters:
            if sol.frozen_residual > tol or sol.xi_membership_gap > 1e-12:
                return False, float(sol.frozen_residual)
    return True, worst


def run_oracle_suite(seed: int = 0, n_inner: int = 60):
    """Full cross-validation table for the CLI; returns (rows, all_ok)."""
    rows = []
    for name, law in BUILTIN_LAWS.items():
        ok, worst = clarke_check(law, seed=seed)
        rows.append({"name": f"clarke-{name}", "ok": bool(ok),
                     "detail": f"worst endpoint error {worst:.2e}"})
    ok, worst = inner_agreement(n_instances=n_inner, seed=seed)
    rows.append({"name": "inner-active-set", "ok": bool(ok),
                 "detail": f"worst max-norm gap {worst:.2e} over {n_inner} instances"})
    ok, worst = qvi_agreement(seed=seed)
    rows.append({"name": "qvi-branch-enumeration", "ok": bool(ok),
                 "detail": f"worst branch distance {worst:.2e}"})
    return rows, all(r["ok"] for r in rows)
