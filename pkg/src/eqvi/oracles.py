"""Independent brute-force references at toy sizes.

The inner and outer solvers are validated against exhaustive enumeration:
every node is assigned a regime (box face, kink pin, or a smooth branch
interval), the reduced affine system of each assignment is solved by damped
fixed-point iteration on the full space-time matrix (no time marching), and
multiplier sign/interval conditions decide which assignments are genuine
solutions.  All of this is limited to p = 2, where the smooth parts are
affine and the enumeration is exact.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .grid import DIRICHLET, RESTRICTION, SpaceTimeField
from .inner_solver import InnerProblem
from .instance import QviInstance
from .operators import FrictionLaw, Interval, clarke_subdiff

EQ_TOL = 1e-10          # accepted equation residual after the FP solve
COND_TOL = 1e-9         # multiplier / membership slack
FP_TOL = 1e-13
FP_MAX_ITER = 50_000


class OracleFailure(RuntimeError):
    """No enumerated pattern verified; must not happen on valid instances."""


def system_matrix(grid, e_coef: float, eps: float = 0.0) -> np.ndarray:
    """Dense space-time operator of the p = 2 problem in density units."""
    m = grid.n_cols
    n = grid.nt * m
    dx2 = grid.dx ** 2
    inv_dt = 1.0 / grid.dt
    A = np.zeros((n, n))
    free_mode = grid.boundary != DIRICHLET
    for step in range(grid.nt):
        for j in range(m):
            i = step * m + j
            edges = 2
            if free_mode and (j == 0 or j == m - 1):
                edges = 1
            A[i, i] = inv_dt + eps + (e_coef if free_mode else 0.0) + e_coef * edges / dx2
            if j > 0:
                A[i, i - 1] -= e_coef / dx2
            if j < m - 1:
                A[i, i + 1] -= e_coef / dx2
            if step > 0:
                A[i, i - m] -= inv_dt
    return A


@dataclass
class _Regime:
    kind: str            # "pin" | "free"
    face: int = 0        # -1/+1: pin at -r/+r; 0: fixed pin or free interval
    value: float = 0.0   # fixed pin location
    lo_face: bool = False  # free interval lower bound is -r
    hi_face: bool = False  # free interval upper bound is +r
    lo: float = -np.inf
    hi: float = np.inf
    a_law: float = 0.0   # affine feedback on the interval: xi = a*x + c
    c_law: float = 0.0
    psi_sign: float = 0.0  # sign of x on the interval (for the |.| term)


def _law_affine(law: FrictionLaw | None, rep: float):
    """Affine form of the single-valued feedback on the piece containing rep."""
    if law is None:
        return 0.0, 0.0
    if law.kind == "smooth_power":
        if law.growth_exp != 1.0:
            raise OracleFailure("oracle supports smooth_power only with exponent 1")
        return law.slopes[0], 0.0
    iv = clarke_subdiff(law, rep)
    if not iv.degenerate:
        raise OracleFailure("representative point unexpectedly sits on a kink")
    return 0.0, iv.lo


def _node_regimes(cpsi: float, masked: bool, law: FrictionLaw | None,
                  r_floor: float) -> list:
    """Enumerate the regimes of one node; faces stay dynamic in r."""
    law_here = law if masked else None
    breakpoints = set()
    if law_here is not None:
        for k in law_here.kinks:
            if abs(k) >= r_floor:
                raise OracleFailure("law kinks must lie strictly inside the base box")
            breakpoints.add(float(k))
    if cpsi > 0.0:
        breakpoints.add(0.0)
    ks = sorted(breakpoints)
    regimes = [_Regime(kind="pin", face=-1), _Regime(kind="pin", face=+1)]
    for k in ks:
        regimes.append(_Regime(kind="pin", value=k))
    # open intervals between consecutive breakpoints and the faces
    bounds = [None] + ks + [None]  # None = dynamic face
    for lo_b, hi_b in zip(bounds[:-1], bounds[1:]):
        if lo_b is None and hi_b is None:
            rep = 0.0
        elif lo_b is None:
            rep = hi_b - max(1.0, abs(hi_b))
        elif hi_b is None:
            rep = lo_b + max(1.0, abs(lo_b))
        else:
            rep = 0.5 * (lo_b + hi_b)
        a, c = _law_affine(law_here, rep)
        regimes.append(_Regime(
            kind="free",
            lo_face=lo_b is None, hi_face=hi_b is None,
            lo=-np.inf if lo_b is None else lo_b,
            hi=np.inf if hi_b is None else hi_b,
            a_law=a, c_law=c,
            psi_sign=float(np.sign(rep)) if cpsi > 0.0 else 0.0,
        ))
    return regimes


def _pin_absorb(x_val: float, face: int, cpsi: float, masked: bool,
                law: FrictionLaw | None) -> tuple:
    """Total multiplier interval available at a pinned node."""
    lo = hi = 0.0
    if masked and law is not None:
        iv = clarke_subdiff(law, x_val)
        lo += iv.lo
        hi += iv.hi
    if cpsi > 0.0:
        if x_val == 0.0:
            lo -= cpsi
            hi += cpsi
        else:
            lo += cpsi * np.sign(x_val)
            hi += cpsi * np.sign(x_val)
    if face > 0:
        hi = np.inf   # normal cone at the upper face
    elif face < 0:
        lo = -np.inf  # normal cone at the lower face
    return lo, hi


def _split_multiplier(m_req: float, x_val: float, face: int, cpsi: float,
                      masked: bool, law: FrictionLaw | None) -> float:
    """Feedback part of a pinned node's multiplier (box-sum split)."""
    if not (masked and law is not None):
        return 0.0
    iv = clarke_subdiff(law, x_val)
    plo = phi = 0.0
    if cpsi > 0.0:
        if x_val == 0.0:
            plo, phi = -cpsi, cpsi
        else:
            plo = phi = cpsi * np.sign(x_val)
    target = min(max(m_req, iv.lo + plo), iv.hi + phi)
    return min(max(target - plo, iv.lo), iv.hi)


def _enumerate_solutions(grid, A: np.ndarray, b: np.ndarray, cpsi: np.ndarray,
                         masked: np.ndarray, law: FrictionLaw | None,
                         radius_fixed: float | None, constraint=None,
                         max_unknowns: int = 8):
    """Shared enumeration core; returns a list of (x, xi, radius) triples."""
    m = grid.n_cols
    n = grid.nt * m
    if n > max_unknowns:
        raise OracleFailure(f"{n} unknowns exceed the oracle limit {max_unknowns}")
    r_floor = radius_fixed if radius_fixed is not None else constraint.r0

    per_node = [_node_regimes(cpsi[i], bool(masked[i]), law, r_floor) for i in range(n)]
    combos = list(itertools.product(*[range(len(r)) for r in per_node]))
    B = len(combos)

    pin_mask = np.zeros((B, n), dtype=bool)
    pin_face = np.zeros((B, n))
    pin_val = np.zeros((B, n))
    a_diag = np.zeros((B, n))
    c_off = np.zeros((B, n))
    for bi, combo in enumerate(combos):
        for i, ri in enumerate(combo):
            reg = per_node[i][ri]
            if reg.kind == "pin":
                pin_mask[bi, i] = True
                pin_face[bi, i] = reg.face
                pin_val[bi, i] = reg.value
            else:
                a_diag[bi, i] = reg.a_law
                c_off[bi, i] = reg.c_law + reg.psi_sign * cpsi[i]

    tau = 0.9 / (np.max(np.sum(np.abs(A), axis=1)) + float(np.max(a_diag)) + 1e-30)
    free = ~pin_mask

    def solve_batch(r_b: np.ndarray) -> np.ndarray:
        pins = np.where(pin_face != 0.0, pin_face * r_b[:, None], pin_val)
        X = np.where(pin_mask, pins, 0.0)
        for it in range(FP_MAX_ITER):
            R = X @ A.T + a_diag * X + c_off - b
            step = tau * np.where(free, R, 0.0)
            X = X - step
            X = np.where(pin_mask, pins, X)
            if it % 25 == 0 and np.max(np.abs(step)) <= FP_TOL:
                break
        return X

    if radius_fixed is not None:
        r_b = np.full(B, radius_fixed)
        X = solve_batch(r_b)
    else:
        r_b = np.full(B, _radius_of(constraint, np.zeros(n), grid))
        for _ in range(200):
            X = solve_batch(r_b)
            if constraint.aggregator == "mean_abs":
                agg = np.mean(np.abs(X), axis=1)
            else:
                agg = np.sqrt(grid.dt * grid.dx * np.sum(X ** 2, axis=1))
            r_new = np.minimum(constraint.r0 + constraint.r1 * agg, constraint.r_max)
            if np.max(np.abs(r_new - r_b)) <= 1e-13:
                break
            r_b = 0.5 * (r_b + r_new)

    solutions = []
    scale = max(1.0, float(np.max(np.abs(b))))
    for bi, combo in enumerate(combos):
        Xb = X[bi]
        rb = r_b[bi]
        if np.max(np.abs(Xb)) > rb + COND_TOL:
            continue
        resid = A @ Xb - b  # smooth state residual, before feedback and psi
        ok = True
        xi = np.zeros(n)
        for i, ri in enumerate(combo):
            reg = per_node[i][ri]
            if reg.kind == "free":
                eq = resid[i] + a_diag[bi, i] * Xb[i] + c_off[bi, i]
                if abs(eq) > EQ_TOL * scale:
                    ok = False
                    break
                lo = -rb if reg.lo_face else reg.lo
                hi = rb if reg.hi_face else reg.hi
                if not (lo - COND_TOL <= Xb[i] <= hi + COND_TOL):
                    ok = False
                    break
                if reg.psi_sign != 0.0 and Xb[i] * reg.psi_sign < -COND_TOL:
                    ok = False
                    break
                if masked[i] and law is not None:
                    xi[i] = reg.a_law * Xb[i] + reg.c_law
            else:
                x_val = reg.face * rb if reg.face != 0 else reg.value
                m_req = -resid[i]
                alo, ahi = _pin_absorb(x_val, reg.face, cpsi[i], bool(masked[i]), law)
                if not (alo - COND_TOL <= m_req <= ahi + COND_TOL):
                    ok = False
                    break
                xi[i] = _split_multiplier(m_req, x_val, reg.face, cpsi[i],
                                          bool(masked[i]), law)
        if ok:
            solutions.append((Xb.copy(), xi, float(rb)))

    deduped = []
    for xb, xi, rb in solutions:
        if all(np.max(np.abs(xb - prev[0])) > 1e-8 for prev in deduped):
            deduped.append((xb, xi, rb))
    return deduped


def _radius_of(constraint, x_flat: np.ndarray, grid) -> float:
    if constraint.aggregator == "mean_abs":
        agg = float(np.mean(np.abs(x_flat)))
    else:
        agg = float(np.sqrt(grid.dt * grid.dx * np.sum(x_flat ** 2)))
    return float(min(constraint.r0 + constraint.r1 * agg, constraint.r_max))


def oracle_inner_vi(prob: InnerProblem, epsilon_reg: float = 0.0,
                    max_unknowns: int = 6) -> SpaceTimeField:
    """Reference solution of the inner problem by active-set enumeration.

    Limits: nt*nx <= 6 unknowns, p = 2, built-in psi with beta = 1 (or
    trivial).  Raises OracleFailure when no pattern verifies.
    """
    if prob.norm.p != 2.0:
        raise OracleFailure("inner oracle requires p = 2")
    g = prob.grid
    if not prob.psi.is_trivial() and prob.psi.beta != 1.0:
        raise OracleFailure("inner oracle requires beta = 1 for an active psi term")
    A = system_matrix(g, prob.f_params.e, eps=epsilon_reg)
    b = prob.load.values.ravel()
    cpsi = np.vstack([prob.psi.coefficient_row(prob.z.values[nrow])
                      for nrow in range(g.nt)]).ravel()
    masked = np.zeros(g.nt * g.n_cols, dtype=bool)
    sols = _enumerate_solutions(g, A, b, cpsi, masked, None, prob.radius,
                                max_unknowns=max_unknowns)
    if not sols:
        raise OracleFailure("no active-set pattern verified")
    best = sols[0][0]
    return SpaceTimeField(best.reshape(g.shape), g)


def oracle_qvi(inst: QviInstance, max_unknowns: int = 4) -> list:
    """All verified solution branches of the full problem on a toy instance.

    Limits: nt*nx <= 4 unknowns, p = 2, restriction-mode observation,
    friction laws with at most two kinks (affine pieces).  Returns a list
    of dicts with keys x, xi, radius.
    """
    if inst.norm.p != 2.0:
        raise OracleFailure("qvi oracle requires p = 2")
    if inst.gamma.mode != RESTRICTION:
        raise OracleFailure("qvi oracle supports restriction-mode observation only")
    if len(inst.law.kinks) > 2:
        raise OracleFailure("qvi oracle supports at most two kinks")
    if not inst.psi.is_trivial() and inst.psi.beta != 1.0:
        raise OracleFailure("qvi oracle requires beta = 1 for an active psi term")
    g = inst.grid
    A = system_matrix(g, inst.f_params.e, eps=0.0)
    b = inst.source.values.ravel()
    # psi coefficients depend on the solution through theta; the built-in
    # theta is constant for oracle instances, otherwise refuse
    if not inst.psi.is_trivial() and inst.psi.theta.kind != "const":
        raise OracleFailure("qvi oracle requires a constant theta weight")
    cpsi = np.vstack([np.where(inst.psi.mask, inst.psi.theta.c0, 0.0)
                      for _ in range(g.nt)]).ravel()
    masked = np.vstack([inst.gamma.mask for _ in range(g.nt)]).ravel()
    sols = _enumerate_solutions(g, A, b, cpsi, masked, inst.law, None,
                                constraint=inst.constraint,
                                max_unknowns=max_unknowns)
    out = []
    for xb, xi, rb in sols:
        out.append({
            "x": SpaceTimeField(xb.reshape(g.shape), g),
            "xi": xi.reshape(g.shape),
            "radius": rb,
        })
    return out


def oracle_clarke(law: FrictionLaw, s: float,
                  t_levels=(1e-3, 1e-4, 1e-5),
                  z_levels=(1e-3, 1e-4, 1e-5)) -> Interval:
    """Difference-quotient bracket of the subdifferential.

    Estimates the generalized directional derivatives in the directions
    +1 and -1 by max difference quotients over shrinking steps and base
    point perturbations; the implied interval converges to the analytic
    hull for piecewise-C^1 laws.
    """
    t_levels = tuple(float(t) for t in t_levels)
    z_levels = tuple(float(z) for z in z_levels)
    if any(t <= 0 for t in t_levels) or any(z <= 0 for z in z_levels):
        raise ValueError("level sequences must be positive")
    zs = [s] + [s + d for d in z_levels] + [s - d for d in z_levels]
    up = -np.inf
    down = -np.inf
    for z in zs:
        jz = float(law.value(z))
        for t in t_levels:
            up = max(up, (float(law.value(z + t)) - jz) / t)
            down = max(down, (float(law.value(z - t)) - jz) / t)
    return Interval(min(-down, up), max(-down, up))
