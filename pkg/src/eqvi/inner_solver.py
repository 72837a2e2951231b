"""Inner solver for the parameterized evolution variational inequality:
frozen constraint radius, frozen feedback selection, frozen first slot of
the bifunction.

The backward time difference, the time-local box and the separable
nonsmooth term make the problem decompose into nt sequential per-step
minimizations, each strictly convex (modulus at least 1/dt), so the
discrete solution map is single-valued.  Each step is solved by nonlinear
Gauss-Seidel sweeps with exact per-node 1-D solves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .grid import (
    DIRICHLET,
    FREE,
    ConfigurationError,
    Grid,
    NormParams,
    ShapeError,
    SpaceTimeField,
    apply_L,
    pair_X,
)
from .operators import PLaplacianParams, PsiSpec, apply_F, psi_eval


class NumericalFailure(RuntimeError):
    """NaN or non-finite values appeared during a solve."""


@dataclass(frozen=True, eq=False)
class InnerProblem:
    """Data of one inner solve: everything the outer loop froze."""

    f_params: PLaplacianParams
    psi: PsiSpec
    radius: float                # frozen constraint radius r(z)
    z: SpaceTimeField            # frozen first slot of the bifunction
    load: SpaceTimeField         # dual density E - gamma* xi
    grid: Grid
    norm: NormParams

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigurationError("frozen box radius must be positive")
        if self.f_params.p != self.norm.p:
            raise ConfigurationError("operator exponent and norm exponent disagree")
        if self.z.grid.shape != self.grid.shape or self.load.grid.shape != self.grid.shape:
            raise ShapeError("inner problem fields live on inconsistent grids")
        if self.psi.mask.shape != (self.grid.n_cols,):
            raise ShapeError("psi mask does not match the grid")


@dataclass(frozen=True)
class SolveOptions:
    tol_residual: float = 1e-9
    max_sweeps: int = 100_000
    relaxation: float = 1.0
    epsilon_reg: float = 0.0     # coefficient of the duality-map regularizer

    def __post_init__(self):
        if not self.tol_residual > 0:
            raise ConfigurationError("tol_residual must be positive")
        if self.max_sweeps < 1:
            raise ConfigurationError("max_sweeps must be positive")
        if not 0.0 < self.relaxation <= 1.0:
            raise ConfigurationError("relaxation must lie in (0, 1]")
        if self.epsilon_reg < 0:
            raise ConfigurationError("epsilon_reg must be nonnegative")


@dataclass
class ResidualReport:
    node_residual_max: float
    sweeps_used: int
    minty_gap: float
    converged: bool


def _kernel_args(prob: InnerProblem, opts: SolveOptions):
    g = prob.grid
    e_mass = prob.f_params.e if g.boundary == FREE else 0.0
    return dict(
        beta=prob.psi.beta,
        e_grad=prob.f_params.e,
        e_mass=e_mass,
        p=prob.norm.p,
        dx=g.dx,
        inv_dt=1.0 / g.dt,
        eps=opts.epsilon_reg,
        dirichlet=g.boundary == DIRICHLET,
    )


def _bounds_rows(prob: InnerProblem, bounds):
    """Per-node box rows: the constraint box, with optional pin overrides."""
    g = prob.grid
    if bounds is None:
        lo = np.full(g.shape, -prob.radius)
        hi = np.full(g.shape, prob.radius)
        return lo, hi
    lo, hi = bounds
    if lo.shape != g.shape or hi.shape != g.shape:
        raise ShapeError("bounds matrices have the wrong shape")
    return lo, hi


def solve_inner(prob: InnerProblem, opts: SolveOptions = SolveOptions(),
                x0: SpaceTimeField | None = None, bounds=None):
    """Time-march the per-step strictly monotone inclusions.

    Returns (solution field, ResidualReport).  Exhausting max_sweeps yields
    a non-converged report, never a silent wrong answer.  `bounds` may
    override the per-node box (used by the outer loop to pin kink nodes).
    """
    g = prob.grid
    ka = _kernel_args(prob, opts)
    lo_m, hi_m = _bounds_rows(prob, bounds)
    vals = np.zeros(g.shape) if x0 is None else x0.values.copy()
    if x0 is not None and x0.grid.shape != g.shape:
        raise ShapeError("initial guess has the wrong shape")
    u_prev = np.zeros(g.n_cols)
    total_sweeps = 0
    worst = 0.0
    ok = True
    for n in range(g.nt):
        u = np.ascontiguousarray(vals[n])
        cpsi = np.ascontiguousarray(prob.psi.coefficient_row(prob.z.values[n]))
        g_row = np.ascontiguousarray(prob.load.values[n])
        lo_r = np.ascontiguousarray(lo_m[n])
        hi_r = np.ascontiguousarray(hi_m[n])
        sweeps, res = _kernels.step_solve(
            u, u_prev, g_row, cpsi, lo_r, hi_r,
            ka["beta"], ka["e_grad"], ka["e_mass"], ka["p"],
            ka["dx"], ka["inv_dt"], ka["eps"], ka["dirichlet"],
            opts.relaxation, opts.tol_residual, opts.max_sweeps,
        )
        if res > opts.tol_residual and opts.relaxation == 1.0:
            # retry with damping engaged (sweep oscillation safeguard)
            sweeps2, res = _kernels.step_solve(
                u, u_prev, g_row, cpsi, lo_r, hi_r,
                ka["beta"], ka["e_grad"], ka["e_mass"], ka["p"],
                ka["dx"], ka["inv_dt"], ka["eps"], ka["dirichlet"],
                0.5, opts.tol_residual, opts.max_sweeps,
            )
            sweeps += sweeps2
        if not np.all(np.isfinite(u)):
            raise NumericalFailure(f"non-finite values at time step {n + 1}")
        total_sweeps += sweeps
        worst = max(worst, res)
        ok = ok and res <= opts.tol_residual
        vals[n] = u
        u_prev = u
    x = SpaceTimeField(vals, g)
    gap = minty_gap(prob, x, n_samples=32, epsilon_reg=opts.epsilon_reg) \
        if ok and bounds is None else 0.0
    return x, ResidualReport(node_residual_max=worst, sweeps_used=total_sweeps,
                             minty_gap=gap, converged=ok)


def vi_residual(prob: InnerProblem, x: SpaceTimeField, epsilon_reg: float = 0.0) -> float:
    """Max over nodes of |x - per-node best response|.

    Zero exactly at the discrete solution; continuous in x (the best
    response of a strongly convex scalar problem is continuous in its data).
    """
    if x.grid.shape != prob.grid.shape:
        raise ShapeError("residual operand has the wrong shape")
    g = prob.grid
    opts = SolveOptions(epsilon_reg=epsilon_reg)
    ka = _kernel_args(prob, opts)
    k = ka["e_grad"] / g.dx ** ka["p"]
    lo_m, hi_m = _bounds_rows(prob, None)
    u_prev = np.zeros(g.n_cols)
    worst = 0.0
    for n in range(g.nt):
        u = np.ascontiguousarray(x.values[n])
        cpsi = np.ascontiguousarray(prob.psi.coefficient_row(prob.z.values[n]))
        g_row = np.ascontiguousarray(prob.load.values[n])
        res = _kernels.step_residual(
            u, u_prev, g_row, cpsi,
            np.ascontiguousarray(lo_m[n]), np.ascontiguousarray(hi_m[n]),
            ka["beta"], k, ka["p"],
            ka["inv_dt"], ka["eps"], ka["e_mass"], ka["dirichlet"],
        )
        worst = max(worst, res)
        u_prev = u
    return float(worst)


def _psi_frozen(prob: InnerProblem, u: SpaceTimeField) -> float:
    return psi_eval(prob.psi, prob.z, u)


def minty_gap(prob: InnerProblem, x: SpaceTimeField, n_samples: int = 1000,
              seed: int = 0, epsilon_reg: float = 0.0) -> float:
    """Most negative sampled Minty inequality value (floored at 0).

    Samples feasible fields y and evaluates
    <L(y) + F(y) + eps*y - g, y - x> + Psi(z, y) - Psi(z, x); monotonicity
    makes this nonnegative at a solution for every feasible y.
    """
    g = prob.grid
    r = prob.radius
    if np.max(np.abs(x.values)) > r * (1.0 + 1e-12):
        raise ConfigurationError("minty_gap needs a feasible point")
    rng = np.random.default_rng(seed)
    psi_x = _psi_frozen(prob, x)

    def lhs(y: SpaceTimeField) -> float:
        op = apply_L(y).values + apply_F(prob.f_params, y).values \
            + epsilon_reg * y.values - prob.load.values
        diff = SpaceTimeField(y.values - x.values, g)
        return pair_X(SpaceTimeField(op, g), diff) + _psi_frozen(prob, y) - psi_x

    worst = np.inf
    n_random = max(1, n_samples // 2)
    for _ in range(n_random):
        y = SpaceTimeField(rng.uniform(-r, r, size=g.shape), g)
        worst = min(worst, lhs(y))
    # line segments from x toward random box vertices
    n_seg = max(1, n_samples - n_random)
    for _ in range(n_seg):
        vertex = r * rng.choice([-1.0, 1.0], size=g.shape)
        t = rng.choice([0.25, 0.5, 0.75, 1.0])
        y = SpaceTimeField((1.0 - t) * x.values + t * vertex, g)
        worst = min(worst, lhs(y))
    return float(min(0.0, worst))
