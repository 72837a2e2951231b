"""Outer fixed-point loop resolving the quasi-variational and multivalued
structure: iterate (state, selection) -> (inner solve at the frozen data,
damped selection from the feedback intervals), along a decreasing
regularization schedule, with a multi-start probe of the solution set.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import certificates
from .grid import (
    RESTRICTION,
    TRACE,
    ConfigurationError,
    SpaceTimeField,
    apply_L,
    apply_gamma,
    dual_norm_X,
    dual_norm_Y,
    gamma_adjoint,
    norm_X,
)
from .inner_solver import InnerProblem, ResidualReport, SolveOptions, solve_inner, vi_residual
from .instance import QviInstance
from .operators import IntervalField, apply_F, apply_G, clarke_subdiff, constraint_radius

SELECTIONS = ("min-norm", "midpoint", "lo", "hi")

DEFAULT_EPS_SCHEDULE = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)

XI_MEMBERSHIP_TOL = 1e-12


@dataclass(frozen=True)
class OuterOptions:
    selection: str = "min-norm"
    damping: float = 0.5
    eps_schedule: tuple = DEFAULT_EPS_SCHEDULE
    tol_fp: float = 1e-7
    max_outer: int = 500
    inner: SolveOptions = field(default_factory=SolveOptions)

    def __post_init__(self):
        if self.selection not in SELECTIONS:
            raise ConfigurationError(f"unknown selection strategy {self.selection!r}")
        if not 0.0 < self.damping <= 1.0:
            raise ConfigurationError("damping must lie in (0, 1]")
        sched = tuple(float(e) for e in self.eps_schedule)
        if not sched or any(e <= 0 for e in sched):
            raise ConfigurationError("eps_schedule must be positive")
        if any(b > a for a, b in zip(sched, sched[1:])):
            raise ConfigurationError("eps_schedule must be non-increasing")
        object.__setattr__(self, "eps_schedule", sched)
        if not self.tol_fp > 0:
            raise ConfigurationError("tol_fp must be positive")
        if self.max_outer < 1:
            raise ConfigurationError("max_outer must be positive")


@dataclass
class QviSolution:
    x: SpaceTimeField
    xi: np.ndarray               # gamma-output shaped selection values
    outer_iters: int
    fp_residual: float
    converged: bool
    frozen_residual: float       # Problem-form residual with the constraint frozen at x
    xi_membership_gap: float
    stage_drifts: list           # ||x(eps_{i+1}) - x(eps_i)||_X per stage boundary
    inner_reports: list
    instance: QviInstance
    certificate: certificates.Certificate | None = None
    audit: certificates.AuditReport | None = None
    warnings: list = field(default_factory=list)
    start_tag: str = ""


def select_xi(ivf: IntervalField, current: np.ndarray | None, strategy: str,
              damping: float = 1.0) -> np.ndarray:
    """Measurable selection from the feedback intervals.

    min-norm picks the point of smallest magnitude, midpoint the center,
    lo/hi the extremes; with `current` given the pick is damped against the
    clip of the current selection into the new intervals (stays inside by
    convexity).
    """
    if strategy == "min-norm":
        pick = np.clip(0.0, ivf.lo, ivf.hi)
    elif strategy == "midpoint":
        pick = 0.5 * (ivf.lo + ivf.hi)
    elif strategy == "lo":
        pick = ivf.lo.copy()
    elif strategy == "hi":
        pick = ivf.hi.copy()
    else:
        raise ConfigurationError(f"unknown selection strategy {strategy!r}")
    if current is None:
        return np.asarray(pick, dtype=float)
    return damping * pick + (1.0 - damping) * ivf.clip(current)


def _load_for(inst: QviInstance, xi: np.ndarray) -> SpaceTimeField:
    adj = gamma_adjoint(xi, inst.gamma, inst.grid)
    return SpaceTimeField(inst.source.values - adj.values, inst.grid)


class _KinkPinner:
    """Kink-parking for the fixed-point loop.

    A damped selection cannot settle on a solution whose observation sits
    exactly at a kink with an interior multiplier: the feedback interval
    collapses to alternating one-sided values and the loop enters a period-2
    cycle.  This helper watches for persistent sign flips of the observation
    across each kink, pins the oscillating node to the kink point (a
    degenerate per-node box in the inner solve), and recovers the multiplier
    from the stationarity of the pinned node; the pin is released when the
    recovered multiplier leaves the admissible interval.
    """

    FLIPS_TO_PIN = 4
    FORGET_EVERY = 12
    MAX_ATTEMPTS = 3

    def __init__(self, inst: QviInstance, eqtol: float = 1e-9):
        self.inst = inst
        self.kinks = tuple(inst.law.kinks)
        self.gshape = inst.gamma_shape()
        self.prev_state = np.zeros((len(self.kinks),) + self.gshape)
        self.flips = np.zeros((len(self.kinks),) + self.gshape, dtype=int)
        self.iterations = 0
        self.pins: dict = {}
        self.attempts: dict = {}
        self.eqtol = eqtol
        # scale of the feedback in the state equation (adjoint weight)
        self.eqscale = 1.0 if inst.gamma.mode == RESTRICTION else 1.0 / inst.grid.dx

    def active(self) -> bool:
        return bool(self.pins)

    def _x_node(self, node):
        n, i = node
        if self.inst.gamma.mode == TRACE:
            return (n, 0 if i == 0 else self.inst.grid.n_cols - 1)
        return (n, i)

    def observe(self, y_values: np.ndarray) -> bool:
        """Track kink-state transitions of the observation; returns True
        when a new pin engaged.

        A transition is any change of the sign state in {-1, 0, +1} relative
        to the kink (escape-and-return cycles include the state 0, so plain
        sign products would miss them).  Counts are halved periodically so a
        transient crossing never accumulates to the pin threshold.
        """
        engaged = False
        self.iterations += 1
        forget = self.iterations % self.FORGET_EVERY == 0
        for ki, k in enumerate(self.kinks):
            s = np.sign(y_values - k)
            self.flips[ki] += s != self.prev_state[ki]
            self.prev_state[ki] = s
            if forget:
                self.flips[ki] //= 2
            for idx in np.argwhere(self.flips[ki] >= self.FLIPS_TO_PIN):
                node = tuple(int(v) for v in idx)
                if node in self.pins:
                    continue
                if self.inst.gamma.mode == RESTRICTION and not self.inst.gamma.mask[node[1]]:
                    continue
                if self.attempts.get((node, ki), 0) >= self.MAX_ATTEMPTS:
                    continue
                self.pins[node] = float(k)
                self.attempts[(node, ki)] = self.attempts.get((node, ki), 0) + 1
                self.flips[ki][node] = 0
                engaged = True
        return engaged

    def bounds(self, radius: float):
        """Per-node boxes: the constraint box with pinned nodes collapsed."""
        if not self.pins:
            return None
        g = self.inst.grid
        lo = np.full(g.shape, -radius)
        hi = np.full(g.shape, radius)
        for node, k in self.pins.items():
            xn = self._x_node(node)
            lo[xn] = k
            hi[xn] = k
        return lo, hi

    def _psi_interval(self, x_col: int, z_val: float, k: float):
        psi = self.inst.psi
        if not psi.mask[x_col]:
            return 0.0, 0.0
        c = float(psi.theta(np.asarray(z_val)))
        if psi.beta == 1.0:
            if k == 0.0:
                return -c, c
            return c * np.sign(k), c * np.sign(k)
        v = c * psi.beta * abs(k) ** (psi.beta - 1.0) * np.sign(k)
        return v, v

    def recover(self, z_new: SpaceTimeField, xi: np.ndarray, eps: float) -> np.ndarray:
        """Stationarity multipliers of the pinned nodes; releases pins whose
        required multiplier is inadmissible.  Returns the updated selection."""
        if not self.pins:
            return xi
        inst = self.inst
        smooth = (apply_L(z_new).values + eps * z_new.values
                  + apply_F(inst.f_params, z_new).values - inst.source.values)
        xi = xi.copy()
        for node, k in list(self.pins.items()):
            xn = self._x_node(node)
            m_req = -float(smooth[xn])
            plo, phi = self._psi_interval(xn[1], float(z_new.values[xn]), k)
            iv = clarke_subdiff(inst.law, k)
            llo, lhi = iv.lo * self.eqscale, iv.hi * self.eqscale
            tol = self.eqtol * max(1.0, abs(m_req))
            if not (llo + plo - tol <= m_req <= lhi + phi + tol):
                del self.pins[node]
            target = min(max(m_req, llo + plo), lhi + phi)
            xi_eq = min(max(target - plo, llo), lhi)
            xi[node] = xi_eq / self.eqscale
        return xi


def _inner_problem(inst: QviInstance, z: SpaceTimeField, xi: np.ndarray) -> InnerProblem:
    return InnerProblem(
        f_params=inst.f_params,
        psi=inst.psi,
        radius=constraint_radius(inst.constraint, z),
        z=z,
        load=_load_for(inst, xi),
        grid=inst.grid,
        norm=inst.norm,
    )


def solve_qvi(inst: QviInstance, opts: OuterOptions = OuterOptions(),
              x0: SpaceTimeField | None = None, force: bool = False,
              certificate: certificates.Certificate | None = None) -> QviSolution:
    """Fixed-point continuation for the full problem.

    For each regularization weight (warm-started along the schedule):
    iterate z -> inner solve with radius r(z) and load E - gamma* xi,
    then update xi by a damped selection from the feedback at the new
    state.  The returned pair is post-verified: frozen-constraint residual
    and nodewise membership of xi in the feedback intervals.
    """
    warnings: list[str] = []
    cert = certificate
    if cert is None:
        try:
            cert = certificates.certificate_for_instance(inst)
        except certificates.SmallnessError as err:
            if not force:
                raise
            warnings.append(f"smallness violated, forced solve: {err}")
            cert = None

    z = SpaceTimeField.zeros(inst.grid) if x0 is None else x0
    ivf = apply_G(inst.law, apply_gamma(z, inst.gamma), inst.gamma, inst.grid)
    xi = select_xi(ivf, None, opts.selection)
    pinner = _KinkPinner(inst)

    inner_reports: list[ResidualReport] = []
    stage_drifts: list[float] = []
    total_iters = 0
    fp_res = np.inf
    converged_all = True
    x_prev_stage = None

    for eps in opts.eps_schedule:
        inner_opts = SolveOptions(
            tol_residual=opts.inner.tol_residual,
            max_sweeps=opts.inner.max_sweeps,
            relaxation=opts.inner.relaxation,
            epsilon_reg=eps,
        )
        stage_converged = False
        for _ in range(opts.max_outer):
            prob = _inner_problem(inst, z, xi)
            z_new, report = solve_inner(prob, inner_opts, x0=z,
                                        bounds=pinner.bounds(prob.radius))
            inner_reports.append(report)
            total_iters += 1
            if not report.converged:
                converged_all = False
            y_new = apply_gamma(z_new, inst.gamma)
            pin_engaged = pinner.observe(y_new.values)
            ivf = apply_G(inst.law, y_new, inst.gamma, inst.grid)
            xi_new = select_xi(ivf, xi, opts.selection, opts.damping)
            xi_new = pinner.recover(z_new, xi_new, eps)
            diff = SpaceTimeField(z_new.values - z.values, inst.grid)
            fp_res = norm_X(diff, inst.norm) + dual_norm_Y(
                xi_new - xi, inst.gamma, inst.grid, inst.norm)
            z, xi = z_new, xi_new
            if cert is not None:
                if norm_X(z, inst.norm) > cert.state_bound * (1.0 + 1e-6):
                    warnings.append("self-map violation: iterate left the state ball")
                if dual_norm_X(apply_L(z), inst.norm) > cert.derivative_bound * (1.0 + 1e-6):
                    warnings.append("self-map violation: iterate left the derivative ball")
            if fp_res <= opts.tol_fp and not pin_engaged:
                stage_converged = True
                break
        if x_prev_stage is not None:
            drift = SpaceTimeField(z.values - x_prev_stage.values, inst.grid)
            stage_drifts.append(norm_X(drift, inst.norm))
        x_prev_stage = z
        if not stage_converged:
            converged_all = False
            break

    # final re-selection into the intervals at the returned state
    ivf = apply_G(inst.law, apply_gamma(z, inst.gamma), inst.gamma, inst.grid)
    xi = ivf.clip(xi)
    membership = ivf.membership_gap(xi)
    frozen = vi_residual(_inner_problem(inst, z, xi), z, epsilon_reg=0.0)
    converged = bool(converged_all and frozen <= 10.0 * opts.tol_fp
                     and membership <= XI_MEMBERSHIP_TOL)

    sol = QviSolution(
        x=z, xi=xi, outer_iters=total_iters, fp_residual=float(fp_res),
        converged=converged, frozen_residual=float(frozen),
        xi_membership_gap=float(membership), stage_drifts=stage_drifts,
        inner_reports=inner_reports, instance=inst, certificate=cert,
        warnings=warnings,
    )
    if cert is not None:
        sol.audit = certificates.audit_solution(cert, sol)
        if converged and not sol.audit.ok:
            sol.warnings.append("certificate audit failed at the returned solution")
    return sol


@dataclass
class ProbeResult:
    clusters: list            # one representative QviSolution per cluster
    cluster_sizes: list
    n_converged: int
    n_failed: int
    solutions: list           # all converged solutions, deterministic order


CLUSTER_TOL = 1e-5


def probe_solution_set(inst: QviInstance, n_starts: int = 8, seed: int = 0,
                       opts: OuterOptions = OuterOptions(), force: bool = False,
                       strategies: tuple = SELECTIONS) -> ProbeResult:
    """Multi-start probe: anchor starts (zero field, near both box faces)
    plus random feasible fields, crossed with the selection strategies;
    converged outputs are clustered by X-norm distance."""
    cert = None
    try:
        cert = certificates.certificate_for_instance(inst)
    except certificates.SmallnessError:
        if not force:
            raise
    rng = np.random.default_rng(seed)
    g = inst.grid
    r0 = inst.constraint.r0
    starts = [
        ("zero", SpaceTimeField.zeros(g)),
        ("plus", SpaceTimeField(np.full(g.shape, 0.9 * r0), g)),
        ("minus", SpaceTimeField(np.full(g.shape, -0.9 * r0), g)),
    ]
    for i in range(max(0, n_starts - len(starts))):
        starts.append((f"rand{i}", SpaceTimeField(rng.uniform(-0.9 * r0, 0.9 * r0, g.shape), g)))

    tasks = []
    for tag, x0 in starts[:max(n_starts, 1)]:
        for strat in strategies:
            tasks.append((tag, x0, strat))

    def run(task):
        tag, x0, strat = task
        o = OuterOptions(selection=strat, damping=opts.damping,
                         eps_schedule=opts.eps_schedule, tol_fp=opts.tol_fp,
                         max_outer=opts.max_outer, inner=opts.inner)
        sol = solve_qvi(inst, o, x0=x0, force=force, certificate=cert)
        sol.start_tag = f"{tag}/{strat}"
        return sol

    n_threads = int(os.environ.get("EQVI_THREADS", "0") or "0")
    if n_threads > 0:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    solutions = [s for s in results if s.converged]
    n_failed = len(results) - len(solutions)

    clusters: list[QviSolution] = []
    sizes: list[int] = []
    for sol in solutions:
        placed = False
        for i, rep in enumerate(clusters):
            d = SpaceTimeField(sol.x.values - rep.x.values, g)
            if norm_X(d, inst.norm) < CLUSTER_TOL:
                sizes[i] += 1
                placed = True
                break
        if not placed:
            clusters.append(sol)
            sizes.append(1)
    return ProbeResult(clusters=clusters, cluster_sizes=sizes,
                       n_converged=len(solutions), n_failed=n_failed,
                       solutions=solutions)
