"""Derivative-free parameter identification over admissible boxes.

The cost of a control triple (operator coefficient, friction parameters,
source coefficients) is the probed infimum of the misfit-plus-regularizer
over the solution set of the induced instance; searches are grid
(deterministic reference), Nelder-Mead with restarts, and pure random.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from . import certificates
from .grid import ConfigurationError, SpaceTimeField
from .instance import QviInstance
from .operators import FrictionLaw
from .outer_solver import OuterOptions, probe_solution_set

INFEASIBLE = float("inf")


@dataclass(frozen=True)
class ControlSpace:
    """Admissible boxes around a template instance.

    The coefficient box must respect the operator's floor e_min; the source
    ranges over a fixed finite basis, which keeps the admissible source set
    compactly parameterized.
    """

    template: QviInstance
    e_box: tuple                      # (lo, hi) for the operator coefficient
    l_boxes: tuple                    # ((lo, hi), ...) per friction parameter
    basis: tuple                      # SpaceTimeField dual densities
    coeff_boxes: tuple                # ((lo, hi), ...) per basis coefficient

    def __post_init__(self):
        lo, hi = self.e_box
        if not (lo <= hi and lo >= self.template.f_params.e_min):
            raise ConfigurationError("coefficient box must sit above e_min")
        if len(self.l_boxes) != len(self.template.law.slopes):
            raise ConfigurationError("one box per friction parameter required")
        if len(self.coeff_boxes) != len(self.basis):
            raise ConfigurationError("one box per basis coefficient required")
        for b in tuple(self.l_boxes) + tuple(self.coeff_boxes):
            if not b[0] <= b[1]:
                raise ConfigurationError("empty admissible box")

    @property
    def n_params(self) -> int:
        return 1 + len(self.l_boxes) + len(self.coeff_boxes)

    def boxes(self) -> list:
        return [tuple(self.e_box)] + [tuple(b) for b in self.l_boxes] \
            + [tuple(b) for b in self.coeff_boxes]


@dataclass(frozen=True)
class ControlTriple:
    e: float
    l: tuple
    E_coeffs: tuple

    def __post_init__(self):
        object.__setattr__(self, "l", tuple(float(v) for v in self.l))
        object.__setattr__(self, "E_coeffs", tuple(float(v) for v in self.E_coeffs))

    def flat(self) -> np.ndarray:
        return np.array([self.e, *self.l, *self.E_coeffs])

    @classmethod
    def from_flat(cls, vec, space: ControlSpace) -> "ControlTriple":
        vec = np.asarray(vec, dtype=float)
        nl = len(space.l_boxes)
        return cls(e=float(vec[0]), l=tuple(vec[1:1 + nl]), E_coeffs=tuple(vec[1 + nl:]))


@dataclass(frozen=True)
class CostSpec:
    """Misfit against an observed state plus a coercive regularizer."""

    x_obs: SpaceTimeField
    misfit_weight: float = 1.0
    rho: float = 1e-6

    def __post_init__(self):
        if not self.rho > 0:
            raise ConfigurationError("regularization weight rho must be positive")

    def regularizer(self, triple: ControlTriple) -> float:
        return self.rho * float(np.sum(triple.flat() ** 2))

    def misfit(self, x: SpaceTimeField) -> float:
        g = x.grid
        d = x.values - self.x_obs.values
        return self.misfit_weight * float(g.dt * g.dx * np.sum(d * d))


@dataclass(frozen=True)
class ProbeOptions:
    n_starts: int = 3
    strategies: tuple = ("min-norm", "lo", "hi")
    outer: OuterOptions = field(default_factory=OuterOptions)
    seed: int = 0


def _triple_in_boxes(space: ControlSpace, triple: ControlTriple, tol: float = 1e-12) -> bool:
    for v, (lo, hi) in zip(triple.flat(), space.boxes()):
        if v < lo - tol or v > hi + tol:
            return False
    return True


def instantiate(space: ControlSpace, triple: ControlTriple) -> QviInstance:
    """Instance induced by a control triple."""
    t = space.template
    law = FrictionLaw(kind=t.law.kind, slopes=triple.l, kinks=t.law.kinks,
                      growth_exp=t.law.growth_exp)
    acc = np.zeros(t.grid.shape)
    for c, b in zip(triple.E_coeffs, space.basis):
        acc += c * b.values
    return QviInstance(
        grid=t.grid, norm=t.norm,
        f_params=replace(t.f_params, e=triple.e),
        law=law, psi=t.psi, constraint=t.constraint,
        source=SpaceTimeField(acc, t.grid), gamma=t.gamma,
        overrides=t.overrides, name=f"{t.name}@triple",
    )


def eval_cost(space: ControlSpace, cost: CostSpec, triple: ControlTriple,
              probe: ProbeOptions = ProbeOptions()):
    """Probed cost: min over solution-set cluster representatives of the
    misfit plus the regularizer, with the attaining state.

    Returns (value, solution-or-None, diagnostic).  Smallness failure or a
    fully non-converged probe yields the +inf sentinel, never a silently
    large finite value.
    """
    if not _triple_in_boxes(space, triple):
        raise ConfigurationError("control triple violates the admissible boxes")
    inst = instantiate(space, triple)
    try:
        result = probe_solution_set(inst, n_starts=probe.n_starts, seed=probe.seed,
                                    opts=probe.outer, strategies=probe.strategies)
    except certificates.SmallnessError as err:
        return INFEASIBLE, None, f"smallness violated: {err}"
    if not result.clusters:
        return INFEASIBLE, None, "no converged solution found"
    best_val, best_sol = np.inf, None
    for sol in result.clusters:
        val = cost.misfit(sol.x) + cost.regularizer(triple)
        if val < best_val:
            best_val, best_sol = val, sol
    return float(best_val), best_sol, "ok"


@dataclass(frozen=True)
class SearchSpec:
    kind: str                 # "grid" | "nelder-mead" | "random"
    resolution: int = 9       # grid points per dimension
    restarts: int = 3         # nelder-mead restarts
    n: int = 64               # random evaluations
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("grid", "nelder-mead", "random"):
            raise ConfigurationError(f"unknown search strategy {self.kind!r}")


@dataclass
class SearchHistory:
    records: list = field(default_factory=list)   # dicts per evaluation

    def add(self, triple, value, note, pruned=False):
        self.records.append({
            "e": triple.e, "l": list(triple.l), "E_coeffs": list(triple.E_coeffs),
            "cost": value, "converged": np.isfinite(value), "pruned": pruned,
            "note": note,
        })


def _grid_axes(space: ControlSpace, resolution: int) -> list:
    axes = []
    for lo, hi in space.boxes():
        if hi == lo:
            axes.append(np.array([lo]))
        else:
            axes.append(np.linspace(lo, hi, resolution))
    return axes


def solve_control(space: ControlSpace, cost: CostSpec, search: SearchSpec,
                  probe: ProbeOptions = ProbeOptions(), prune: bool = True):
    """Minimize the probed cost over the admissible boxes.

    Grid search is the deterministic reference strategy; the coercive
    regularizer allows pruning triples whose regularizer alone exceeds the
    incumbent (this can never change the argmin).  Returns
    (best triple, best cost, best solution, SearchHistory).
    """
    history = SearchHistory()
    best = (INFEASIBLE, None, None)  # value, triple, solution
    prune = prune and search.kind != "nelder-mead"  # inf poisons the simplex

    def consider(triple: ControlTriple, note: str = ""):
        nonlocal best
        if prune and cost.regularizer(triple) > best[0]:
            history.add(triple, INFEASIBLE, "pruned", pruned=True)
            return INFEASIBLE
        val, sol, diag = eval_cost(space, cost, triple, probe)
        history.add(triple, val, diag or note)
        if val < best[0]:
            best = (val, triple, sol)
        return val

    if search.kind == "grid":
        for combo in itertools.product(*_grid_axes(space, search.resolution)):
            consider(ControlTriple.from_flat(np.array(combo), space))
    elif search.kind == "random":
        rng = np.random.default_rng(search.seed)
        boxes = space.boxes()
        for _ in range(search.n):
            vec = np.array([rng.uniform(lo, hi) for lo, hi in boxes])
            consider(ControlTriple.from_flat(vec, space))
    else:
        import scipy.optimize

        boxes = space.boxes()
        lows = np.array([b[0] for b in boxes])
        highs = np.array([b[1] for b in boxes])
        rng = np.random.default_rng(search.seed)

        def fun(vec):
            v = np.clip(vec, lows, highs)
            return consider(ControlTriple.from_flat(v, space))

        starts = [0.5 * (lows + highs)]
        for _ in range(max(0, search.restarts - 1)):
            starts.append(lows + rng.random(len(boxes)) * (highs - lows))
        for s0 in starts:
            scipy.optimize.minimize(
                fun, s0, method="Nelder-Mead",
                bounds=scipy.optimize.Bounds(lows, highs),
                options={"xatol": 1e-6, "fatol": 1e-10, "maxfev": 200},
            )

    if not np.isfinite(best[0]):
        return None, INFEASIBLE, None, history
    return best[1], best[0], best[2], history


def refinement_study(space: ControlSpace, cost: CostSpec, resolutions,
                     probe: ProbeOptions = ProbeOptions()) -> list:
    """Grid searches over nested refinements; best costs must not increase.

    Resolutions like (3, 5, 9) produce nested point sets, which forces the
    monotone decrease exactly (up to 1e-9 slack, enforced here).
    """
    resolutions = [int(r) for r in resolutions]
    if any(b <= a for a, b in zip(resolutions, resolutions[1:])):
        raise ConfigurationError("resolutions must be strictly increasing")
    table = []
    prev = np.inf
    for res in resolutions:
        triple, value, _, _ = solve_control(
            space, cost, SearchSpec(kind="grid", resolution=res), probe)
        if value > prev + 1e-9:
            raise RuntimeError(
                f"refinement produced an increasing best cost: {prev} -> {value}")
        prev = min(prev, value)
        table.append({"resolution": res, "best_cost": value,
                      "best_triple": None if triple is None else {
                          "e": triple.e, "l": list(triple.l),
                          "E_coeffs": list(triple.E_coeffs)}})
    return table


def plant_instance(seed: int, space: ControlSpace, noise_level: float = 0.0,
                   rho: float = 1e-6, probe: ProbeOptions = ProbeOptions()):
    """Synthetic identification data: sample a truth triple strictly inside
    the boxes, forward-solve, perturb.  Returns (CostSpec, truth triple)."""
    rng = np.random.default_rng(seed)
    for attempt in range(10):
        vec = []
        for lo, hi in space.boxes():
            u = rng.uniform(0.25, 0.75)
            vec.append(lo + u * (hi - lo))
        truth = ControlTriple.from_flat(np.array(vec), space)
        inst = instantiate(space, truth)
        try:
            result = probe_solution_set(inst, n_starts=probe.n_starts,
                                        seed=probe.seed, opts=probe.outer,
                                        strategies=probe.strategies)
        except certificates.SmallnessError:
            continue
        if not result.clusters:
            continue
        x_true = result.clusters[0].x
        obs = x_true.values + noise_level * rng.standard_normal(x_true.values.shape)
        return CostSpec(x_obs=SpaceTimeField(obs, inst.grid), rho=rho), truth
    raise RuntimeError("failed to plant a solvable truth triple in 10 attempts")
