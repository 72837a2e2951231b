"""Built-in model operators: the p-Laplacian family, Clarke-subdifferential
friction laws, the weighted-power bifunction, and the solution-dependent
box constraint map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import (
    FREE,
    RESTRICTION,
    ConfigurationError,
    GammaSpec,
    Grid,
    NormParams,
    ShapeError,
    SpaceTimeField,
    grad_values,
)

ABS = "abs"
NEG_ABS = "neg_abs"
ZIGZAG = "zigzag"
SMOOTH_POWER = "smooth_power"


def signed_pow(t, alpha):
    """|t|^alpha * sign(t), with 0 mapped to 0."""
    return np.sign(t) * np.abs(t) ** alpha


@dataclass(frozen=True)
class PLaplacianParams:
    """Coefficient e >= e_min > 0 scaling the monotone spatial operator."""

    p: float
    e: float
    e_min: float = 1e-8

    def __post_init__(self):
        if not self.e_min > 0:
            raise ConfigurationError("e_min must be positive")
        if self.e < self.e_min:
            raise ConfigurationError("coefficient e must satisfy e >= e_min")
        if not 1.0 < self.p < np.inf:
            raise ConfigurationError("p must lie in (1, inf)")


def apply_F(params: PLaplacianParams, f: SpaceTimeField) -> SpaceTimeField:
    """Discrete weak-form p-Laplacian as a dual density.

    <apply_F(f), g> under the quadrature pairing equals the discrete
    integral of e*|Df|^{p-2}(Df, Dg); in free mode the |f|^{p-2}f mass term
    is included so that <F(f), f> = e*||f||_X^p in both modes (the operator
    is coercive on the full W^{1,p} norm only with the mass term).
    """
    g = f.grid
    flux = params.e * signed_pow(grad_values(f), params.p - 1.0)
    if g.boundary == FREE:
        z = np.zeros((g.nt, 1))
        flux = np.hstack([z, flux, z])
    density = -np.diff(flux, axis=1) / g.dx
    if g.boundary == FREE:
        density = density + params.e * signed_pow(f.values, params.p - 1.0)
    return SpaceTimeField(density, g)


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ConfigurationError(f"invalid interval [{self.lo}, {self.hi}]")

    def contains(self, v: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= v <= self.hi + tol

    def clip(self, v: float) -> float:
        return min(max(v, self.lo), self.hi)

    @property
    def degenerate(self) -> bool:
        return self.lo == self.hi


@dataclass(frozen=True, eq=False)
class FrictionLaw:
    """Scalar locally Lipschitz integrand, piecewise C^1.

    kinds:
      abs          j(s) = l*|s|             (convex kink at 0)
      neg_abs      j(s) = -l*|s|            (nonconvex kink at 0)
      zigzag       continuous piecewise linear, slopes[i] between kinks
      smooth_power j(s) = l/(g+1)*|s|^(g+1) (C^1, single-valued gradient)

    The declared growth |j'(s)| <= law_growth_coef*|s|^growth_exp +
    law_growth_offset must dominate every one-sided derivative.
    """

    kind: str
    slopes: tuple = (1.0,)
    kinks: tuple = ()
    growth_exp: float = 1.0      # exponent in the declared derivative growth
    law_growth_coef: float = 0.0
    law_growth_offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "slopes", tuple(float(v) for v in np.atleast_1d(self.slopes)))
        object.__setattr__(self, "kinks", tuple(float(v) for v in np.atleast_1d(self.kinks)))
        if self.kind not in (ABS, NEG_ABS, ZIGZAG, SMOOTH_POWER):
            raise ConfigurationError(f"unknown friction law kind {self.kind!r}")
        if self.kind in (ABS, NEG_ABS):
            l = abs(self.slopes[0])
            object.__setattr__(self, "kinks", (0.0,))
            if self.law_growth_offset < l:
                object.__setattr__(self, "law_growth_offset", l)
        elif self.kind == ZIGZAG:
            if len(self.slopes) != len(self.kinks) + 1:
                raise ConfigurationError("zigzag needs len(slopes) == len(kinks) + 1")
            if list(self.kinks) != sorted(self.kinks):
                raise ConfigurationError("zigzag kinks must be sorted")
            mx = max(abs(s) for s in self.slopes)
            if self.law_growth_offset < mx:
                object.__setattr__(self, "law_growth_offset", mx)
        else:
            if not self.growth_exp > 0:
                raise ConfigurationError("smooth_power needs growth_exp > 0")
            object.__setattr__(self, "kinks", ())
            if self.law_growth_coef < abs(self.slopes[0]):
                object.__setattr__(self, "law_growth_coef", abs(self.slopes[0]))

    # -- scalar integrand and its derivative data ------------------------

    def value(self, s):
        """j(s), anchored at j(0) = 0; vectorized."""
        s = np.asarray(s, dtype=float)
        l = self.slopes[0]
        if self.kind == ABS:
            return l * np.abs(s)
        if self.kind == NEG_ABS:
            return -l * np.abs(s)
        if self.kind == SMOOTH_POWER:
            g = self.growth_exp
            return l / (g + 1.0) * np.abs(s) ** (g + 1.0)
        # zigzag: integrate the slope field from 0
        breaks = np.array(self.kinks)
        slopes = np.array(self.slopes)
        res = np.array([self._zz_value_scalar(v, breaks, slopes) for v in np.atleast_1d(s).ravel()])
        out = res.reshape(np.shape(s))
        return out if out.ndim else float(out)

    @staticmethod
    def _zz_value_scalar(s, breaks, slopes):
        # piecewise-linear antiderivative of the slope field, anchored at 0
        pts = np.concatenate([breaks, [0.0, s]])
        lo, hi = (s, 0.0) if s < 0.0 else (0.0, s)
        inner = np.sort(pts[(pts >= lo) & (pts <= hi)])
        total = 0.0
        for a, b in zip(inner[:-1], inner[1:]):
            mid = 0.5 * (a + b)
            idx = int(np.searchsorted(breaks, mid, side="right"))
            total += slopes[idx] * (b - a)
        return total if s >= 0.0 else -total

    def subdiff_arrays(self, s):
        """Vectorized interval endpoints of the Clarke subdifferential."""
        s = np.asarray(s, dtype=float)
        l = self.slopes[0]
        if self.kind == ABS:
            lo = np.where(s < 0.0, -l, np.where(s > 0.0, l, -l))
            hi = np.where(s < 0.0, -l, np.where(s > 0.0, l, l))
        elif self.kind == NEG_ABS:
            lo = np.where(s < 0.0, l, np.where(s > 0.0, -l, -l))
            hi = np.where(s < 0.0, l, np.where(s > 0.0, -l, l))
        elif self.kind == SMOOTH_POWER:
            d = l * signed_pow(s, self.growth_exp)
            lo = hi = d
        else:
            breaks = np.array(self.kinks)
            slopes = np.array(self.slopes)
            idx = np.searchsorted(breaks, s, side="right")
            deriv = slopes[idx]
            lo = deriv.copy()
            hi = deriv.copy()
            for i, k in enumerate(breaks):
                at = s == k
                if np.any(at):
                    a, b = slopes[i], slopes[i + 1]
                    lo = np.where(at, min(a, b), lo)
                    hi = np.where(at, max(a, b), hi)
        lo = np.minimum(lo, hi)
        return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)

    def growth_margin(self, s, d):
        """law_growth_coef*|s|^exp + offset - |d| (declared growth slack)."""
        return self.law_growth_coef * np.abs(s) ** self.growth_exp + self.law_growth_offset - np.abs(d)


def clarke_subdiff(law: FrictionLaw, s: float) -> Interval:
    """Clarke subdifferential of the scalar law: singleton derivative at
    smooth points, hull of the one-sided derivatives at kinks."""
    lo, hi = law.subdiff_arrays(np.asarray(s, dtype=float))
    return Interval(float(lo), float(hi))


def clarke_dirderiv(law: FrictionLaw, s: float, v: float) -> float:
    """Generalized directional derivative: max of eta*v over the subdifferential."""
    iv = clarke_subdiff(law, s)
    return iv.hi * v if v >= 0.0 else iv.lo * v


@dataclass(frozen=True, eq=False)
class IntervalField:
    """Per-node closed intervals, the value set of the multivalued feedback."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape:
            raise ShapeError("interval endpoint arrays differ in shape")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ShapeError("interval bounds must be finite")
        if np.any(lo > hi):
            raise ShapeError("invalid interval with lo > hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def clip(self, values: np.ndarray) -> np.ndarray:
        return np.clip(values, self.lo, self.hi)

    def membership_gap(self, values: np.ndarray) -> float:
        """Max distance of values to their intervals (0 when inside)."""
        return float(np.max(np.maximum(self.lo - values, 0.0) + np.maximum(values - self.hi, 0.0)))


def apply_G(law: FrictionLaw, y, spec: GammaSpec, grid: Grid) -> IntervalField:
    """Nodewise Clarke subdifferential of the quadrature integral of the law.

    Dual elements are densities for the Y quadrature pairing, so the node
    intervals are the scalar subdifferentials themselves; in restriction
    mode nodes outside the mask carry {0} (they are not part of Y).
    """
    vals = y.values if hasattr(y, "values") else np.asarray(y, dtype=float)
    lo, hi = law.subdiff_arrays(vals)
    if spec.mode == RESTRICTION:
        lo = lo * spec.mask
        hi = hi * spec.mask
    return IntervalField(lo, hi)


@dataclass(frozen=True)
class ThetaFn:
    """Bounded Lipschitz weight 0 < theta_min <= theta(s) <= theta_max."""

    kind: str = "const"   # "const" | "lorentz"
    c0: float = 1.0
    c1: float = 0.0

    def __post_init__(self):
        if self.kind not in ("const", "lorentz"):
            raise ConfigurationError(f"unknown theta kind {self.kind!r}")
        if not self.c0 > 0 or self.c1 < 0:
            raise ConfigurationError("theta needs c0 > 0 and c1 >= 0")

    def __call__(self, s):
        if self.kind == "const":
            return np.full_like(np.asarray(s, dtype=float), self.c0)
        return self.c0 + self.c1 / (1.0 + np.asarray(s, dtype=float) ** 2)

    @property
    def lower(self) -> float:
        return self.c0

    @property
    def upper(self) -> float:
        return self.c0 + self.c1

    @property
    def lipschitz(self) -> float:
        # max slope of 1/(1+s^2) is attained at s = 1/sqrt(3)
        return 0.0 if self.kind == "const" else self.c1 * 3.0 * np.sqrt(3.0) / 8.0


@dataclass(frozen=True, eq=False)
class PsiSpec:
    """Bifunction (v, u) -> integral over the masked subdomain of
    theta(v)*|u|^beta; convex and nonnegative in u for each v."""

    theta: ThetaFn
    beta: float
    mask: np.ndarray  # bool over grid columns; empty mask = trivial psi

    # declared lower-bound constants; zero for the nonnegative built-in
    psi_lower_coef: float = 0.0
    psi_lower_offset: float = 0.0
    psi_at_zero: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))
        if not self.beta >= 1.0:
            raise ConfigurationError("beta must satisfy 1 <= beta < p")

    @property
    def eta(self) -> float:
        """Increment exponent of the Lipschitz-type bound; equals beta."""
        return self.beta

    def is_trivial(self) -> bool:
        return not bool(np.any(self.mask))

    def coefficient_row(self, z_row: np.ndarray) -> np.ndarray:
        """Per-node weight theta(z)*mask for one time step."""
        return np.where(self.mask, self.theta(z_row), 0.0)


def psi_eval(spec: PsiSpec, v: SpaceTimeField, u: SpaceTimeField) -> float:
    """Quadrature sum over masked nodes of theta(v)*|u|^beta."""
    if v.grid.shape != u.grid.shape:
        raise ShapeError("psi_eval operands live on different grids")
    g = u.grid
    if spec.mask.shape != (g.n_cols,):
        raise ShapeError("psi mask does not match the grid")
    w = spec.theta(v.values) * np.abs(u.values) ** spec.beta
    return float(g.dt * g.dx * np.sum(w[:, spec.mask]))


def psi_scalar_prox(spec: PsiSpec, theta_val: float, t: float, a: float, box: Interval) -> float:
    """Unique minimizer over the box of (1/2)(w-a)^2 + t*theta_val*|w|^beta.

    Bisection on the strictly monotone optimality inclusion; the strongly
    convex objective on a compact interval is always uniquely solvable.
    """
    if t < 0:
        raise ConfigurationError("prox step t must be nonnegative")
    c = t * theta_val
    beta = spec.beta

    def d_right(w):
        s = 1.0 if w >= 0.0 else -1.0
        if beta == 1.0:
            return w - a + c * s
        return w - a + c * beta * abs(w) ** (beta - 1.0) * np.sign(w)

    def d_left(w):
        s = 1.0 if w > 0.0 else -1.0
        if beta == 1.0:
            return w - a + c * s
        return d_right(w)  # beta > 1: the derivative is continuous

    lo, hi = float(box.lo), float(box.hi)
    if d_right(lo) >= 0.0:
        return lo
    if d_left(hi) <= 0.0:
        return hi
    # invariant: d_right(lo) < 0 < d_left(hi)
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if d_right(mid) < 0.0:
            lo = mid
        elif d_left(mid) > 0.0:
            hi = mid
        else:
            return mid  # 0 sits in the subdifferential at mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ConstraintMapSpec:
    """Solution-dependent symmetric box: |y(node)| <= r(z) with
    r(z) = min(base_radius + gain*aggregate(z), cap)."""

    r0: float                    # base radius; the uniform interior ball
    r1: float = 0.0              # gain on the aggregate
    aggregator: str = "mean_abs"  # "mean_abs" | "clipped_norm"
    r_max: float = np.inf

    def __post_init__(self):
        if not self.r0 > 0:
            raise ConfigurationError("base radius r0 must be positive")
        if self.r1 < 0:
            raise ConfigurationError("radius gain r1 must be nonnegative")
        if self.aggregator not in ("mean_abs", "clipped_norm"):
            raise ConfigurationError(f"unknown aggregator {self.aggregator!r}")
        if self.r_max < self.r0:
            raise ConfigurationError("cap r_max must be >= r0")


def constraint_radius(spec: ConstraintMapSpec, z: SpaceTimeField) -> float:
    """Box radius r(z) >= r0 > 0; monotone in |z| nodewise."""
    if spec.aggregator == "mean_abs":
        agg = float(np.mean(np.abs(z.values)))
    else:
        g = z.grid
        agg = float(np.sqrt(g.dt * g.dx * np.sum(z.values ** 2)))
    return float(min(spec.r0 + spec.r1 * agg, spec.r_max))


def project_M(spec: ConstraintMapSpec, z: SpaceTimeField, f: SpaceTimeField) -> SpaceTimeField:
    """Nodewise clipping onto the box M(z)."""
    r = constraint_radius(spec, z)
    return SpaceTimeField(np.clip(f.values, -r, r), f.grid)
