"""Discrete space-time fields, norms, the time-derivative operator, and the
trace/restriction operator with its adjoint and a certified norm bound.

Conventions used throughout the package:

* A field stores one row per time step t_n = n*dt, n = 1..nt.  The initial
  value at t = 0 is fixed to zero (the domain of the time-derivative
  operator), so it is not stored.
* In zero-Dirichlet mode only the nx interior nodes are unknowns; ghost
  zeros sit at both interval endpoints.  In free mode the nx+2 nodes
  including both endpoints are unknowns.
* All pairings are rectangle-rule quadratures: node weight dt*dx in the
  bulk, dt per boundary sample.  Dual objects are stored as densities with
  respect to these weights, so <g, f> = sum(w * g * f) exactly and every
  adjoint below is exact in floating point up to roundoff.
* Dual norms are the quadrature-weighted l^q norms, 1/p + 1/q = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DIRICHLET = "dirichlet"
FREE = "free"

TRACE = "trace"
RESTRICTION = "restriction"


class ShapeError(ValueError):
    """Operands do not share a grid or have inconsistent shapes."""


class ConfigurationError(ValueError):
    """Grid or operator configuration is inconsistent."""


@dataclass(frozen=True)
class Grid:
    """Uniform grid on (a, b) x (0, T] with nx interior nodes and nt steps."""

    nx: int
    nt: int
    T: float
    a: float = 0.0
    b: float = 1.0
    boundary: str = DIRICHLET

    def __post_init__(self):
        if self.nx < 1:
            raise ConfigurationError("nx must be >= 1")
        if self.nt < 1:
            raise ConfigurationError("nt must be >= 1")
        if not self.T > 0:
            raise ConfigurationError("final time T must be positive")
        if not self.b > self.a:
            raise ConfigurationError("space interval needs b > a")
        if self.boundary not in (DIRICHLET, FREE):
            raise ConfigurationError(f"unknown boundary mode {self.boundary!r}")

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def dx(self) -> float:
        return (self.b - self.a) / (self.nx + 1)

    @property
    def n_cols(self) -> int:
        """Number of stored space columns per time step."""
        return self.nx if self.boundary == DIRICHLET else self.nx + 2

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nt, self.n_cols)

    def space_coords(self) -> np.ndarray:
        if self.boundary == DIRICHLET:
            return self.a + self.dx * np.arange(1, self.nx + 1)
        return self.a + self.dx * np.arange(0, self.nx + 2)

    def time_coords(self) -> np.ndarray:
        return self.dt * np.arange(1, self.nt + 1)


@dataclass(frozen=True)
class NormParams:
    """Lebesgue exponent p in (1, inf) and its conjugate."""

    p: float

    def __post_init__(self):
        if not 1.0 < self.p < np.inf:
            raise ConfigurationError("p must lie in (1, inf)")

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)


def _as_matrix(values, grid: Grid) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape != grid.shape:
        raise ShapeError(f"expected values of shape {grid.shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("field values must be finite")
    return arr


class SpaceTimeField:
    """Grid function on (time steps) x (space nodes); immutable after creation.

    The same container represents primal states and dual densities (load
    terms, operator outputs); the quadrature pairing ties the two together.
    """

    __slots__ = ("values", "grid")

    def __init__(self, values, grid: Grid):
        arr = _as_matrix(values, grid).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "grid", grid)

    def __setattr__(self, name, value):
        raise AttributeError("SpaceTimeField is immutable")

    @classmethod
    def zeros(cls, grid: Grid) -> "SpaceTimeField":
        return cls(np.zeros(grid.shape), grid)

    def with_values(self, values) -> "SpaceTimeField":
        return SpaceTimeField(values, self.grid)

    def __repr__(self):
        return f"SpaceTimeField(grid={self.grid.shape}, max|.|={np.max(np.abs(self.values)):.3g})"


class BoundaryField:
    """Per-step samples at the two interval endpoints (free mode only)."""

    __slots__ = ("values", "grid")

    def __init__(self, values, grid: Grid):
        arr = np.asarray(values, dtype=float).copy()
        if arr.shape != (grid.nt, 2):
            raise ShapeError(f"expected boundary values of shape {(grid.nt, 2)}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ShapeError("boundary values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "grid", grid)

    def __setattr__(self, name, value):
        raise AttributeError("BoundaryField is immutable")

    @classmethod
    def zeros(cls, grid: Grid) -> "BoundaryField":
        return cls(np.zeros((grid.nt, 2)), grid)


@dataclass(frozen=True, eq=False)
class GammaSpec:
    """Observation operator: boundary trace or masked subdomain restriction."""

    mode: str
    mask: np.ndarray | None = None  # bool over grid columns, restriction only

    def __post_init__(self):
        if self.mode not in (TRACE, RESTRICTION):
            raise ConfigurationError(f"unknown gamma mode {self.mode!r}")
        if self.mode == RESTRICTION and self.mask is None:
            raise ConfigurationError("restriction mode needs a node mask")
        if self.mask is not None:
            object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))

    def validate(self, grid: Grid):
        if self.mode == TRACE and grid.boundary != FREE:
            raise ConfigurationError(
                "boundary trace needs the free boundary mode; on a zero-Dirichlet "
                "grid the trace is identically zero"
            )
        if self.mode == RESTRICTION and self.mask.shape != (grid.n_cols,):
            raise ShapeError(f"mask must have shape ({grid.n_cols},), got {self.mask.shape}")


def grad_values(f: SpaceTimeField) -> np.ndarray:
    """Forward difference quotients on the nx+1 edges, ghost zeros in Dirichlet mode."""
    g = f.grid
    v = f.values
    if g.boundary == DIRICHLET:
        z = np.zeros((g.nt, 1))
        v = np.hstack([z, v, z])
    return np.diff(v, axis=1) / g.dx


def norm_X(f: SpaceTimeField, np_: NormParams) -> float:
    """Discrete L^p(0,T; W^{1,p}(_0)) norm.

    Zero-Dirichlet mode: gradient-only seminorm (it is a norm there).
    Free mode: adds the L^p node term of the full W^{1,p} norm.
    """
    g = f.grid
    p = np_.p
    acc = g.dt * g.dx * np.sum(np.abs(grad_values(f)) ** p)
    if g.boundary == FREE:
        acc += g.dt * g.dx * np.sum(np.abs(f.values) ** p)
    return float(acc ** (1.0 / p))


def norm_X_lp(f: SpaceTimeField, np_: NormParams) -> float:
    """Quadrature L^p norm of the node values alone."""
    g = f.grid
    return float((g.dt * g.dx * np.sum(np.abs(f.values) ** np_.p)) ** (1.0 / np_.p))


def pair_X(g_dual: SpaceTimeField, f: SpaceTimeField) -> float:
    """Duality pairing <g, f> = sum dt*dx*g*f."""
    if g_dual.grid.shape != f.grid.shape:
        raise ShapeError("pairing operands live on different grids")
    gr = f.grid
    return float(gr.dt * gr.dx * np.sum(g_dual.values * f.values))


def dual_norm_X(g_dual: SpaceTimeField, np_: NormParams) -> float:
    """Quadrature-weighted l^q norm of a dual density."""
    gr = g_dual.grid
    return float((gr.dt * gr.dx * np.sum(np.abs(g_dual.values) ** np_.q)) ** (1.0 / np_.q))


def apply_L(f: SpaceTimeField) -> SpaceTimeField:
    """Backward time difference (f_n - f_{n-1})/dt with f_0 = 0 (dual-shaped)."""
    g = f.grid
    shifted = np.vstack([np.zeros((1, g.n_cols)), f.values[:-1]])
    return SpaceTimeField((f.values - shifted) / g.dt, g)


def _y_values(y, spec: GammaSpec) -> np.ndarray:
    return y.values if isinstance(y, (SpaceTimeField, BoundaryField)) else np.asarray(y, float)


def apply_gamma(f: SpaceTimeField, spec: GammaSpec):
    """Boundary trace (BoundaryField) or masked restriction (SpaceTimeField)."""
    spec.validate(f.grid)
    if spec.mode == TRACE:
        return BoundaryField(f.values[:, [0, -1]], f.grid)
    return SpaceTimeField(f.values * spec.mask, f.grid)


def gamma_adjoint(g_out, spec: GammaSpec, grid: Grid) -> SpaceTimeField:
    """Adjoint of apply_gamma with respect to the quadrature pairings.

    Satisfies <gamma* g, f>_X = <g, gamma f>_Y exactly for every f.
    """
    spec.validate(grid)
    vals = _y_values(g_out, spec)
    if spec.mode == TRACE:
        if vals.shape != (grid.nt, 2):
            raise ShapeError(f"trace adjoint input must have shape {(grid.nt, 2)}")
        out = np.zeros(grid.shape)
        out[:, 0] = vals[:, 0] / grid.dx
        out[:, -1] = vals[:, 1] / grid.dx
        return SpaceTimeField(out, grid)
    if vals.shape != grid.shape:
        raise ShapeError(f"restriction adjoint input must have shape {grid.shape}")
    return SpaceTimeField(vals * spec.mask, grid)


def y_weight(spec: GammaSpec, grid: Grid) -> float:
    """Quadrature weight per retained node of the gamma-output space."""
    return grid.dt if spec.mode == TRACE else grid.dt * grid.dx


def y_measure(spec: GammaSpec, grid: Grid) -> float:
    """Total quadrature measure of the gamma-output space."""
    if spec.mode == TRACE:
        return grid.T * 2.0
    return grid.T * grid.dx * float(np.count_nonzero(spec.mask))


def norm_Y(y, spec: GammaSpec, grid: Grid, np_: NormParams) -> float:
    vals = _y_values(y, spec)
    if spec.mode == RESTRICTION:
        vals = vals * spec.mask
    return float((y_weight(spec, grid) * np.sum(np.abs(vals) ** np_.p)) ** (1.0 / np_.p))


def dual_norm_Y(xi, spec: GammaSpec, grid: Grid, np_: NormParams) -> float:
    vals = _y_values(xi, spec)
    if spec.mode == RESTRICTION:
        vals = vals * spec.mask
    return float((y_weight(spec, grid) * np.sum(np.abs(vals) ** np_.q)) ** (1.0 / np_.q))


def pair_Y(xi, y, spec: GammaSpec, grid: Grid) -> float:
    a = _y_values(xi, spec)
    b = _y_values(y, spec)
    if a.shape != b.shape:
        raise ShapeError("Y pairing operands have different shapes")
    if spec.mode == RESTRICTION:
        a = a * spec.mask
    return float(y_weight(spec, grid) * np.sum(a * b))


def _slice_gram(grid: Grid) -> np.ndarray:
    """Per-time-slice Gram matrix of the X norm at p = 2."""
    m = grid.n_cols
    n_edges = grid.nx + 1
    B = np.zeros((n_edges, m))
    if grid.boundary == DIRICHLET:
        for e in range(n_edges):
            if e > 0:
                B[e, e - 1] = -1.0
            if e < grid.nx:
                B[e, e] = 1.0
    else:
        for e in range(n_edges):
            B[e, e] = -1.0
            B[e, e + 1] = 1.0
    G = (B.T @ B) / grid.dx
    if grid.boundary == FREE:
        G += grid.dx * np.eye(m)
    return G


def _slice_ygram(grid: Grid, spec: GammaSpec) -> np.ndarray:
    """Per-slice Gram of f -> ||gamma f||_Y^2 (time weight cancels in the ratio)."""
    m = grid.n_cols
    C = np.zeros((m, m))
    if spec.mode == TRACE:
        C[0, 0] = 1.0
        C[-1, -1] = 1.0
    else:
        C[np.diag_indices(m)] = grid.dx * spec.mask
    return C


@dataclass(frozen=True)
class GammaNormResult:
    value: float          # certified upper bound (exact for p = 2)
    lower_bound: float    # sampled lower bound, quality gauge
    gap: float            # value - lower_bound
    method: str


def gamma_norm(grid: Grid, np_: NormParams, spec: GammaSpec,
               n_samples: int = 10_000, seed: int = 0) -> GammaNormResult:
    """Operator norm of gamma from (X, ||.||_X) to (Y, ||.||_Y).

    p = 2: exact via power iteration on the generalized eigenproblem (the
    norms are time-diagonal, so a single slice problem suffices).
    p != 2: certified analytic upper bound (safe direction for the smallness
    check) with a sampled lower bound recorded as the quality gauge.
    """
    spec.validate(grid)
    if spec.mode == RESTRICTION and not np.any(spec.mask):
        return GammaNormResult(0.0, 0.0, 0.0, "empty-mask")

    if np_.p == 2.0:
        import scipy.linalg

        G = _slice_gram(grid)
        C = _slice_ygram(grid, spec)
        cho = scipy.linalg.cho_factor(G)
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(grid.n_cols)
        lam = 0.0
        for _ in range(100_000):
            w = scipy.linalg.cho_solve(cho, C @ v)
            nrm = np.sqrt(float(w @ (G @ w)))
            if nrm == 0.0:
                return GammaNormResult(0.0, 0.0, 0.0, "power-iteration")
            w /= nrm
            lam_new = float(w @ (C @ w))
            if abs(lam_new - lam) <= 1e-8 * max(lam_new, 1e-300):
                lam = lam_new
                break
            lam, v = lam_new, w
        val = float(np.sqrt(lam))
        return GammaNormResult(val, val, 0.0, "power-iteration")

    # sampled lower bound
    rng = np.random.default_rng(seed)
    lower = 0.0
    for _ in range(n_samples):
        f = SpaceTimeField(rng.standard_normal(grid.shape), grid)
        nx_ = norm_X(f, np_)
        if nx_ == 0.0:
            continue
        lower = max(lower, norm_Y(apply_gamma(f, spec), spec, grid, np_) / nx_)

    # analytic upper bound from Hoelder with the quadrature weights
    p, q = np_.p, np_.q
    width = grid.b - grid.a
    if spec.mode == RESTRICTION:
        if grid.boundary == FREE:
            upper = 1.0  # masked L^p part never exceeds the full W^{1,p} norm
        else:
            # |f_j| <= width^{1/q} * ||Df||_p per slice, then sum the mask measure
            mask_measure = grid.dx * float(np.count_nonzero(spec.mask))
            upper = mask_measure ** (1.0 / p) * width ** (1.0 / q)
    else:
        # endpoint value <= mean + total variation, split by the power mean
        ln = (grid.nx + 2) * grid.dx
        upper = (2.0 ** p * max(1.0 / ln, width ** (p - 1.0))) ** (1.0 / p)
    upper = max(upper, lower)
    return GammaNormResult(float(upper), float(lower), float(upper - lower), "sampled+analytic")


def field_to_csv(field, path):
    """Write `t,x,value` rows, time-major, 17 significant digits."""
    grid = field.grid
    ts = grid.time_coords()
    if isinstance(field, BoundaryField):
        xs = np.array([grid.a, grid.b])
    else:
        xs = grid.space_coords()
    lines = ["t,x,value"]
    for i, t in enumerate(ts):
        for j, x in enumerate(xs):
            lines.append(f"{t:.17g},{x:.17g},{field.values[i, j]:.17g}")
    text = "\n".join(lines) + "\n"
    if path is None:
        return text
    with open(path, "w") as fh:
        fh.write(text)
    return text
