"""A-priori constant chain as machine-checkable certificates.

Builds the hypothesis constants of an instance, checks the smallness
condition (coercivity dominating feedback growth through the observation
operator), derives the nested bound chain

    coercivity_mean -> margin_half -> psi_young -> selection_bound
    -> state_bound -> derivative_bound

with a full derivation trace, and audits solver outputs against the bounds.
All dual norms are the quadrature-weighted l^q norms; operator norms come
from `gamma_norm` (exact at p = 2, certified upper bounds otherwise).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .grid import (
    RESTRICTION,
    ConfigurationError,
    GammaSpec,
    NormParams,
    SpaceTimeField,
    apply_L,
    dual_norm_X,
    dual_norm_Y,
    gamma_norm,
    norm_X,
    norm_Y,
    pair_X,
    y_measure,
)
from .instance import QviInstance
from .operators import apply_F, clarke_subdiff, constraint_radius, psi_eval


class SmallnessError(RuntimeError):
    """The smallness condition fails; the existence theory is void."""


@dataclass(frozen=True)
class HypothesisConstants:
    """Quantitative constants declared for one instance."""

    p: float
    beta: float                   # psi exponent, 1 <= beta < p
    eta: float                    # psi increment exponent (= beta for built-ins)
    coercivity_coef: float        # <F(x), x> >= coef*||x||^p - offset
    coercivity_offset: float
    growth_coef: float            # ||xi||_{Y*} <= coef*||y||_Y^{p-1} + offset
    growth_offset: float
    psi_lower_coef: float         # Psi(v,y) >= -coef*||y||^beta - offset
    psi_lower_offset: float
    psi_at_zero: float            # |Psi(v, 0)| bound
    trace_norm: float             # operator norm of gamma
    inner_radius: float           # radius of the ball inside every M(z)
    load_norm: float              # dual norm of the source term
    law_growth_coef: float = 0.0  # raw scalar-law growth (pre norm lift)
    law_growth_offset: float = 0.0
    law_growth_exp: float = 1.0
    y_total_measure: float = 0.0  # quadrature measure of the Y space

    def __post_init__(self):
        if not self.p > 1:
            raise ConfigurationError("p must exceed 1")
        if not 1.0 <= self.beta < self.p:
            raise ConfigurationError("beta must lie in [1, p)")
        if not 0.0 < self.eta < self.p:
            raise ConfigurationError("eta must lie in (0, p)")
        if not self.coercivity_coef > 0:
            raise ConfigurationError("coercivity coefficient must be positive")
        for name in ("coercivity_offset", "growth_coef", "growth_offset",
                     "psi_lower_coef", "psi_lower_offset", "psi_at_zero",
                     "load_norm", "law_growth_coef", "law_growth_offset"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")
        if not self.trace_norm >= 0:
            raise ConfigurationError("trace norm must be nonnegative")
        if not self.inner_radius > 0:
            raise ConfigurationError("inner radius must be positive")


def young_excess(a: float, alpha: float, b: float, beta_exp: float) -> float:
    """sup_{s >= 0} (a*s^alpha - b*s^beta_exp) for 0 <= alpha < beta_exp, b > 0."""
    if a <= 0.0:
        return 0.0
    if not (b > 0.0 and beta_exp > alpha >= 0.0):
        raise ConfigurationError("young_excess needs b > 0 and 0 <= alpha < beta_exp")
    if alpha == 0.0:
        return a  # supremum approached at s -> 0
    s_star = (a * alpha / (b * beta_exp)) ** (1.0 / (beta_exp - alpha))
    return a * s_star ** alpha - b * s_star ** beta_exp


def lift_growth(law_coef: float, law_offset: float, law_exp: float, p: float,
                coercivity_coef: float, trace_norm: float, total_measure: float):
    """Norm-level growth pair of the nodewise law via Minkowski/Hoelder,
    with the Young lift applied when the raw exponent sits below p-1.

    Returns (growth_coef, growth_offset, young_excess_value, lifted_flag).
    """
    q = p / (p - 1.0)
    offset = law_offset * total_measure ** (1.0 / q)
    if law_coef <= 0.0:
        return 0.0, offset, 0.0, False
    coef_hat = law_coef * total_measure ** (1.0 / q - law_exp / p)
    if law_exp >= p - 1.0:
        return coef_hat, offset, 0.0, False
    if trace_norm <= 0.0:
        # feedback never reaches the state equation; no lift needed
        return coef_hat, offset, 0.0, False
    target = coercivity_coef / (2.0 * trace_norm ** p)
    excess = young_excess(coef_hat, law_exp, target, p - 1.0)
    return target, offset + excess, excess, True


@dataclass(frozen=True)
class SmallnessResult:
    ok: bool
    margin: float
    growth_coef: float      # effective pair used for the verdict
    growth_offset: float
    young_excess: float
    lifted: bool
    statement: str

    def __iter__(self):  # (flag, margin) unpacking
        return iter((self.ok, self.margin))


def check_smallness(hc: HypothesisConstants) -> SmallnessResult:
    """Margin of `coercivity_coef > growth_coef * trace_norm^p`.

    When the raw law growth exponent is below p-1 the Young lift always
    produces an admissible pair with effective growth_coef =
    coercivity_coef/(2*trace_norm^p), making the condition hold.
    """
    c_g, d_g = hc.growth_coef, hc.growth_offset
    excess, lifted = 0.0, False
    if (hc.law_growth_coef > 0.0 and hc.law_growth_exp < hc.p - 1.0
            and hc.trace_norm > 0.0):
        lc, ld, excess, lifted = lift_growth(
            hc.law_growth_coef, hc.law_growth_offset, hc.law_growth_exp,
            hc.p, hc.coercivity_coef, hc.trace_norm, hc.y_total_measure)
        if lifted and lc <= c_g:
            c_g, d_g = lc, ld
        else:
            excess, lifted = 0.0, False
    margin = hc.coercivity_coef - c_g * hc.trace_norm ** hc.p
    rel = (">" if margin > 0 else "<=")
    statement = (f"coercivity_coef ({hc.coercivity_coef:g}) {rel} "
                 f"growth_coef * trace_norm^p ({c_g * hc.trace_norm ** hc.p:g})")
    return SmallnessResult(ok=margin > 0.0, margin=float(margin), growth_coef=c_g,
                           growth_offset=d_g, young_excess=excess, lifted=lifted,
                           statement=statement)


def compute_c3(hc: HypothesisConstants, m0: float) -> float:
    """Young constant absorbing the psi lower bound into the coercivity split:
    sup_{s>=0} [psi_lower_coef*s^(beta-1) - (coercivity_coef - m0)*s^(p-1)]."""
    if hc.beta >= hc.p:
        raise ConfigurationError("psi exponent must satisfy beta < p")
    gap = hc.coercivity_coef - m0
    if not gap > 0.0:
        raise ConfigurationError("coercivity mean must sit strictly below the coefficient")
    return young_excess(hc.psi_lower_coef, hc.beta - 1.0, gap, hc.p - 1.0)


@dataclass(frozen=True)
class Certificate:
    """The derived bound chain plus the smallness verdict and trace."""

    smallness_ok: bool
    smallness_margin: float
    coercivity_mean: float       # (c_F + c_G*||gamma||^p)/2
    margin_half: float           # (c_F - c_G*||gamma||^p)/2
    margin_half_literal: float   # the source text's (c_F - c_G)/2, kept for the record
    psi_young: float             # constant from compute_c3
    selection_bound: float       # bound on ||xi||_{Y*}
    state_bound: float           # bound on ||x||_X
    derivative_bound: float      # bound on the dual norm of the time derivative
    operator_sup: float          # sup of ||F|| over the state ball (input)
    psi_increment_sup: float     # sup of the psi increment constant (input)
    constants: HypothesisConstants
    trace: tuple = ()

    def as_dict(self) -> dict:
        hc = self.constants
        return {
            "smallness_ok": self.smallness_ok,
            "smallness_margin": self.smallness_margin,
            "coercivity_mean": self.coercivity_mean,
            "margin_half": self.margin_half,
            "margin_half_literal": self.margin_half_literal,
            "psi_young": self.psi_young,
            "selection_bound": self.selection_bound,
            "state_bound": self.state_bound,
            "derivative_bound": self.derivative_bound,
            "operator_sup": self.operator_sup,
            "psi_increment_sup": self.psi_increment_sup,
            "constants": {k: getattr(hc, k) for k in hc.__dataclass_fields__},
            "derivation": list(self.trace),
        }


def compute_certificate(hc: HypothesisConstants, f_bound_sup: float,
                        b_psi_sup: float) -> Certificate:
    """Evaluate the bound chain in order; refuses when smallness fails.

    `f_bound_sup` is the sup of the operator dual norm over the state ball
    and `b_psi_sup` the sup of the psi increment constant over the relevant
    balls; both are inputs so the chain itself stays deterministic.
    """
    sm = check_smallness(hc)
    if not sm.ok:
        raise SmallnessError(sm.statement)
    p, gam = hc.p, hc.trace_norm
    c_g, d_g = sm.growth_coef, sm.growth_offset
    trace = []

    def rec(name, formula, value):
        trace.append({"name": name, "formula": formula, "value": value})
        return value

    m0 = rec("coercivity_mean", "(coercivity_coef + growth_coef*trace_norm^p)/2",
             0.5 * (hc.coercivity_coef + c_g * gam ** p))
    m1 = rec("margin_half", "(coercivity_coef - growth_coef*trace_norm^p)/2",
             0.5 * sm.margin)
    m1_lit = rec("margin_half_literal", "(coercivity_coef - growth_coef)/2",
                 0.5 * (hc.coercivity_coef - c_g))
    c3 = rec("psi_young", "sup_s psi_lower_coef*s^(beta-1) - (coercivity_coef - coercivity_mean)*s^(p-1)",
             compute_c3(hc, m0))
    offsets = hc.load_norm + hc.coercivity_offset + hc.psi_lower_offset + hc.psi_at_zero
    c2 = rec("selection_bound",
             "(growth_coef*trace_norm^(p-1)*(load_norm + coercivity_offset + "
             "psi_lower_offset + psi_at_zero) + psi_young + coercivity_mean*growth_offset)"
             " / margin_half",
             (c_g * gam ** (p - 1.0) * offsets + c3 + m0 * d_g) / m1)
    c0 = rec("state_bound",
             "((load_norm + trace_norm*selection_bound + coercivity_offset + "
             "psi_lower_offset + psi_at_zero + psi_young)/coercivity_mean)^(1/(p-1))",
             ((hc.load_norm + gam * c2 + hc.coercivity_offset + hc.psi_lower_offset
               + hc.psi_at_zero + c3) / m0) ** (1.0 / (p - 1.0)))
    c5 = rec("derivative_bound",
             "(operator_sup + load_norm + trace_norm*selection_bound + psi_increment_sup)"
             " * (state_bound + inner_radius) / inner_radius",
             (f_bound_sup + hc.load_norm + gam * c2 + b_psi_sup)
             * (c0 + hc.inner_radius) / hc.inner_radius)
    return Certificate(
        smallness_ok=True, smallness_margin=sm.margin, coercivity_mean=m0,
        margin_half=m1, margin_half_literal=m1_lit, psi_young=c3,
        selection_bound=c2, state_bound=c0, derivative_bound=c5,
        operator_sup=f_bound_sup, psi_increment_sup=b_psi_sup,
        constants=hc, trace=tuple(trace),
    )


def truncate(f: SpaceTimeField, np_: NormParams, r: float,
             literal: bool = False) -> SpaceTimeField:
    """Radial truncation: identity inside the r-ball, scaled to the r-sphere
    outside.  `literal=True` normalizes to the unit sphere instead (the
    r-independent variant kept for the record)."""
    if not r > 0:
        raise ConfigurationError("truncation radius must be positive")
    nrm = norm_X(f, np_)
    if nrm <= r:
        return f
    scale = (1.0 if literal else r) / nrm
    return SpaceTimeField(f.values * scale, f.grid)


# ---------------------------------------------------------------------------
# instance-level construction


def constants_for_instance(inst: QviInstance, seed: int = 0) -> HypothesisConstants:
    """Derive the hypothesis constants of an instance, honoring overrides."""
    p = inst.norm.p
    gamma_res = gamma_norm(inst.grid, inst.norm, inst.gamma, seed=seed)
    w_total = y_measure(inst.gamma, inst.grid)
    law = inst.law
    c_g, d_g, _, _ = lift_growth(law.law_growth_coef, law.law_growth_offset,
                                 law.growth_exp, p, inst.f_params.e,
                                 gamma_res.value, w_total)
    values = dict(
        p=p,
        beta=inst.psi.beta,
        eta=inst.psi.eta,
        coercivity_coef=inst.f_params.e,
        coercivity_offset=0.0,
        growth_coef=c_g,
        growth_offset=d_g,
        psi_lower_coef=inst.psi.psi_lower_coef,
        psi_lower_offset=inst.psi.psi_lower_offset,
        psi_at_zero=inst.psi.psi_at_zero,
        trace_norm=gamma_res.value,
        inner_radius=inst.constraint.r0,
        load_norm=dual_norm_X(inst.source, inst.norm),
        law_growth_coef=law.law_growth_coef,
        law_growth_offset=law.law_growth_offset,
        law_growth_exp=law.growth_exp,
        y_total_measure=w_total,
    )
    if inst.overrides:
        unknown = set(inst.overrides) - set(values)
        if unknown:
            raise ConfigurationError(f"unknown constant overrides: {sorted(unknown)}")
        values.update({k: float(v) for k, v in inst.overrides.items()})
    return HypothesisConstants(**values)


def _psi_restriction_norm(inst: QviInstance, seed: int = 0) -> float:
    """Embedding constant of the psi subdomain: restriction-mode gamma norm."""
    if inst.psi.is_trivial():
        return 0.0
    spec = GammaSpec(mode=RESTRICTION, mask=inst.psi.mask)
    return gamma_norm(inst.grid, inst.norm, spec, n_samples=2000, seed=seed).value


def psi_increment_constant(inst: QviInstance, y1: SpaceTimeField | None = None,
                           y2: SpaceTimeField | None = None, radius: float | None = None,
                           seed: int = 0) -> float:
    """Built-in increment constant b_psi.

    beta = 1: the constant theta_max*(T|D|)^{1/q}*C_D with C_D the subdomain
    embedding norm.  beta > 1: the max-weighted form evaluated at (y1, y2),
    or its sup over the ball of the given radius when fields are omitted.
    """
    psi = inst.psi
    if psi.is_trivial():
        return 0.0
    p = inst.norm.p
    q = inst.norm.q
    g = inst.grid
    c_d = _psi_restriction_norm(inst, seed=seed)
    w_d = g.T * g.dx * float(np.count_nonzero(psi.mask))
    if psi.beta == 1.0:
        return psi.theta.upper * w_d ** (1.0 / q) * c_d
    beta = psi.beta
    conj = beta / (beta - 1.0)
    c_beta = w_d ** (1.0 / beta - 1.0 / p) * c_d
    if y1 is not None and y2 is not None:
        mx = np.maximum(np.abs(y1.values), np.abs(y2.values)) ** beta
        bulk = g.dt * g.dx * float(np.sum(mx[:, psi.mask]))
    else:
        r = radius if radius is not None else 1.0
        bulk = w_d ** (1.0 - beta / p) * (c_d * r) ** beta
    return psi.theta.upper * beta * c_beta * bulk ** (1.0 / conj)


def operator_sup_bound(inst: QviInstance, radius: float, n_samples: int = 200,
                       seed: int = 0) -> float:
    """sup of the operator dual norm over the radius-ball: analytic
    e*radius^(p-1) joined with a sampled maximum (the quadrature dual norm
    of the divergence form is grid dependent, sampling tracks it)."""
    analytic = inst.f_params.e * radius ** (inst.norm.p - 1.0)
    if radius == 0.0:
        return analytic
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        f = SpaceTimeField(rng.standard_normal(inst.grid.shape), inst.grid)
        nrm = norm_X(f, inst.norm)
        if nrm == 0.0:
            continue
        scaled = SpaceTimeField(f.values * (radius / nrm), inst.grid)
        worst = max(worst, dual_norm_X(apply_F(inst.f_params, scaled), inst.norm))
    return max(analytic, worst)


def certificate_for_instance(inst: QviInstance, seed: int = 0) -> Certificate:
    """Two-pass construction: chain up to the state bound, then the
    ball-dependent sups, then the full chain with trace."""
    hc = constants_for_instance(inst, seed=seed)
    pre = compute_certificate(hc, 0.0, 0.0)  # raises on smallness failure
    f_sup = operator_sup_bound(inst, pre.state_bound, seed=seed)
    b_sup = psi_increment_constant(
        inst, radius=max(pre.state_bound, hc.inner_radius), seed=seed)
    return compute_certificate(hc, f_sup, b_sup)


AUDIT_SLACK = 1e-6


@dataclass(frozen=True)
class AuditReport:
    ok: bool
    checks: dict

    def as_dict(self) -> dict:
        return {"ok": self.ok, "checks": self.checks}


def audit_solution(cert: Certificate, sol) -> AuditReport:
    """Check a converged solution against the certificate ball: state norm,
    time-derivative dual norm, and selection dual norm."""
    inst = sol.instance
    x = sol.x
    checks = {}

    def entry(name, value, bound):
        ok = value <= bound * (1.0 + AUDIT_SLACK)
        checks[name] = {"value": float(value), "bound": float(bound), "ok": bool(ok)}
        return ok

    ok = entry("state_norm", norm_X(x, inst.norm), cert.state_bound)
    ok &= entry("derivative_norm", dual_norm_X(apply_L(x), inst.norm),
                cert.derivative_bound)
    ok &= entry("selection_norm",
                dual_norm_Y(sol.xi, inst.gamma, inst.grid, inst.norm),
                cert.selection_bound)
    return AuditReport(ok=bool(ok), checks=checks)


# ---------------------------------------------------------------------------
# randomized hypothesis validation


def validate_hypotheses(inst: QviInstance, n_samples: int = 1000,
                        seed: int = 0) -> dict:
    """Randomized checks of every quantitative hypothesis inequality with
    the instance's declared constants; returns worst relative margins."""
    rng = np.random.default_rng(seed)
    hc = constants_for_instance(inst, seed=seed)
    g = inst.grid
    checks = {}

    def record(name, margin):
        checks[name] = {"worst_margin": float(margin), "ok": bool(margin >= -1e-10)}

    # coercivity of the spatial operator
    worst = np.inf
    for _ in range(n_samples):
        scale = rng.choice([0.1, 1.0, 10.0])
        u = SpaceTimeField(scale * rng.standard_normal(g.shape), g)
        lhs = pair_X(apply_F(inst.f_params, u), u)
        rhs = hc.coercivity_coef * norm_X(u, inst.norm) ** hc.p - hc.coercivity_offset
        worst = min(worst, (lhs - rhs) / max(1.0, abs(rhs)))
    record("coercivity", worst)

    # monotonicity of the spatial operator
    worst = np.inf
    for _ in range(n_samples):
        u = SpaceTimeField(rng.standard_normal(g.shape), g)
        v = SpaceTimeField(rng.standard_normal(g.shape), g)
        du = SpaceTimeField(u.values - v.values, g)
        dF = SpaceTimeField(apply_F(inst.f_params, u).values
                            - apply_F(inst.f_params, v).values, g)
        worst = min(worst, pair_X(dF, du))
    record("monotonicity", worst)

    # growth of the feedback, extreme selections
    sm = check_smallness(hc)
    gshape = inst.gamma_shape()
    worst = np.inf
    for _ in range(n_samples):
        scale = rng.choice([0.1, 1.0, 10.0])
        yv = scale * rng.standard_normal(gshape)
        if inst.gamma.mode == RESTRICTION:
            yv = yv * inst.gamma.mask
        lo, hi = inst.law.subdiff_arrays(yv)
        if inst.gamma.mode == RESTRICTION:
            lo, hi = lo * inst.gamma.mask, hi * inst.gamma.mask
        ynorm = norm_Y(yv, inst.gamma, g, inst.norm)
        rhs = sm.growth_coef * ynorm ** (inst.norm.p - 1.0) + sm.growth_offset
        for sel in (lo, hi):
            xin = dual_norm_Y(sel, inst.gamma, g, inst.norm)
            worst = min(worst, (rhs - xin) / max(1.0, rhs))
    record("feedback_growth", worst)

    # psi increment bound and lower bound
    if inst.psi.is_trivial():
        record("psi_increment", 0.0)
        record("psi_lower", 0.0)
    else:
        worst_inc = np.inf
        worst_low = np.inf
        for _ in range(n_samples):
            x = SpaceTimeField(rng.standard_normal(g.shape), g)
            y1 = SpaceTimeField(rng.standard_normal(g.shape), g)
            y2 = SpaceTimeField(rng.standard_normal(g.shape), g)
            lhs = psi_eval(inst.psi, x, y1) - psi_eval(inst.psi, x, y2)
            diff = SpaceTimeField(y1.values - y2.values, g)
            b = psi_increment_constant(inst, y1=y1, y2=y2)
            rhs = b * norm_X(diff, inst.norm) ** hc.eta
            worst_inc = min(worst_inc, (rhs - lhs) / max(1.0, abs(rhs)))
            val = psi_eval(inst.psi, x, y1)
            low = -hc.psi_lower_coef * norm_X(y1, inst.norm) ** hc.beta - hc.psi_lower_offset
            worst_low = min(worst_low, val - low)
            worst_low = min(worst_low, hc.psi_at_zero
                            - abs(psi_eval(inst.psi, x, SpaceTimeField.zeros(g))))
        record("psi_increment", worst_inc)
        record("psi_lower", worst_low)

    # theta bounds by sampling
    svals = rng.standard_normal(4 * n_samples) * 10.0
    tv = inst.psi.theta(svals)
    record("theta_bounds", min(float(np.min(tv) - inst.psi.theta.lower),
                               float(inst.psi.theta.upper - np.max(tv))))

    # interior ball of the constraint map
    worst = np.inf
    for _ in range(n_samples // 10 + 1):
        z = SpaceTimeField(rng.standard_normal(g.shape) * rng.choice([0.1, 1.0, 5.0]), g)
        worst = min(worst, constraint_radius(inst.constraint, z) - hc.inner_radius)
    record("constraint_interior_ball", worst)

    # outer semicontinuity of the subdifferential along convergent samples
    pts = list(inst.law.kinks) + [float(v) for v in rng.standard_normal(8)]
    worst = 0.0
    for s in pts:
        target = clarke_subdiff(inst.law, s)
        for delta in (1e-6, 1e-8):
            for side in (-1.0, 1.0):
                lo, hi = inst.law.subdiff_arrays(np.array(s + side * delta))
                gap = max(target.lo - float(lo), float(hi) - target.hi, 0.0)
                worst = max(worst, gap - 10.0 * delta)
    record("feedback_graph_closedness", -worst)

    # hemicontinuity of the spatial operator along a segment
    u = SpaceTimeField(rng.standard_normal(g.shape), g)
    v = SpaceTimeField(rng.standard_normal(g.shape), g)
    w = SpaceTimeField(rng.standard_normal(g.shape), g)
    base = pair_X(apply_F(inst.f_params, u), w)
    drift = abs(pair_X(apply_F(inst.f_params,
                               SpaceTimeField(u.values + 1e-9 * v.values, g)), w) - base)
    record("hemicontinuity", 1e-6 - drift)

    ok = all(c["ok"] for c in checks.values())
    return {"ok": ok, "checks": checks}
