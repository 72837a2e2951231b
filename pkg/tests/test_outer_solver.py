import numpy as np
import pytest

from conftest import const_psi, full_restriction, trivial_psi
from eqvi import certificates
from eqvi.grid import GammaSpec, Grid, NormParams, SpaceTimeField, gamma_adjoint, norm_X
from eqvi.inner_solver import InnerProblem, SolveOptions, solve_inner
from eqvi.instance import QviInstance
from eqvi.operators import (
    ConstraintMapSpec,
    FrictionLaw,
    IntervalField,
    PLaplacianParams,
    apply_G,
)
from eqvi.outer_solver import OuterOptions, probe_solution_set, select_xi, solve_qvi

NP2 = NormParams(2.0)


def make_instance(grid, law, source, r0=1.0, r1=0.0, e=1.0, psi=None,
                  gamma=None, aggregator="mean_abs"):
    return QviInstance(
        grid=grid, norm=NP2, f_params=PLaplacianParams(p=2.0, e=e), law=law,
        psi=psi if psi is not None else trivial_psi(grid),
        constraint=ConstraintMapSpec(r0=r0, r1=r1, aggregator=aggregator,
                                     r_max=max(2 * r0, r0 + 1.0)),
        source=source, gamma=gamma if gamma is not None else full_restriction(grid),
        name="test")


def test_select_xi_strategies():
    ivf = IntervalField(lo=np.array([[-1.0, 2.0]]), hi=np.array([[1.0, 5.0]]))
    assert np.allclose(select_xi(ivf, None, "min-norm"), [[0.0, 2.0]])
    assert np.allclose(select_xi(ivf, None, "midpoint"), [[0.0, 3.5]])
    assert np.allclose(select_xi(ivf, None, "lo"), [[-1.0, 2.0]])
    assert np.allclose(select_xi(ivf, None, "hi"), [[1.0, 5.0]])
    # degenerate intervals: every strategy returns the unique point
    deg = IntervalField(lo=np.array([[0.3]]), hi=np.array([[0.3]]))
    for strat in ("min-norm", "midpoint", "lo", "hi"):
        assert np.allclose(select_xi(deg, None, strat), [[0.3]])
    # damping keeps the result inside the interval
    cur = np.array([[9.0, -9.0]])
    damped = select_xi(ivf, cur, "min-norm", 0.5)
    assert np.all(damped >= ivf.lo - 1e-15) and np.all(damped <= ivf.hi + 1e-15)


def test_zero_source_zero_solution():
    g = Grid(nx=2, nt=2, T=1.0)
    inst = make_instance(g, FrictionLaw(kind="abs", slopes=(0.4,)),
                         SpaceTimeField.zeros(g))
    sol = solve_qvi(inst)
    assert sol.converged
    assert np.all(sol.x.values == 0.0)
    assert np.all(sol.xi == 0.0)
    assert sol.fp_residual <= 1e-7


def test_reduction_consistency(rng):
    # r1 = 0 and single-valued feedback: the outer loop must match a plain
    # self-consistent inner fixed point to 1e-7
    g = Grid(nx=3, nt=3, T=1.0)
    law = FrictionLaw(kind="smooth_power", slopes=(0.25,), growth_exp=1.0)
    source = SpaceTimeField(rng.uniform(-0.6, 0.6, g.shape), g)
    inst = make_instance(g, law, source, r0=1.0, r1=0.0)
    sol = solve_qvi(inst)
    assert sol.converged

    z = SpaceTimeField.zeros(g)
    xi = np.zeros(g.shape)
    for _ in range(300):
        load = SpaceTimeField(source.values - gamma_adjoint(xi, inst.gamma, g).values, g)
        prob = InnerProblem(f_params=inst.f_params, psi=inst.psi, radius=1.0,
                            z=z, load=load, grid=g, norm=NP2)
        z_new, _ = solve_inner(prob, SolveOptions(tol_residual=1e-13))
        lo, hi = law.subdiff_arrays(z_new.values)
        if (np.max(np.abs(z_new.values - z.values)) < 1e-13
                and np.max(np.abs(lo - xi)) < 1e-13):
            z, xi = z_new, lo
            break
        z, xi = z_new, lo
    assert norm_X(SpaceTimeField(sol.x.values - z.values, g), NP2) < 1e-7


def test_fixed_point_certificate_checks(rng):
    g = Grid(nx=2, nt=2, T=1.0)
    law = FrictionLaw(kind="abs", slopes=(0.4,))
    source = SpaceTimeField(rng.uniform(-1.5, 1.5, g.shape), g)
    inst = make_instance(g, law, source, r0=0.6, r1=0.15, psi=const_psi(g, 0.2))
    sol = solve_qvi(inst)
    assert sol.converged
    # (a) state is a fixed point of the inner solve at its own data
    from eqvi.operators import constraint_radius

    load = SpaceTimeField(source.values - gamma_adjoint(sol.xi, inst.gamma, g).values, g)
    prob = InnerProblem(f_params=inst.f_params, psi=inst.psi,
                        radius=constraint_radius(inst.constraint, sol.x),
                        z=sol.x, load=load, grid=g, norm=NP2)
    x_again, _ = solve_inner(prob, SolveOptions(tol_residual=1e-12))
    assert norm_X(SpaceTimeField(x_again.values - sol.x.values, g), NP2) <= 1e-6
    # (b) nodewise membership of the selection
    assert sol.xi_membership_gap <= 1e-12
    # (c) frozen-constraint residual
    assert sol.frozen_residual <= 10.0 * 1e-7


def test_kink_parking_converges(rng):
    # loads that balance the kink force a parked node with an interior
    # multiplier; the pinning mechanism must resolve the period-2 cycle
    g = Grid(nx=2, nt=2, T=1.0)
    law = FrictionLaw(kind="abs", slopes=(0.5,))
    source = SpaceTimeField(np.array([[0.52, -0.15], [-1.48, 0.14]]), g)
    inst = make_instance(g, law, source, r0=0.3, r1=0.0, e=0.97)
    sol = solve_qvi(inst)
    assert sol.converged
    assert sol.frozen_residual <= 1e-6
    assert sol.xi_membership_gap <= 1e-12
    # at least one observation node is parked exactly at the kink
    assert np.any(sol.x.values == 0.0)


def test_probe_unique_cluster(rng):
    g = Grid(nx=2, nt=2, T=1.0)
    law = FrictionLaw(kind="smooth_power", slopes=(0.2,), growth_exp=1.0)
    source = SpaceTimeField(rng.uniform(-0.5, 0.5, g.shape), g)
    inst = make_instance(g, law, source, r0=1.0, r1=0.0)
    probe = probe_solution_set(inst, n_starts=5, seed=0)
    assert len(probe.clusters) == 1
    assert probe.n_failed == 0


def test_probe_multi_branch_neg_abs():
    g = Grid(nx=1, nt=1, T=1.0)
    law = FrictionLaw(kind="neg_abs", slopes=(0.4,))
    inst = make_instance(g, law, SpaceTimeField.zeros(g), r0=1.0, e=0.1)
    probe = probe_solution_set(inst, n_starts=5, seed=0)
    vals = sorted(float(c.x.values[0, 0]) for c in probe.clusters)
    k = 1.0 / g.dt + 2 * 0.1 / g.dx ** 2
    expect = sorted([-0.4 / k, 0.0, 0.4 / k])
    assert len(vals) == 3
    assert np.allclose(vals, expect, atol=1e-8)
    for sol in probe.clusters:
        assert sol.frozen_residual <= 1e-6
        assert sol.xi_membership_gap <= 1e-12


def test_probe_representatives_inside_state_ball(rng):
    g = Grid(nx=2, nt=2, T=1.0)
    law = FrictionLaw(kind="abs", slopes=(0.3,))
    source = SpaceTimeField(rng.uniform(-1, 1, g.shape), g)
    inst = make_instance(g, law, source, r0=0.8, r1=0.1)
    cert = certificates.certificate_for_instance(inst)
    probe = probe_solution_set(inst, n_starts=4, seed=0)
    assert probe.clusters
    for sol in probe.clusters:
        assert norm_X(sol.x, NP2) <= cert.state_bound * (1 + 1e-6)


def test_smallness_refusal_and_force(rng):
    g = Grid(nx=2, nt=2, T=1.0)
    law = FrictionLaw(kind="smooth_power", slopes=(80.0,), growth_exp=1.0)
    source = SpaceTimeField(rng.uniform(-0.3, 0.3, g.shape), g)
    inst = make_instance(g, law, source)
    with pytest.raises(certificates.SmallnessError):
        solve_qvi(inst)
    sol = solve_qvi(inst, OuterOptions(max_outer=10), force=True)
    assert any("smallness" in w for w in sol.warnings)


def test_stage_drifts_decreasing(rng):
    g = Grid(nx=2, nt=3, T=1.0)
    law = FrictionLaw(kind="smooth_power", slopes=(0.3,), growth_exp=1.0)
    source = SpaceTimeField(rng.uniform(-0.8, 0.8, g.shape), g)
    inst = make_instance(g, law, source, r0=1.0, r1=0.05)
    sol = solve_qvi(inst, OuterOptions(tol_fp=1e-10,
                                       inner=SolveOptions(tol_residual=1e-12)))
    assert sol.converged
    d = sol.stage_drifts
    assert len(d) >= 3
    assert d[-3] >= d[-2] >= d[-1]


def test_deterministic_given_seed(rng):
    g = Grid(nx=2, nt=2, T=1.0)
    law = FrictionLaw(kind="abs", slopes=(0.3,))
    source = SpaceTimeField(rng.uniform(-1, 1, g.shape), g)
    inst = make_instance(g, law, source, r0=0.7, r1=0.1)
    p1 = probe_solution_set(inst, n_starts=4, seed=3)
    p2 = probe_solution_set(inst, n_starts=4, seed=3)
    assert len(p1.clusters) == len(p2.clusters)
    for a, b in zip(p1.clusters, p2.clusters):
        assert np.array_equal(a.x.values, b.x.values)
        assert np.array_equal(a.xi, b.xi)
