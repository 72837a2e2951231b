import numpy as np
import pytest

from conftest import trivial_psi
from eqvi.grid import Grid, NormParams, SpaceTimeField
from eqvi.inner_solver import InnerProblem, solve_inner, vi_residual
from eqvi.operators import FrictionLaw, Interval, PLaplacianParams, clarke_subdiff
from eqvi.oracles import OracleFailure, oracle_clarke, oracle_inner_vi, oracle_qvi
from eqvi.oracle_suite import builtin_toy_instances, random_inner_instance

NP2 = NormParams(2.0)


def test_oracle_inner_unconstrained_closed_form():
    g = Grid(nx=1, nt=2, T=1.0)
    load = SpaceTimeField(np.full(g.shape, 0.4), g)
    prob = InnerProblem(f_params=PLaplacianParams(p=2.0, e=1.0), psi=trivial_psi(g),
                        radius=50.0, z=SpaceTimeField.zeros(g), load=load,
                        grid=g, norm=NP2)
    x = oracle_inner_vi(prob)
    k = 2.0 / g.dx ** 2
    u, expected = 0.0, []
    for _ in range(g.nt):
        u = (u / g.dt + 0.4) / (1.0 / g.dt + k)
        expected.append(u)
    assert np.max(np.abs(x.values.ravel() - expected)) < 1e-12


def test_oracle_inner_clamped_case():
    g = Grid(nx=1, nt=1, T=1.0)
    load = SpaceTimeField(np.full(g.shape, 50.0), g)
    prob = InnerProblem(f_params=PLaplacianParams(p=2.0, e=1.0), psi=trivial_psi(g),
                        radius=0.2, z=SpaceTimeField.zeros(g), load=load,
                        grid=g, norm=NP2)
    x = oracle_inner_vi(prob)
    assert x.values[0, 0] == pytest.approx(0.2)


def test_oracle_inner_agreement_and_internal_residual(rng):
    worst = 0.0
    for _ in range(40):
        prob = random_inner_instance(rng)
        ref = oracle_inner_vi(prob)
        x, rep = solve_inner(prob)
        assert rep.converged
        worst = max(worst, float(np.max(np.abs(x.values - ref.values))))
        assert vi_residual(prob, ref) <= 1e-10
    assert worst < 1e-8


def test_oracle_inner_rejects_large_or_wrong_p():
    g = Grid(nx=4, nt=3, T=1.0)
    prob = InnerProblem(f_params=PLaplacianParams(p=2.0, e=1.0), psi=trivial_psi(g),
                        radius=1.0, z=SpaceTimeField.zeros(g),
                        load=SpaceTimeField.zeros(g), grid=g, norm=NP2)
    with pytest.raises(OracleFailure):
        oracle_inner_vi(prob)
    g2 = Grid(nx=1, nt=2, T=1.0)
    prob2 = InnerProblem(f_params=PLaplacianParams(p=3.0, e=1.0), psi=trivial_psi(g2),
                         radius=1.0, z=SpaceTimeField.zeros(g2),
                         load=SpaceTimeField.zeros(g2), grid=g2, norm=NormParams(3.0))
    with pytest.raises(OracleFailure):
        oracle_inner_vi(prob2)


def test_oracle_qvi_zero_data():
    from conftest import full_restriction
    from eqvi.instance import QviInstance
    from eqvi.operators import ConstraintMapSpec

    g = Grid(nx=2, nt=2, T=1.0)
    inst = QviInstance(
        grid=g, norm=NP2, f_params=PLaplacianParams(p=2.0, e=1.0),
        law=FrictionLaw(kind="smooth_power", slopes=(0.3,), growth_exp=1.0),
        psi=trivial_psi(g), constraint=ConstraintMapSpec(r0=1.0),
        source=SpaceTimeField.zeros(g), gamma=full_restriction(g))
    sols = oracle_qvi(inst)
    assert len(sols) == 1
    assert np.all(sols[0]["x"].values == 0.0)


def test_oracle_qvi_reduction_matches_inner():
    from conftest import full_restriction
    from eqvi.grid import gamma_adjoint
    from eqvi.instance import QviInstance
    from eqvi.operators import ConstraintMapSpec

    g = Grid(nx=2, nt=2, T=1.0)
    rngl = np.random.default_rng(5)
    src = SpaceTimeField(rngl.uniform(-1, 1, g.shape), g)
    inst = QviInstance(
        grid=g, norm=NP2, f_params=PLaplacianParams(p=2.0, e=0.9),
        law=FrictionLaw(kind="smooth_power", slopes=(0.25,), growth_exp=1.0),
        psi=trivial_psi(g), constraint=ConstraintMapSpec(r0=1.0, r1=0.0),
        source=src, gamma=full_restriction(g))
    sols = oracle_qvi(inst)
    assert len(sols) == 1
    x, xi = sols[0]["x"], sols[0]["xi"]
    # self-consistency: x solves the inner problem at its own selection
    load = SpaceTimeField(src.values - gamma_adjoint(xi, inst.gamma, g).values, g)
    prob = InnerProblem(f_params=inst.f_params, psi=inst.psi, radius=1.0,
                        z=x, load=load, grid=g, norm=NP2)
    ref = oracle_inner_vi(prob)
    assert np.max(np.abs(ref.values - x.values)) < 1e-9


def test_oracle_qvi_three_branch_neg_abs():
    insts = builtin_toy_instances()
    sols = oracle_qvi(insts[0])
    vals = sorted(float(s["x"].values[0, 0]) for s in sols)
    k = 1.0 + 2 * 0.1 / 0.25  # 1/dt + stiffness
    assert np.allclose(vals, [-0.4 / k, 0.0, 0.4 / k], atol=1e-10)
    # every oracle output passes the main residual check
    from eqvi.grid import gamma_adjoint

    inst = insts[0]
    for s in sols:
        load = SpaceTimeField(inst.source.values
                              - gamma_adjoint(s["xi"], inst.gamma, inst.grid).values,
                              inst.grid)
        prob = InnerProblem(f_params=inst.f_params, psi=inst.psi, radius=s["radius"],
                            z=s["x"], load=load, grid=inst.grid, norm=NP2)
        assert vi_residual(prob, s["x"]) <= 1e-10


def test_oracle_qvi_deterministic():
    inst = builtin_toy_instances()[1]
    a = oracle_qvi(inst)
    b = oracle_qvi(inst)
    assert len(a) == len(b)
    for s, t in zip(a, b):
        assert np.array_equal(s["x"].values, t["x"].values)


def test_oracle_clarke_abs_at_zero():
    law = FrictionLaw(kind="abs", slopes=(1.0,))
    iv = oracle_clarke(law, 0.0)
    assert abs(iv.lo + 1.0) < 1e-3 and abs(iv.hi - 1.0) < 1e-3


def test_oracle_clarke_smooth_point():
    law = FrictionLaw(kind="smooth_power", slopes=(0.8,), growth_exp=1.0)
    iv = oracle_clarke(law, 0.7, t_levels=(1e-5, 1e-6), z_levels=(1e-5, 1e-6))
    d = clarke_subdiff(law, 0.7)
    assert abs(iv.lo - d.lo) < 1e-4 and abs(iv.hi - d.hi) < 1e-4


def test_oracle_clarke_zigzag_kink_hull():
    law = FrictionLaw(kind="zigzag", slopes=(-0.4, 0.6), kinks=(0.3,))
    iv = oracle_clarke(law, 0.3)
    assert abs(iv.lo + 0.4) < 1e-3 and abs(iv.hi - 0.6) < 1e-3
