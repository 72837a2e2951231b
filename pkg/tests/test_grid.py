import numpy as np
import pytest

from eqvi.grid import (
    FREE,
    TRACE,
    ConfigurationError,
    GammaSpec,
    Grid,
    NormParams,
    ShapeError,
    SpaceTimeField,
    apply_L,
    apply_gamma,
    dual_norm_X,
    field_to_csv,
    gamma_adjoint,
    gamma_norm,
    norm_X,
    pair_X,
    pair_Y,
    norm_Y,
)

NP2 = NormParams(2.0)


def test_grid_validation():
    with pytest.raises(ConfigurationError):
        Grid(nx=0, nt=1, T=1.0)
    with pytest.raises(ConfigurationError):
        Grid(nx=1, nt=1, T=-1.0)
    with pytest.raises(ConfigurationError):
        Grid(nx=1, nt=1, T=1.0, a=2.0, b=1.0)
    g = Grid(nx=3, nt=4, T=2.0)
    assert g.dt == 0.5 and g.dx == 0.25
    assert Grid(nx=3, nt=1, T=1.0, boundary=FREE).n_cols == 5


def test_norm_zero_field():
    g = Grid(nx=4, nt=3, T=1.0)
    assert norm_X(SpaceTimeField.zeros(g), NP2) == 0.0


def test_norm_constant_quotient_closed_form():
    # tent profile with |difference quotient| = c on every edge
    g = Grid(nx=5, nt=4, T=2.0, a=0.0, b=1.0)
    c = 1.5
    ramp = c * g.dx * np.array([1, 2, 3, 2, 1], dtype=float)
    f = SpaceTimeField(np.tile(ramp, (g.nt, 1)), g)
    assert norm_X(f, NP2) == pytest.approx(c * np.sqrt(g.T * (g.b - g.a)), abs=1e-12)


def test_norm_homogeneity_and_triangle(rng):
    g = Grid(nx=6, nt=5, T=1.3)
    for p in (1.5, 2.0, 3.0):
        npar = NormParams(p)
        for _ in range(20):
            f = SpaceTimeField(rng.standard_normal(g.shape), g)
            h = SpaceTimeField(rng.standard_normal(g.shape), g)
            assert norm_X(SpaceTimeField(2.0 * f.values, g), npar) == pytest.approx(
                2.0 * norm_X(f, npar), rel=1e-12)
            s = norm_X(SpaceTimeField(f.values + h.values, g), npar)
            assert s <= norm_X(f, npar) + norm_X(h, npar) + 1e-10


def test_apply_L_affine_exact_and_monotone(rng):
    g = Grid(nx=3, nt=6, T=2.0)
    assert np.all(apply_L(SpaceTimeField.zeros(g)).values == 0.0)
    t = g.time_coords()
    f = SpaceTimeField(np.outer(2.5 * t, np.ones(g.n_cols)), g)
    assert np.allclose(apply_L(f).values, 2.5, atol=1e-13)
    for _ in range(50):
        f = SpaceTimeField(rng.standard_normal(g.shape), g)
        assert pair_X(apply_L(f), f) >= -1e-12


def test_trace_requires_free_mode():
    g = Grid(nx=3, nt=2, T=1.0)
    with pytest.raises(ConfigurationError):
        apply_gamma(SpaceTimeField.zeros(g), GammaSpec(mode=TRACE))


def test_gamma_trivial_cases():
    gf = Grid(nx=3, nt=2, T=1.0, boundary=FREE)
    ones = SpaceTimeField(np.ones(gf.shape), gf)
    tr = apply_gamma(ones, GammaSpec(mode=TRACE))
    assert np.all(tr.values == 1.0)
    full = GammaSpec(mode="restriction", mask=np.ones(gf.n_cols, dtype=bool))
    assert np.all(apply_gamma(ones, full).values == ones.values)


def test_adjoint_identity(rng):
    gf = Grid(nx=4, nt=3, T=1.0, boundary=FREE)
    specs = [
        GammaSpec(mode=TRACE),
        GammaSpec(mode="restriction", mask=rng.random(gf.n_cols) < 0.6),
    ]
    for spec in specs:
        worst = 0.0
        for _ in range(100):
            f = SpaceTimeField(rng.standard_normal(gf.shape), gf)
            if spec.mode == TRACE:
                gv = rng.standard_normal((gf.nt, 2))
            else:
                gv = rng.standard_normal(gf.shape)
            lhs = pair_X(gamma_adjoint(gv, spec, gf), f)
            rhs = pair_Y(gv, apply_gamma(f, spec), spec, gf)
            worst = max(worst, abs(lhs - rhs))
        assert worst < 1e-10


def test_restriction_adjoint_is_projection(rng):
    g = Grid(nx=5, nt=2, T=1.0)
    mask = np.array([True, False, True, True, False])
    spec = GammaSpec(mode="restriction", mask=mask)
    f = SpaceTimeField(rng.standard_normal(g.shape), g)
    proj = gamma_adjoint(apply_gamma(f, spec), spec, g)
    assert np.allclose(proj.values, f.values * mask)
    # idempotent
    again = gamma_adjoint(apply_gamma(proj, spec), spec, g)
    assert np.allclose(again.values, proj.values)


def test_gamma_norm_full_and_empty_mask():
    gf = Grid(nx=4, nt=3, T=1.0, boundary=FREE)
    full = GammaSpec(mode="restriction", mask=np.ones(gf.n_cols, dtype=bool))
    empty = GammaSpec(mode="restriction", mask=np.zeros(gf.n_cols, dtype=bool))
    for p in (1.5, 2.0, 3.0):
        res = gamma_norm(gf, NormParams(p), full, n_samples=300)
        assert res.value == pytest.approx(1.0, abs=1e-8)
        assert gamma_norm(gf, NormParams(p), empty).value == 0.0


def test_gamma_norm_dense_svd_cross_check(rng):
    # flattened weighted operator matrix: sigma_max of W_Y^{1/2} G G_X^{-1/2}
    import scipy.linalg

    gf = Grid(nx=8, nt=8, T=1.0, boundary=FREE)
    spec = GammaSpec(mode=TRACE)
    res = gamma_norm(gf, NP2, spec)

    m = gf.n_cols
    n = gf.nt * m
    G = np.zeros((2 * gf.nt, n))
    for step in range(gf.nt):
        G[2 * step, step * m] = 1.0
        G[2 * step + 1, step * m + m - 1] = 1.0
    wy = np.full(2 * gf.nt, gf.dt)
    # X gram: per-slice gradient + mass quadrature
    B = np.zeros((gf.nx + 1, m))
    for e in range(gf.nx + 1):
        B[e, e] = -1.0
        B[e, e + 1] = 1.0
    Gs = gf.dt * ((B.T @ B) / gf.dx + gf.dx * np.eye(m))
    GX = scipy.linalg.block_diag(*[Gs] * gf.nt)
    L = np.linalg.cholesky(GX)
    Wmat = np.sqrt(wy)[:, None] * G
    sig = np.linalg.svd(scipy.linalg.solve_triangular(L, Wmat.T, lower=True).T,
                        compute_uv=False)[0]
    assert res.value == pytest.approx(sig, abs=1e-6)


def test_gamma_norm_sampled_lower_bound_below_value(rng):
    gf = Grid(nx=3, nt=2, T=1.0, boundary=FREE)
    for p in (1.5, 2.5):
        for spec in (GammaSpec(mode=TRACE),
                     GammaSpec(mode="restriction", mask=np.array([1, 0, 1, 1, 0], bool))):
            res = gamma_norm(gf, NormParams(p), spec, n_samples=500)
            assert res.lower_bound <= res.value + 1e-12


def test_dual_norm_is_hoelder_tight(rng):
    g = Grid(nx=4, nt=3, T=1.0)
    for p in (1.5, 2.0, 3.0):
        npar = NormParams(p)
        d = SpaceTimeField(rng.standard_normal(g.shape), g)
        # Hoelder: <d, f> <= ||d||_q * ||f||_{Lp quadrature}
        for _ in range(20):
            f = SpaceTimeField(rng.standard_normal(g.shape), g)
            flp = (g.dt * g.dx * np.sum(np.abs(f.values) ** p)) ** (1.0 / p)
            assert pair_X(d, f) <= dual_norm_X(d, npar) * flp + 1e-10


def test_field_csv_format(tmp_path):
    g = Grid(nx=2, nt=2, T=1.0)
    f = SpaceTimeField(np.array([[1.0, 2.0], [3.0, 0.1]]), g)
    path = tmp_path / "f.csv"
    text = field_to_csv(f, path)
    lines = text.strip().split("\n")
    assert lines[0] == "t,x,value"
    assert len(lines) == 1 + g.nt * g.n_cols
    t, x, v = lines[1].split(",")
    assert float(t) == g.dt and float(v) == 1.0
    assert path.read_text() == text


def test_field_immutable():
    g = Grid(nx=2, nt=2, T=1.0)
    f = SpaceTimeField.zeros(g)
    with pytest.raises(Exception):
        f.values[0, 0] = 1.0
    with pytest.raises(ShapeError):
        SpaceTimeField(np.zeros((3, 3)), g)
    with pytest.raises(ShapeError):
        SpaceTimeField(np.full(g.shape, np.nan), g)
