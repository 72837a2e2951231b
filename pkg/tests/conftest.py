import numpy as np
import pytest

from eqvi.grid import GammaSpec, Grid, NormParams, SpaceTimeField
from eqvi.operators import ConstraintMapSpec, FrictionLaw, PLaplacianParams, PsiSpec, ThetaFn


def trivial_psi(grid: Grid) -> PsiSpec:
    return PsiSpec(theta=ThetaFn("const", 1.0), beta=1.0,
                   mask=np.zeros(grid.n_cols, dtype=bool))


def const_psi(grid: Grid, c0: float = 0.3, frac: float = 0.5) -> PsiSpec:
    mask = np.zeros(grid.n_cols, dtype=bool)
    mask[: max(1, int(grid.n_cols * frac))] = True
    return PsiSpec(theta=ThetaFn("const", c0), beta=1.0, mask=mask)


def random_field(grid: Grid, rng, scale: float = 1.0) -> SpaceTimeField:
    return SpaceTimeField(scale * rng.standard_normal(grid.shape), grid)


def full_restriction(grid: Grid) -> GammaSpec:
    return GammaSpec(mode="restriction", mask=np.ones(grid.n_cols, dtype=bool))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
