"""Full problem description of one quasi-variational inequality instance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ConfigurationError, GammaSpec, Grid, NormParams, ShapeError, SpaceTimeField
from .operators import ConstraintMapSpec, FrictionLaw, PLaplacianParams, PsiSpec


@dataclass(frozen=True, eq=False)
class QviInstance:
    """Grid, norms, operators, feedback law, bifunction, constraint map and
    source of one problem; `overrides` may pin declared hypothesis constants
    that differ from the derived defaults."""

    grid: Grid
    norm: NormParams
    f_params: PLaplacianParams
    law: FrictionLaw
    psi: PsiSpec
    constraint: ConstraintMapSpec
    source: SpaceTimeField          # dual density
    gamma: GammaSpec
    overrides: dict | None = None
    name: str = "instance"

    def __post_init__(self):
        self.gamma.validate(self.grid)
        if self.source.grid.shape != self.grid.shape:
            raise ShapeError("source term lives on the wrong grid")
        if self.psi.mask.shape != (self.grid.n_cols,):
            raise ShapeError("psi mask does not match the grid")
        if self.f_params.p != self.norm.p:
            raise ConfigurationError("operator exponent and norm exponent disagree")
        if self.norm.p <= self.psi.beta:
            raise ConfigurationError("psi exponent beta must satisfy beta < p")

    def gamma_shape(self) -> tuple[int, int]:
        if self.gamma.mode == "trace":
            return (self.grid.nt, 2)
        return self.grid.shape


def make_source(grid: Grid, spec) -> SpaceTimeField:
    """Build the dual source density from a config fragment.

    Supported: {"type": "zeros"}, {"type": "constant", "value": v},
    {"type": "bump", "amplitude": a, "mode": k} (space sine, constant in t),
    {"type": "values", "values": [[...]]},
    {"type": "basis", "elements": [frag, ...], "coeffs": [c, ...]}.
    """
    kind = spec.get("type", "zeros")
    if kind == "zeros":
        return SpaceTimeField.zeros(grid)
    if kind == "constant":
        return SpaceTimeField(np.full(grid.shape, float(spec["value"])), grid)
    if kind == "bump":
        amp = float(spec.get("amplitude", 1.0))
        mode = int(spec.get("mode", 1))
        xs = grid.space_coords()
        row = amp * np.sin(mode * np.pi * (xs - grid.a) / (grid.b - grid.a))
        return SpaceTimeField(np.tile(row, (grid.nt, 1)), grid)
    if kind == "ramp":
        # linear growth in time, uniform in space
        amp = float(spec.get("amplitude", 1.0))
        ts = grid.time_coords() / grid.T
        return SpaceTimeField(np.outer(amp * ts, np.ones(grid.n_cols)), grid)
    if kind == "values":
        return SpaceTimeField(np.asarray(spec["values"], dtype=float), grid)
    if kind == "basis":
        elements = [make_source(grid, frag) for frag in spec["elements"]]
        coeffs = [float(c) for c in spec["coeffs"]]
        if len(elements) != len(coeffs):
            raise ShapeError("basis elements and coefficients differ in length")
        acc = np.zeros(grid.shape)
        for c, el in zip(coeffs, elements):
            acc += c * el.values
        return SpaceTimeField(acc, grid)
    raise ShapeError(f"unknown source type {kind!r}")
