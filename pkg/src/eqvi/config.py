"""Instance configuration files: JSON load, validation, and construction of
instances, solver options, and control problems."""

from __future__ import annotations

import json

import numpy as np

from .grid import GammaSpec, Grid, NormParams
from .inner_solver import SolveOptions
from .instance import QviInstance, SpaceTimeField, make_source
from .operators import ConstraintMapSpec, FrictionLaw, PLaplacianParams, PsiSpec, ThetaFn
from .outer_solver import DEFAULT_EPS_SCHEDULE, OuterOptions


class ConfigError(ValueError):
    """Malformed or inconsistent configuration; message carries the location."""


def shipped_instance_path(name: str) -> str:
    """Absolute path of a packaged instance file, e.g. 'demo-a'."""
    from importlib.resources import files

    path = files("eqvi").joinpath("instances").joinpath(f"{name}.json")
    return str(path)


def shipped_instance_names() -> list:
    """Names of all packaged instance files."""
    from importlib.resources import files

    folder = files("eqvi").joinpath("instances")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file")
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}:{err.lineno}:{err.colno}: {err.msg}")


def _section(cfg: dict, name: str, required: bool = True) -> dict:
    sec = cfg.get(name)
    if sec is None:
        if required:
            raise ConfigError(f"missing config section {name!r}")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be an object")
    return sec


def _get(sec: dict, path: str, key: str, default=None, required: bool = False):
    if key not in sec:
        if required:
            raise ConfigError(f"{path}.{key}: required value missing")
        return default
    return sec[key]


def _mask(frag, n_cols: int, path: str) -> np.ndarray:
    if frag is None:
        return np.zeros(n_cols, dtype=bool)
    if isinstance(frag, list):
        if len(frag) != n_cols:
            raise ConfigError(f"{path}: mask list must have {n_cols} entries")
        return np.asarray(frag, dtype=bool)
    kind = frag.get("type") if isinstance(frag, dict) else None
    if kind == "all":
        return np.ones(n_cols, dtype=bool)
    if kind == "none":
        return np.zeros(n_cols, dtype=bool)
    if kind == "left_half":
        m = np.zeros(n_cols, dtype=bool)
        m[: n_cols // 2] = True
        return m
    if kind == "indices":
        m = np.zeros(n_cols, dtype=bool)
        for i in frag.get("indices", []):
            if not 0 <= int(i) < n_cols:
                raise ConfigError(f"{path}: mask index {i} out of range")
            m[int(i)] = True
        return m
    raise ConfigError(f"{path}: unknown mask spec {frag!r}")


def build_instance(cfg: dict, name: str = "instance") -> QviInstance:
    try:
        gsec = _section(cfg, "grid")
        grid = Grid(
            nx=int(_get(gsec, "grid", "nx", required=True)),
            nt=int(_get(gsec, "grid", "nt", required=True)),
            T=float(_get(gsec, "grid", "T", required=True)),
            a=float(_get(gsec, "grid", "a", 0.0)),
            b=float(_get(gsec, "grid", "b", 1.0)),
            boundary=str(_get(gsec, "grid", "boundary", "dirichlet")),
        )
        norm = NormParams(p=float(_get(_section(cfg, "norm"), "norm", "p", required=True)))

        fsec = _section(cfg, "operator_F")
        f_params = PLaplacianParams(
            p=norm.p,
            e=float(_get(fsec, "operator_F", "e", required=True)),
            e_min=float(_get(fsec, "operator_F", "e_min", 1e-8)),
        )

        lsec = _section(cfg, "friction_law")
        law_kwargs = dict(
            kind=str(_get(lsec, "friction_law", "kind", required=True)),
            slopes=tuple(_get(lsec, "friction_law", "slopes", [1.0])),
            kinks=tuple(_get(lsec, "friction_law", "kinks", [])),
            growth_exp=float(_get(lsec, "friction_law", "growth_exp", 1.0)),
        )
        if "growth_coef" in lsec:
            law_kwargs["law_growth_coef"] = float(lsec["growth_coef"])
        if "growth_offset" in lsec:
            law_kwargs["law_growth_offset"] = float(lsec["growth_offset"])
        law = FrictionLaw(**law_kwargs)

        psec = _section(cfg, "psi", required=False) or {"mask": {"type": "none"}}
        tsec = psec.get("theta", {"kind": "const", "c0": 1.0})
        theta = ThetaFn(kind=str(tsec.get("kind", "const")),
                        c0=float(tsec.get("c0", 1.0)), c1=float(tsec.get("c1", 0.0)))
        psi = PsiSpec(theta=theta, beta=float(psec.get("beta", 1.0)),
                      mask=_mask(psec.get("mask"), grid.n_cols, "psi.mask"))

        csec = _section(cfg, "constraint_map")
        constraint = ConstraintMapSpec(
            r0=float(_get(csec, "constraint_map", "r0", required=True)),
            r1=float(_get(csec, "constraint_map", "r1", 0.0)),
            aggregator=str(_get(csec, "constraint_map", "aggregator", "mean_abs")),
            r_max=float(_get(csec, "constraint_map", "r_max", np.inf)),
        )

        source = make_source(grid, _section(cfg, "source_E", required=False) or {"type": "zeros"})

        gmsec = _section(cfg, "gamma")
        mode = str(_get(gmsec, "gamma", "mode", required=True))
        mask = _mask(gmsec.get("mask"), grid.n_cols, "gamma.mask") if mode == "restriction" else None
        gamma = GammaSpec(mode=mode, mask=mask)

        overrides = cfg.get("constants") or None
        return QviInstance(grid=grid, norm=norm, f_params=f_params, law=law,
                           psi=psi, constraint=constraint, source=source,
                           gamma=gamma, overrides=overrides, name=name)
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as err:
        raise ConfigError(f"invalid configuration: {err}")


def build_outer_options(cfg: dict) -> OuterOptions:
    sec = _section(cfg, "solver", required=False)
    inner = SolveOptions(
        tol_residual=float(sec.get("tol_residual", 1e-9)),
        max_sweeps=int(sec.get("max_sweeps", 100_000)),
        relaxation=float(sec.get("relaxation", 1.0)),
    )
    try:
        return OuterOptions(
            selection=str(sec.get("selection", "min-norm")),
            damping=float(sec.get("damping", 0.5)),
            eps_schedule=tuple(sec.get("eps_schedule", DEFAULT_EPS_SCHEDULE)),
            tol_fp=float(sec.get("tol_fp", 1e-7)),
            max_outer=int(sec.get("max_outer", 500)),
            inner=inner,
        )
    except (ValueError, TypeError) as err:
        raise ConfigError(f"solver: {err}")


def build_control_problem(cfg: dict, inst: QviInstance):
    """Control space, cost parameters and plant settings from the config."""
    from .control import ControlSpace

    sec = _section(cfg, "control")
    e_box = tuple(float(v) for v in _get(sec, "control", "e_box", required=True))
    l_boxes = tuple(tuple(float(v) for v in b)
                    for b in _get(sec, "control", "l_box", required=True))
    basis_frags = _get(sec, "control", "E_basis", required=True)
    basis = tuple(make_source(inst.grid, frag) for frag in basis_frags)
    coeff_boxes = tuple(tuple(float(v) for v in b)
                        for b in _get(sec, "control", "coeff_box", required=True))
    try:
        space = ControlSpace(template=inst, e_box=e_box, l_boxes=l_boxes,
                             basis=basis, coeff_boxes=coeff_boxes)
    except ValueError as err:
        raise ConfigError(f"control: {err}")
    rho = float(sec.get("rho", 1e-6))
    plant = sec.get("plant", {"seed": 0, "noise": 0.0})
    probe = sec.get("probe", {})
    probe_cfg = {
        "n_starts": int(probe.get("n_starts", 3)),
        "strategies": tuple(probe.get("strategies", ("min-norm", "lo", "hi"))),
    }
    return space, rho, int(plant.get("seed", 0)), float(plant.get("noise", 0.0)), probe_cfg
