"""Backend selection for the hot per-step solver kernel.

The compiled extension is preferred when present; EQVI_FORCE_PURE=1 forces
the pure-Python twin (used by the benchmark and the parity tests).
"""

import os

from . import pure

if os.environ.get("EQVI_FORCE_PURE", "0") == "1":
    _impl = pure
else:
    try:
        from . import _gs as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = pure

step_solve = _impl.step_solve
step_residual = _impl.step_residual
BACKEND = _impl.BACKEND


def get_backend(name: str | None = None):
    """Return (step_solve, step_residual, label) for `name` in
    {None (selected), 'pure', 'cython'}."""
    if name in (None, "selected"):
        return step_solve, step_residual, BACKEND
    if name == "pure":
        return pure.step_solve, pure.step_residual, pure.BACKEND
    if name == "cython":
        from . import _gs  # raises ImportError when not built

        return _gs.step_solve, _gs.step_residual, _gs.BACKEND
    raise ValueError(f"unknown kernel backend {name!r}")
