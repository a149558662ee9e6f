"""Round-loop kernels: compiled extension when available, NumPy otherwise.

The environment variable ``BITVOLT_BACKEND`` forces a backend: ``cython``
(error if the extension is missing) or ``python``.  Within one backend all
runs are bit-deterministic; the two backends agree to floating-point
round-off (the compiled loop orders its dense reductions differently).
"""

from __future__ import annotations

import os

from . import reference
from .common import (
    PLANT_DISTFLOW,
    PLANT_LINEAR,
    VARIANT_BASELINE,
    VARIANT_VCLB,
    VARIANT_VCLBP,
    LoopInputs,
    LoopResult,
    model_csr,
)

_forced = os.environ.get("BITVOLT_BACKEND", "").strip().lower()

_ext = None
if _forced != "python":
    try:
        from . import _fastloop as _ext  # type: ignore
    except ImportError as exc:
        _ext = None
        if _forced == "cython":
            raise ImportError(
                "BITVOLT_BACKEND=cython but the compiled kernel is not built; "
                "reinstall with Cython and a C toolchain available") from exc

_active = _ext if _ext is not None else reference


def backend_name() -> str:
    return _active.BACKEND_NAME


def available_backends():
    out = {"python": reference}
    if _ext is not None:
        out["cython"] = _ext
    return out


def run_rounds(inp: LoopInputs, backend: str | None = None) -> LoopResult:
    impl = _active if backend is None else available_backends()[backend]
    return impl.run_rounds(inp)


def distflow_sweep(*args, backend: str | None = None, **kwargs):
    impl = _active if backend is None else available_backends()[backend]
    return impl.distflow_sweep(*args, **kwargs)


def distflow_residual(*args, **kwargs):
    # residual checking is not performance critical; one implementation
    return reference.distflow_residual(*args, **kwargs)
