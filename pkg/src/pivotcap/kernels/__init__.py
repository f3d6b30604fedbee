"""Hot numeric kernels with a compiled core and a pure-NumPy fallback.

The compiled extension is preferred when importable; setting PIVOTCAP_PURE=1
in the environment forces the fallback. ``scatter_add_rows`` accumulates in
element order in both backends and is therefore bit-identical across them;
the softmax kernels may differ in the last ulp because the summation
algorithms differ. A single process always uses one backend throughout, so
run-level determinism is unaffected by the choice.
"""
import os

from . import _pykernels

_force_pure = os.environ.get("PIVOTCAP_PURE", "0") not in ("", "0")

if _force_pure:
    _impl = _pykernels
    _BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        _BACKEND = "compiled"
    except ImportError:
        _impl = _pykernels
        _BACKEND = "python"

scatter_add_rows = _impl.scatter_add_rows
softmax_rows = _impl.softmax_rows
softmax_grad_rows = _impl.softmax_grad_rows


def backend() -> str:
    """Name of the active kernel backend, "compiled" or "python"."""
    return _BACKEND
