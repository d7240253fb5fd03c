"""Kernel selection: the compiled extension when it was built, else the numpy port."""

from . import _gi_py

try:
    from . import _gi_kernel
except ImportError:  # extension not built
    _gi_kernel = None

KERNELS = {"python": _gi_py.solve_dense}
if _gi_kernel is not None:
    KERNELS["compiled"] = _gi_kernel.solve_dense

BACKEND = "compiled" if _gi_kernel is not None else "python"


def get_kernel(name: str | None = None):
    name = BACKEND if name is None else name
    try:
        return KERNELS[name]
    except KeyError:
        raise ValueError(f"QP kernel {name!r} unavailable; have {sorted(KERNELS)}") from None
