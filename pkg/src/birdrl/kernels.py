"""Backend selection for the fused numerical kernels.

The compiled module is used when it was built; otherwise, or when
``BIRDRL_PURE_PYTHON=1`` is set, the numpy implementations are used.
The compiled module only covers loop-bound kernels, so a name it does not
define resolves to the numpy version under either backend.
Both backends are deterministic, but they are not bitwise identical to
each other, so results should only be compared within one backend.
"""

import os

from . import _kernels_py

_NAMES = (
    "gru_forward",
    "gru_backward",
    "gauss_logpdf",
    "gauss_logpdf_backward",
    "gauss_kl",
    "gauss_kl_backward",
    "lambda_return",
    "lambda_return_backward",
    "pendulum_integrate",
    "elu",
    "softplus",
)


def _load(force_python=False):
    if force_python or os.environ.get("BIRDRL_PURE_PYTHON", "") not in ("", "0"):
        return _kernels_py, "python"
    try:
        from . import _ckernels
    except ImportError:
        return _kernels_py, "python"
    return _ckernels, "compiled"


_impl, BACKEND = _load()

for _name in _NAMES:
    globals()[_name] = getattr(_impl, _name, getattr(_kernels_py, _name))


def backends():
    """Return ``{name: module}`` for every backend importable in this build."""
    found = {"python": _kernels_py}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        found["compiled"] = _ckernels
    return found
