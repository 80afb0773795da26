"""Kernel backend selection.

Two interchangeable implementations of the hot array kernels exist:

* ``vcmpre.kernels.numpy_backend`` -- pure numpy (BLAS-backed matmuls), always
  available.
* ``vcmpre._ckernels`` -- Cython loops, built by setup.py when a C compiler is
  present.

The ``VCM_KERNELS`` environment variable picks the backend at import time:

* ``auto`` (default): per-kernel choice measured by ``benchmarks/bench_kernels.py``
  -- BLAS matmuls win the large convolutions, the compiled loops win the
  blockwise DCT and SAD search.  Falls back to numpy when the extension is
  missing.
* ``compiled``: force the extension for everything (error if not built).
* ``numpy``: force the pure backend for everything.
"""

import os

from . import numpy_backend

try:
    from vcmpre import _ckernels as compiled_backend
except ImportError:
    compiled_backend = None

MODE = os.environ.get("VCM_KERNELS", "auto").lower()
if MODE not in ("auto", "compiled", "numpy"):
    raise ValueError(f"VCM_KERNELS must be auto, compiled or numpy, got {MODE!r}")
if MODE == "compiled" and compiled_backend is None:
    raise ImportError(
        "VCM_KERNELS=compiled but vcmpre._ckernels is not built; "
        "reinstall with a C compiler or use VCM_KERNELS=numpy"
    )

# In auto mode: True -> prefer the compiled loops for that kernel family.
# Measured on this machine with benchmarks/bench_kernels.py; BLAS keeps the
# big convolution matmuls, the extension keeps the small-block kernels.
_AUTO_PREFER_COMPILED = {
    "conv2d_forward": False,
    "conv2d_backward": False,
    "convt_forward": False,
    "convt_backward": False,
    "dct8_apply": True,
    "sad_search": True,
}


def get_backend(name):
    """Return the raw backend module by name ('numpy' or 'compiled')."""
    if name == "numpy":
        return numpy_backend
    if name == "compiled":
        if compiled_backend is None:
            raise ImportError("vcmpre._ckernels is not built")
        return compiled_backend
    raise ValueError(f"unknown backend {name!r}")


_SELECTED = {}


def _pick(func_name):
    if MODE == "compiled":
        mod = compiled_backend
    elif MODE == "numpy" or compiled_backend is None:
        mod = numpy_backend
    else:
        mod = compiled_backend if _AUTO_PREFER_COMPILED[func_name] else numpy_backend
    _SELECTED[func_name] = mod.NAME
    return getattr(mod, func_name)


conv2d_forward = _pick("conv2d_forward")
conv2d_backward = _pick("conv2d_backward")
convt_forward = _pick("convt_forward")
convt_backward = _pick("convt_backward")
dct8_apply = _pick("dct8_apply")
sad_search = _pick("sad_search")


def selection():
    """Mapping of kernel name -> backend actually in use."""
    return dict(_SELECTED)
