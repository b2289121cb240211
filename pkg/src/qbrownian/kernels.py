"""Kernel selection: the compiled extension when importable, else pure Python.

Set ``QBROWNIAN_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

COMPILED = False
if not os.environ.get("QBROWNIAN_PURE_PYTHON"):
    try:
        from . import _kernels as _impl

        COMPILED = True
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

lindblad_gain = _impl.lindblad_gain
kmc_lattice = _impl.kmc_lattice
kmc_continuum = _impl.kmc_continuum

BACKEND = "compiled" if COMPILED else "python"
