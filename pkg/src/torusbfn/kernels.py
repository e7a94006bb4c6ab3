"""Selects the compiled kernels when available, else the numpy fallback.

Set ``TORUSBFN_KERNELS`` to ``python`` to force the fallback or to
``compiled`` to make a missing extension an import error.
"""

import importlib
import os

_CHOICES = ("auto", "compiled", "python")


def load_backend(name="auto"):
    """Return the kernel module for ``name`` (``auto``, ``compiled`` or ``python``)."""
    if name not in _CHOICES:
        raise ValueError(f"unknown kernel backend {name!r}; expected one of {_CHOICES}")
    if name in ("auto", "compiled"):
        try:
            return importlib.import_module("torusbfn._kernels")
        except ImportError:
            if name == "compiled":
                raise
    return importlib.import_module("torusbfn._pykernels")


def compiled_available():
    try:
        importlib.import_module("torusbfn._kernels")
    except ImportError:
        return False
    return True


impl = load_backend(os.environ.get("TORUSBFN_KERNELS", "auto"))
BACKEND = "compiled" if impl.__name__.endswith("._kernels") else "python"
