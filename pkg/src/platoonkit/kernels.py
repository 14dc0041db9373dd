"""Select the RK4 kernel implementation at import time.

The compiled Cython module is used when it was built; otherwise, or when the
environment variable ``PLATOONKIT_PURE`` is set to a non-empty value, the numpy
fallback is used. Both expose ``rk4_xy``, ``rk4_pv`` and ``rk4_slow``.
"""
import importlib
import os

BACKENDS = ("cython", "python")


def load(name: str):
    if name == "cython":
        return importlib.import_module("platoonkit._core")
    if name == "python":
        return importlib.import_module("platoonkit._core_py")
    raise ValueError(f"unknown kernel backend {name!r}; expected one of {BACKENDS}")


def available() -> list[str]:
    out = []
    for name in BACKENDS:
        try:
            load(name)
        except ImportError:
            continue
        out.append(name)
    return out


if os.environ.get("PLATOONKIT_PURE"):
    impl, BACKEND = load("python"), "python"
else:
    try:
        impl, BACKEND = load("cython"), "cython"
    except ImportError:
        impl, BACKEND = load("python"), "python"

COMPILED = BACKEND == "cython"
