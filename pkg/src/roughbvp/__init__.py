"""Boundary value problems on rough pixel domains inside a confinement box.

Layers, bottom up: ``geometry`` (pixel domains, prefractal boundaries, set
distances), ``measures`` (atomic measures and regularity audits),
``discretization`` (bilinear forms and traces), ``solver`` (weak solutions
and quasi-inverses), ``spectral`` (eigenpairs and derived constants),
``experiments`` (convergence and shape-search drivers), ``cli``.

Submodules import lazily so the command line can cap BLAS threads before
any numeric library loads.
"""

from importlib import import_module

__version__ = "0.1.0"

_SUBMODULES = (
    "geometry",
    "measures",
    "discretization",
    "solver",
    "spectral",
    "experiments",
    "cli",
    "errors",
)

__all__ = list(_SUBMODULES) + ["__version__"]


def __getattr__(name):
    if name in _SUBMODULES:
        return import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(__all__)
