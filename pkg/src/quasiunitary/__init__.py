"""Numerical toolkit for comparing operators on different Hilbert spaces.

Two sectorial forms are linked by four identification maps; the package
measures how far those maps are from unitary, checks resolvent and
functional-calculus convergence, tracks spectra, and ships ready-made
families (spectral truncation, dynamic boundary conditions, degenerate
diffusion, thin tubes shrinking onto a metric graph).
"""

from .linalg import LinearMap, NumericalError, WeightedSpace, gram_adjoint, weighted_norm
from .forms import SectorialityConstants, SesquilinearForm, resolvent, sectoriality_constants
from .quasiuni import IdentificationQuadruple, QuasiUnitaryReport, defect_report, verify_key_estimate
from .calculus import apply_function, calculus_difference, exponential, resolvent_shift, semigroup
from .spectra import SpectralWindow, count_multiplicity_transfer, spectral_projection, spectrum
from .scenarios import (MetricGraph, RobinData, ScenarioBundle, build_degenerate, build_fourier,
                        build_graphtube, build_wentzell)

__version__ = "0.1.0"

__all__ = [
    "LinearMap", "NumericalError", "WeightedSpace", "gram_adjoint", "weighted_norm",
    "SectorialityConstants", "SesquilinearForm", "resolvent", "sectoriality_constants",
    "IdentificationQuadruple", "QuasiUnitaryReport", "defect_report", "verify_key_estimate",
    "apply_function", "calculus_difference", "exponential", "resolvent_shift", "semigroup",
    "SpectralWindow", "count_multiplicity_transfer", "spectral_projection", "spectrum",
    "MetricGraph", "RobinData", "ScenarioBundle", "build_degenerate", "build_fourier",
    "build_graphtube", "build_wentzell",
]
