"""Quantitative ergodicity certificates for non-conservative positive semigroups."""

from .measures import Grid, GridFunction, HybridMeasure, jordan, pair, tv_norm
from .core import (
    CouplingCertificate,
    HarmonicProfile,
    MatrixChainSemigroup,
    Semigroup,
    capacity,
    certify_admissible,
    contraction_check,
    doeblin_constant,
    ergodic_gap,
    harmonic_extract,
    mass,
    mass_domination,
    rate_fit,
)

__version__ = "0.1.0"
