"""Random conductance environments: generation, storage, moments, exponents."""

from .exponents import AssumptionReport, ExponentSet, check_assumptions, conjugate
from .generate import (
    constant_environment,
    gen_long_range_percolation,
    gen_polynomial_conductance,
    half_space_offsets,
)
from .io import load_environment, save_environment
from .model import Environment
from .moments import MomentProfile, lp_average, moment_aggregate, moment_product, moments, tail, tail_field

__all__ = [
    "AssumptionReport",
    "Environment",
    "ExponentSet",
    "MomentProfile",
    "check_assumptions",
    "conjugate",
    "constant_environment",
    "gen_long_range_percolation",
    "gen_polynomial_conductance",
    "half_space_offsets",
    "load_environment",
    "lp_average",
    "moment_aggregate",
    "moment_product",
    "moments",
    "save_environment",
    "tail",
    "tail_field",
]
