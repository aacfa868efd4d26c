"""Entropy-variable LDG solver for nonlinear cross-diffusion systems."""

from .dgspace import DgSpace, eval_field, l2_project
from .errors import (
    DivergedStateError,
    InvalidArgument,
    NotConvergedError,
    NumericDomainError,
    SingularStateError,
    TimeStepUnderflow,
)
from .mesh import Mesh, build_interval_mesh, build_structured_tri_mesh, orient_facets
from .models import porous_medium, skt, tumor_growth, validate_model, volume_filling_mixture

__all__ = [
    "DgSpace",
    "DivergedStateError",
    "InvalidArgument",
    "Mesh",
    "NotConvergedError",
    "NumericDomainError",
    "SingularStateError",
    "TimeStepUnderflow",
    "build_interval_mesh",
    "build_structured_tri_mesh",
    "eval_field",
    "l2_project",
    "orient_facets",
    "porous_medium",
    "skt",
    "tumor_growth",
    "validate_model",
    "volume_filling_mixture",
]

__version__ = "0.1.0"
