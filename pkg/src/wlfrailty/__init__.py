"""Shared weighted-Lindley frailty models for clustered survival data."""

from .errors import (
    ConvergenceError,
    DataError,
    DomainError,
    NotPositiveDefiniteError,
    QuadratureError,
    SingularHessianError,
)
from .kernels import BACKEND
from .model import (
    Cluster,
    Dataset,
    StepBaseline,
    Subject,
    WeibullBaseline,
    observed_loglik,
)
from .wl import WLFrailty, WLGeneral, laplace, laplace_deriv, reparam

__version__ = "0.1.0"
