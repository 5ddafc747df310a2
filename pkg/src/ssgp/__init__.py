"""Linear-time Gaussian process inference in state-space form."""

__version__ = "0.1.0"

from .data import Dataset, read_csv, simulate
from .errors import (
    ConvergenceError, DomainError, FactorizationError, NoStationarySolutionError, NumericalFailure,
    SSGPError, UnsupportedInferenceError, UnsupportedKernelError, UnsupportedLikelihoodError,
)
from .inference import GPModel, InferenceResult, infer, predict
from .kernels import Constant, Matern, Sum, parse_kernel
from .learning import objective, optimize
from .likelihoods import Erf, Gaussian, Logistic, Poisson, StudentT, parse_likelihood
from .means import ConstMean, LinearMean, ZeroMean
from .primitives import DenseGP, StateSpaceGP

__all__ = [
    "Dataset", "read_csv", "simulate", "GPModel", "InferenceResult", "infer", "predict",
    "Constant", "Matern", "Sum", "parse_kernel", "objective", "optimize", "Erf", "Gaussian",
    "Logistic", "Poisson", "StudentT", "parse_likelihood", "ConstMean", "LinearMean", "ZeroMean",
    "DenseGP", "StateSpaceGP", "SSGPError", "ConvergenceError", "DomainError", "FactorizationError",
    "NoStationarySolutionError", "NumericalFailure", "UnsupportedInferenceError",
    "UnsupportedKernelError", "UnsupportedLikelihoodError",
]
