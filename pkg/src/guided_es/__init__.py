"""Gradient estimation with evolution strategies guided by past update directions."""
from .estimators import (EstimatorConfig, GradientEstimate, SurrogateHistory, es_gradient,
                         guided_gradient, iterative_step)
from .linalg import OrthoSet, gram_schmidt, sample_orthogonal_complement, sample_orthonormal
from .objectives import MlpSpec, Objective, linear_objective, mlp_objective, quadratic_objective
from .optimizers import SGD, Adam, fitness_shape

__all__ = [
    "Adam", "EstimatorConfig", "GradientEstimate", "MlpSpec", "Objective", "OrthoSet", "SGD",
    "SurrogateHistory", "es_gradient", "fitness_shape", "gram_schmidt", "guided_gradient",
    "iterative_step", "linear_objective", "mlp_objective", "quadratic_objective",
    "sample_orthogonal_complement", "sample_orthonormal",
]
__version__ = "0.1.0"
