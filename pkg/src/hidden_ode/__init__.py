"""Learning hidden sub-dynamics of partially measured ODE systems.

The package pairs known physics with a small neural network that supplies
the derivatives of unmeasured states, and fits the network one time step at
a time with alternating state and parameter Newton updates.
"""

from . import benchmarks, evaluation, hybrid_model, neural_field, recursive_newton
from .errors import (CheckpointFormatError, ConfigurationError, CovarianceDegeneracyError,
                     DatasetFormatError, DivergenceError, HiddenOdeError, NumericalError)

__version__ = "0.1.0"
