"""Weight-initialization laboratory: initializers, variance theory, a numpy
MLP and GPT with manual backprop, and the experiments that exercise them."""
from .init import FanSpec, InitScheme, gain_for, init_matrix, target_std
from .numerics import ParameterError, RngState, ShapeError
from .theory import gains

__version__ = "0.1.0"

__all__ = ["FanSpec", "InitScheme", "gain_for", "init_matrix", "target_std",
           "ParameterError", "RngState", "ShapeError", "gains", "__version__"]
