"""Entropy, drift and growth of random walks on free products of finite Markov chains."""

__version__ = "0.1.0"

from .errors import FreeProductError  # noqa: E402
from .factor import FactorChain, green_factor, validate_factor  # noqa: E402
from .presets import example_spec  # noqa: E402
from .xi import FreeProductSpec, solve_with_derivative, solve_xi  # noqa: E402

__all__ = [
    "FactorChain",
    "FreeProductError",
    "FreeProductSpec",
    "example_spec",
    "green_factor",
    "solve_with_derivative",
    "solve_xi",
    "validate_factor",
]
