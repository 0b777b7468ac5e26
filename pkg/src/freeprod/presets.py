"""Built-in specifications."""
from __future__ import annotations

from fractions import Fraction

from .factor import FactorChain
from .xi import FreeProductSpec

HALF = Fraction(1, 2)


def example_factors() -> tuple[FactorChain, FactorChain]:
    """The two finite graphs of the two-factor example.

    ``X1``: o1 -> g1 -> g2, g2 -> g1 | o1 with probability 1/2 each.
    ``X2``: o2 -> h1 -> h2, h2 -> h3 | o2 with probability 1/2 each, h3 -> h1.
    """
    x1 = FactorChain.from_edges(
        0,
        ("o1", "g1", "g2"),
        [("o1", "g1", 1), ("g1", "g2", 1), ("g2", "g1", HALF), ("g2", "o1", HALF)],
    )
    x2 = FactorChain.from_edges(
        1,
        ("o2", "h1", "h2", "h3"),
        [("o2", "h1", 1), ("h1", "h2", 1), ("h2", "h3", HALF), ("h2", "o2", HALF), ("h3", "h1", 1)],
    )
    return x1, x2


def example_spec() -> FreeProductSpec:
    return FreeProductSpec(example_factors(), (0.5, 0.5))


# Reference values for the presets; compared against the computed ones in reports.
REFERENCE = {
    "paper-7.1": {"ell0": (0.41563, 1e-4), "h": (0.32005, 1e-4)},
    "paper-zz2-7.2": {"xi": (0.55973, 1e-4), "fhat": (0.24291, 1e-4), "h": (1.14985, 1e-3)},
}

PRESETS = ("paper-7.1", "paper-zz2-7.2")
