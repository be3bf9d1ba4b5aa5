"""Distributionally robust and chance-constrained portfolio selection."""

from .core import UNBOUNDED, FeasibleSet, PortfolioSolution
from .divergence import KL, DivergenceSpec, cressie_read
from .dro import DroConfig, Order
from .moments import Family, MomentModel, ReturnMatrix

__version__ = "0.1.0"
