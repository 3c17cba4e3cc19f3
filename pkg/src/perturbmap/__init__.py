"""Simulation and certification tools for population maps under decaying additive perturbations.

The model is ``x_{n+1} = max(f(x_n) + sigma_n xi_{n+1}, 0)`` (stochastic) or
``x_{n+1} = max(f(x_n) + gamma_{n+1}, 0)`` (deterministic) for a map ``f``
with ``f(0) = 0`` and one positive equilibrium ``K``.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    BracketError,
    ConfigError,
    ConvergenceError,
    DegenerateSignError,
    DomainError,
    EmptySetError,
    PerturbMapError,
    PreconditionError,
    SimulationOverflow,
)
