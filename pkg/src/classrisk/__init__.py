"""Classroom respiratory-transmission risk: droplet + aerosol models, a
two-stage Monte Carlo classroom simulator, and semester risk projection."""

__version__ = "0.1.0"

from .errors import ConfigError, DegenerateInputError, DomainError, ClassriskError  # noqa: F401
