"""Exception taxonomy shared across the package.

Exceptions carry behavioral meaning only.  The command line maps
``ConfigError`` to exit code 2, every other ``CavityFilterError`` to exit
code 3, and a failed statistical assertion (``ensemble --assert``) to
exit code 4.
"""

from __future__ import annotations

__all__ = [
    "CavityFilterError",
    "ConfigError",
    "DimensionError",
    "DomainError",
    "TruncationError",
    "TruncationWarning",
    "StepSizeError",
    "StabilityError",
    "DegenerateDensityError",
    "DegenerateVarianceWarning",
    "NormBoundsError",
    "DivergenceError",
    "AlgebraError",
    "InfeasibleGainError",
    "PoleEvaluationError",
]


class CavityFilterError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(CavityFilterError):
    """Invalid configuration input (bad key, bad value, bad section)."""


class DimensionError(CavityFilterError):
    """Invalid or mismatched array dimensions (includes dim < 2)."""


class DomainError(CavityFilterError):
    """Input outside the mathematical domain of the operation."""


class TruncationError(CavityFilterError):
    """Fock-space truncation leakage above the hard threshold (1e-4)."""


class TruncationWarning(UserWarning):
    """Fock-space truncation leakage above the soft threshold (1e-8)."""


class StepSizeError(CavityFilterError):
    """A stochastic step moved the state further than the scheme allows;
    the time step is too large for the given operators."""


class StabilityError(CavityFilterError):
    """Explicit grid step violates its stability (CFL-type) bound."""


class DegenerateDensityError(CavityFilterError):
    """Grid density has nonpositive total mass; cannot normalize."""


class DegenerateVarianceWarning(UserWarning):
    """A filter update produced a negative variance (possible in the
    unnormalized discrete update when H^2 * P_pred > 1)."""


class NormBoundsError(CavityFilterError):
    """Unnormalized state norm left the representable band (1e+-100);
    the caller must rescale more often or shorten the run."""


class DivergenceError(CavityFilterError):
    """Integrator state became nonfinite."""


class AlgebraError(CavityFilterError):
    """Degenerate transfer-function algebra (identically singular loop,
    empty denominator after trimming)."""


class InfeasibleGainError(CavityFilterError):
    """Requested pole placement needs a negative gain."""


class PoleEvaluationError(CavityFilterError):
    """Frequency response requested at (or numerically too close to) a pole."""
