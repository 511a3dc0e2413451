"""Exception hierarchy shared across the package.

Two families matter at the command-line boundary: configuration problems
(bad keys, unstable traps, malformed data files) map to exit code 2,
numerical failures (integration aborts, non-unitary scattering matrices,
degenerate fits) map to exit code 3.
"""


class IonbathError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(IonbathError):
    """Invalid configuration: unknown key, bad value, unstable trap, bad file."""


class DataFormatError(ConfigError):
    """A data file failed schema validation; message names the offending line."""


class NumericsError(IonbathError):
    """Base class for runtime numerical failures."""


class DomainError(NumericsError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class IntegrationError(NumericsError):
    """Integration failed: trajectory step underflow, hard radius floor, or
    a quadrature that did not converge under node refinement."""


class PropagationError(NumericsError):
    """Radial-equation propagation or matrix extraction failed quality checks."""


class FitError(NumericsError):
    """A least-squares or maximum-likelihood fit failed to converge."""


class DegenerateFitError(FitError):
    """The fit problem is underdetermined (flat objective, unidentifiable parameters)."""
