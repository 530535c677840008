"""Exception taxonomy shared by the whole engine.

Every failure mode the batch front end must distinguish gets its own class;
the CLI maps these onto distinct exit codes.
"""


class PolyharmError(Exception):
    """Base class for all engine errors."""


class ChartDomainError(PolyharmError):
    """A point (or a grid node's image) left the declared chart domain."""


class CapabilityError(PolyharmError):
    """A model or evaluation mode lacks data the requested operation needs,
    e.g. curvature derivatives, deep Christoffel jets, or analytic maps."""


class ConfigurationError(PolyharmError):
    """Invalid configuration: bad grid resolution for the requested stencil
    or tower depth, malformed expressions, unknown commands."""


class DegenerateInputError(PolyharmError):
    """An operation received input on which its output is meaningless,
    e.g. a sup-ratio whose denominator vanishes everywhere."""


class NumericalContractError(PolyharmError):
    """A numerical self-check that the engine guarantees failed,
    e.g. cross-validation of two evaluation paths beyond tolerance."""
