"""Exception types shared across the toolkit.

The CLI reports the class name of the raised error on stderr, so these
names are part of the public contract.
"""


class StainkitError(Exception):
    """Base class for all toolkit errors."""


class ChannelCountError(StainkitError):
    """Image does not have the required number of channels."""


class DomainError(StainkitError):
    """Value outside the mathematical domain of an operation."""


class SingularStainMatrix(StainkitError):
    """Stain matrix is too ill-conditioned to deconvolve."""


class DimensionError(StainkitError):
    """Array shapes or sizes are inconsistent."""


class InsufficientTissue(StainkitError):
    """Too few tissue pixels survive optical-density thresholding."""


class DegenerateStainDistribution(StainkitError):
    """Optical-density cloud does not span two stain directions."""


class EmptyInput(StainkitError):
    """An operation received an empty collection."""


class ConfigError(StainkitError):
    """Invalid configuration or parameter value."""


class DegenerateImage(StainkitError):
    """Image has no usable contrast."""


class InsufficientTissueArea(StainkitError):
    """Rejection sampling exhausted its draw budget."""
