"""Exception types shared across the package.

Every error raised on a user-facing path derives from OceanTlError so the
command line driver can map failures onto stable exit codes.
"""


class OceanTlError(Exception):
    """Base class for all package errors."""


class ConfigError(OceanTlError):
    """A configuration value is missing, malformed, or inconsistent."""


class GeometryError(OceanTlError):
    """An environment description is unphysical (depths, knots, layers)."""


class RayTraceError(OceanTlError):
    """Ray integration failed to terminate or produced a non-finite state."""


class NumericsError(OceanTlError):
    """A numeric routine produced NaN/Inf or failed to converge."""


class FormatError(OceanTlError):
    """A binary container or text file does not match its declared layout."""


class ShapeError(OceanTlError):
    """Tensor shapes are inconsistent with the requested operation."""
