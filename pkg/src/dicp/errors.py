"""Exception types shared across the package."""


class DICPError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(DICPError, ValueError):
    """Invalid or inconsistent run configuration."""


class CloudFormatError(DICPError, ValueError):
    """A point cloud or trajectory file is malformed or truncated."""


class MissingDopplerError(DICPError, ValueError):
    """A Doppler channel is required by the registration mode but absent."""


class RegistrationError(DICPError, RuntimeError):
    """Registration could not proceed (e.g. no correspondences survived filtering)."""


class DegenerateSystemError(RegistrationError):
    """The normal equations stayed singular after every damping retry."""
