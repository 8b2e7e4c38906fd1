"""Exception types raised across the package."""


class HarmonyError(Exception):
    """Base class for all package errors."""


class ConfigurationError(HarmonyError, ValueError):
    """Invalid configuration value. ``key`` names the offending setting when known."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class UnknownDomainError(HarmonyError, KeyError):
    def __init__(self, domain_id):
        super().__init__(domain_id)
        self.domain_id = domain_id

    def __str__(self):
        return f"unknown kernel domain {self.domain_id!r}"


class IngestionError(HarmonyError, OSError):
    """A volume or mask file could not be read."""


class ShapeError(HarmonyError, ValueError):
    pass


class WiringError(ShapeError):
    """Latent code / skip maps do not fit the decoder they are fed to."""


class ScoringError(HarmonyError, ValueError):
    pass


class CollinearityError(HarmonyError, ValueError):
    def __init__(self, message, covariate=None):
        super().__init__(message)
        self.covariate = covariate


class CheckpointError(HarmonyError, ValueError):
    pass


class TrainingDivergedError(HarmonyError, FloatingPointError):
    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path
