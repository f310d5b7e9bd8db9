"""Exception types raised across the package."""


class CuriodynError(Exception):
    """Base class for all package errors."""


class IncompatibleGrid(CuriodynError, ValueError):
    pass


class TooShort(CuriodynError, ValueError):
    pass


class EmptyCorpus(CuriodynError, ValueError):
    pass


class DegenerateInput(CuriodynError, ValueError):
    pass


class TooFewRaters(CuriodynError, ValueError):
    pass


class MissingProfile(CuriodynError, KeyError):
    pass


class InsufficientPairs(CuriodynError, ValueError):
    pass


class LengthMismatch(CuriodynError, ValueError):
    pass


class OverlapWithinSpeaker(CuriodynError, ValueError):
    pass


class UnstableDrift(CuriodynError, ValueError):
    pass


class UnstableDriftWarning(RuntimeWarning):
    pass


class NonFiniteLikelihood(CuriodynError, FloatingPointError):
    pass


class DimensionMismatch(CuriodynError, ValueError):
    pass


class SpecError(CuriodynError, ValueError):
    """Model specification is malformed or not identified."""


class DataMismatch(CuriodynError, ValueError):
    pass


class SingularDesign(CuriodynError, ValueError):
    pass


class ExplosiveSystem(CuriodynError, ValueError):
    pass


class ConfigError(CuriodynError, ValueError):
    pass


class IngestionError(CuriodynError, ValueError):
    pass
