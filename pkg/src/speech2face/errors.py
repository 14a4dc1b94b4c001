"""Exception hierarchy.

Every error raised on purpose by the package derives from ``Speech2FaceError``.
The three top-level families map onto CLI exit codes: configuration problems
(2), data problems (3) and training divergence (4).
"""


class Speech2FaceError(Exception):
    pass


# configuration ---------------------------------------------------------------

class ConfigError(Speech2FaceError):
    pass


class ParseError(ConfigError):
    pass


class UnknownKey(ConfigError):
    def __init__(self, key: str):
        super().__init__(f"unknown config key: {key}")
        self.key = key


class InvalidValue(ConfigError):
    def __init__(self, key: str, reason: str):
        super().__init__(f"invalid value for {key}: {reason}")
        self.key = key


class UnknownSwitch(ConfigError):
    pass


# data ------------------------------------------------------------------------

class DataError(Speech2FaceError):
    pass


class InsufficientAudio(DataError):
    pass


class InvalidOverlap(DataError):
    pass


class ConfigMismatch(DataError):
    pass


class DurationTooShort(DataError):
    pass


class MissingAnnotation(DataError):
    def __init__(self, field: str):
        super().__init__(f"missing annotation: {field}")
        self.field = field


class DegenerateLandmarks(DataError):
    pass


class EmptyManifest(DataError):
    pass


class EmptySplit(DataError):
    pass


class EmptyIdentity(DataError):
    pass


class DegenerateBatch(DataError):
    pass


class CorruptCheckpoint(DataError):
    pass


class MissingStage1(DataError):
    pass


class IOFailure(DataError):
    pass


# numerics / shapes -----------------------------------------------------------

class ShapeMismatch(Speech2FaceError, ValueError):
    pass


class DimMismatch(ShapeMismatch):
    pass


class IndexMismatch(ShapeMismatch):
    pass


class BadResolution(Speech2FaceError, ValueError):
    pass


class LabelOutOfRange(Speech2FaceError, ValueError):
    pass


class KTooLarge(Speech2FaceError, ValueError):
    pass


class NonFinite(Speech2FaceError, ArithmeticError):
    pass


class DivergenceDetected(Speech2FaceError):
    def __init__(self, message: str, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path
