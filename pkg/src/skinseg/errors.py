"""Exception types shared across the package."""


class SkinSegError(Exception):
    pass


class ShapeError(SkinSegError, ValueError):
    """Tensor extents are invalid or incompatible."""


class ParameterError(SkinSegError, ValueError):
    """A scalar argument is outside its allowed range."""


class ConfigError(SkinSegError, ValueError):
    """A model, training or run configuration is invalid."""


class ContractError(SkinSegError, ValueError):
    """Inputs violate an operation's preconditions (e.g. non-binary mask)."""


class StateError(SkinSegError, RuntimeError):
    """An operation was called in the wrong state (e.g. backward before forward)."""


class CheckpointError(SkinSegError, IOError):
    """A checkpoint file is corrupt, truncated or of an unsupported version."""


class DecodeError(SkinSegError, IOError):
    """An image file could not be read or decoded."""
