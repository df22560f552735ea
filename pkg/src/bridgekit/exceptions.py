"""Exception hierarchy shared by all bridgekit modules."""


class BridgeKitError(Exception):
    """Base class for every error raised by bridgekit."""


class DomainError(BridgeKitError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class UnsupportedKindError(BridgeKitError, ValueError):
    """The schedule or objective kind does not support the requested operation."""


class ShapeError(BridgeKitError, ValueError):
    """Array widths or shapes are mutually inconsistent."""


class SingularityError(BridgeKitError, ZeroDivisionError):
    """Evaluation at a point where the formula is singular."""


class NumericError(BridgeKitError, FloatingPointError):
    """A non-finite value appeared during computation."""


class SamplerDivergenceError(NumericError):
    """A sampler trajectory left the finite reals."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite state at sampler step {step}")


class CheckpointError(BridgeKitError, IOError):
    """A checkpoint file is malformed, truncated or corrupted."""


class ConfigError(BridgeKitError, ValueError):
    """A run configuration failed validation."""


class CompatibilityError(BridgeKitError, ValueError):
    """A checkpoint does not match the configuration it is used with."""
