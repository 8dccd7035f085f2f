"""Exception types shared across the package."""


class LabelNotFoundError(KeyError):
    """A subsystem label is not present in the layout."""


class DimensionMismatchError(ValueError):
    """Operand shapes are inconsistent with the declared layout."""


class InvalidChannelError(ValueError):
    """Kraus operators do not describe a trace-preserving channel."""


class RankInstabilityError(RuntimeError):
    """The operator family changes rank at the working point."""


class CombValidationError(ValueError):
    """An operator fails the multi-step process constraints."""


class SynthesisFailureError(RuntimeError):
    """Strategy recovery did not reach the certified optimum."""


class SolverFailureError(RuntimeError):
    """The SDP solver did not return an optimal certificate."""


class DivergentFisherError(ValueError):
    """An outcome probability vanishes while its derivative does not."""


class ConfigError(ValueError):
    """A run configuration is malformed or out of supported range."""
