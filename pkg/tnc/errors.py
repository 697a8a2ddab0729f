"""Exception hierarchy shared by the library and the CLI."""


class TncError(Exception):
    """Base class for every error raised by the tnc package."""


class ConfigurationError(TncError, ValueError):
    """Invalid configuration values (probabilities, shapes, unknown options)."""


class ContractError(TncError, ValueError):
    """A caller broke an operation's shape or argument contract."""


class InputError(TncError):
    """Unreadable or malformed input files."""


class DatasetFormatError(InputError):
    pass


class CheckpointLoadError(InputError):
    pass


class NumericalError(TncError, ArithmeticError):
    """Non-finite values or failed factorizations."""


class GenerationError(NumericalError):
    pass


class TrainingError(NumericalError):
    pass


class AdfTestError(TncError):
    """The unit-root test cannot be run on the given series."""


class SamplingError(TncError):
    """No valid window could be sampled; callers usually skip the anchor."""


class EvaluationError(TncError, ValueError):
    pass
