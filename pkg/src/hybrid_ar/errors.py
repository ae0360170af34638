"""Exception types raised across the package."""


class HybridARError(Exception):
    """Base class for user-facing errors (CLI exit code 1)."""


class ManifestParseError(HybridARError, ValueError):
    def __init__(self, path, line_no, reason):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {reason}")


class ConsistencyError(HybridARError, ValueError):
    """A speaker was labelled with more than one accent."""


class PronunciationLookupError(HybridARError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class AudioTooShortError(HybridARError, ValueError):
    pass


class AudioFormatError(HybridARError, ValueError):
    pass


class EmptyInputError(HybridARError, ValueError):
    pass


class NumericError(HybridARError, FloatingPointError):
    pass


class ContractError(HybridARError, ValueError):
    """Inputs violate a shape or precondition contract."""


class ConfigError(HybridARError, ValueError):
    pass


class InfeasibleAlignmentError(HybridARError, ValueError):
    """Target cannot be aligned to the available frames under CTC rules."""


class SplitError(HybridARError, ValueError):
    pass


class CheckpointError(HybridARError, ValueError):
    pass


class DivergenceError(HybridARError, FloatingPointError):
    """A training loss term became non-finite."""
