"""Exception hierarchy shared by every swampkit module.

Each error also derives from the closest builtin so callers that only know
about ``ValueError`` or ``ArithmeticError`` keep working.
"""


class SwampError(Exception):
    """Base class for all swampkit errors."""


class ConfigError(SwampError, ValueError):
    """A hyperparameter or configuration value is invalid."""


class DimensionError(SwampError, ValueError):
    """Operand shapes are incompatible."""


class InputError(SwampError, ValueError):
    """Input data violates a numeric precondition (e.g. non-finite cost)."""


class ContractError(SwampError, ValueError):
    """An API precondition was violated by the caller."""


class DegenerateEmbeddingError(SwampError, ArithmeticError):
    """An embedding row is too close to zero to be normalized."""


class DegenerateTargetError(SwampError, ArithmeticError):
    """A transport-plan row used as a target carries no mass."""


class NonFiniteError(SwampError, ArithmeticError):
    """An operation produced NaN or Inf."""


class NumericAbortError(SwampError, ArithmeticError):
    """Training stopped because the loss became non-finite."""

    def __init__(self, epoch: int, batch: int, loss_contrastive: float, loss_swamp: float, phase: str = "main"):
        self.epoch = epoch
        self.batch = batch
        self.loss_contrastive = loss_contrastive
        self.loss_swamp = loss_swamp
        self.phase = phase
        super().__init__(
            f"non-finite loss in phase '{phase}' at epoch {epoch}, batch {batch} "
            f"(loss_contrastive={loss_contrastive}, loss_swamp={loss_swamp})"
        )

    def diagnostic(self) -> dict:
        return {
            "phase": self.phase,
            "epoch": self.epoch,
            "batch": self.batch,
            "loss_contrastive": self.loss_contrastive,
            "loss_swamp": self.loss_swamp,
        }


class DatasetFormatError(SwampError, ValueError):
    """A binary file could not be parsed."""


class MagicError(DatasetFormatError):
    """The file does not start with the expected magic bytes."""


class VersionError(DatasetFormatError):
    """The file format version is not supported."""


class HeaderError(DatasetFormatError):
    """The JSON header line is missing or malformed."""


class TruncationError(DatasetFormatError):
    """The binary payload is shorter (or longer) than the header announces."""

    def __init__(self, section: str, expected: int, actual: int):
        self.section = section
        self.expected = expected
        self.actual = actual
        super().__init__(f"truncated {section}: expected {expected} bytes, got {actual}")


class CheckpointError(DatasetFormatError):
    """A checkpoint header does not match the model it should restore."""
