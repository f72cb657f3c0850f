"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """A configuration value violates its documented constraints."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf reached an operation boundary."""


class UsageError(RuntimeError):
    """An API was called in a way its contract forbids."""


class VocabularyError(KeyError):
    """A caption contains a word the text encoder does not know."""

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown token"


class FormatError(ValueError):
    """A binary file (checkpoint, dataset) is corrupt or of the wrong version."""
