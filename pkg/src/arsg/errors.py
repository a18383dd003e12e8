"""Exception hierarchy shared across the package.

Every error carries a short machine-readable ``category`` so the CLI can
emit ``ERROR <category>: <detail>`` lines without inspecting types.
"""


class ArsgError(Exception):
    category = "internal"


class ShapeError(ArsgError):
    """Operand dimensions do not agree."""

    category = "shape"


class DomainError(ArsgError):
    """Value outside the mathematical domain of an operation."""

    category = "domain"


class ConfigError(ArsgError):
    """Invalid or inconsistent configuration."""

    category = "config"


class DataError(ArsgError):
    """Malformed or out-of-vocabulary data."""

    category = "data"


class ParseError(ArsgError):
    """Unreadable serialized input."""

    category = "parse"


class FormatError(ArsgError):
    """Wrong magic/version in a binary or text artifact."""

    category = "format"


class IntegrityError(ArsgError):
    """Truncated or internally inconsistent artifact."""

    category = "integrity"


class TrainingError(ArsgError):
    """Training aborted (e.g. non-finite loss)."""

    category = "training"
