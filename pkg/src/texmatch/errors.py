"""Exception types shared across the package.

Two families: FormatError covers malformed binary payloads and files,
ValidationError covers contract violations on otherwise well-formed input.
The CLI maps each family to its own exit code.
"""


class TexmatchError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(TexmatchError):
    """Input violates an operation's contract."""


class DimensionError(ValidationError):
    """Image, grid, or coordinate outside the supported dimensions."""


class ConfigError(ValidationError):
    """Unsupported configuration value."""


class DescriptorMismatchError(ValidationError):
    """Descriptor matrix does not line up with its template."""

    def __init__(self, what: str, expected, found):
        super().__init__(f"{what}: expected {expected}, found {found}")
        self.expected = expected
        self.found = found


class FormatError(TexmatchError):
    """Malformed binary payload or file."""


class BadMagicError(FormatError):
    """Leading magic bytes do not identify a known format."""


class VersionError(FormatError):
    """Format version is not supported by this reader."""


class TruncatedError(FormatError):
    """Payload ends before the length implied by its header."""


class DescriptorLengthError(FormatError):
    """Stored descriptor length is not one of the supported values."""
