"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI maps it to:
2 = usage/parameter, 3 = data/format, 4 = internal.
"""


class DocrectError(Exception):
    """Base class for all library errors."""

    exit_code = 4


class ParameterError(DocrectError):
    """A caller-supplied value violates a documented precondition."""

    exit_code = 2


class ShapeError(DocrectError):
    """Array shapes or channel counts do not match the operation contract."""

    exit_code = 2


class SemanticsError(DocrectError):
    """A flow is used against its direction or unit tag."""

    exit_code = 2


class FormatError(DocrectError):
    """A byte stream violates a container format (DSFL, DSW1, PNG/JPEG)."""

    exit_code = 3


class DecodeError(FormatError):
    """Image stream could not be decoded; message names the byte offset."""


class ManifestError(FormatError):
    """A weight container disagrees with the layer manifest."""


class ConversionError(DocrectError):
    """forward-to-backward conversion failed on degenerate input."""

    exit_code = 3
