"""Exception types shared across the toolkit.

Each error class carries the process exit code the CLI maps it to, so the
command layer can stay a thin translation shell.
"""


class ToolkitError(Exception):
    """Base class for all toolkit failures."""

    exit_code = 1


class InputFormatError(ToolkitError):
    """Malformed input file: missing columns, unparseable dates, bad CSV."""

    exit_code = 2


class DiagnosticError(ToolkitError):
    """A diagnostic cannot run on this series (too short, zero variance)."""

    exit_code = 3


class ModelError(ToolkitError):
    """Model fitting or forecasting failed."""

    exit_code = 4


class ConfigError(ToolkitError):
    """Invalid or inconsistent pipeline configuration."""

    exit_code = 5
