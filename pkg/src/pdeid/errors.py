"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes (see cli.main): configuration
and file-format problems exit 2, numerical failures exit 3, and a run
whose every library coefficient was pruned exits 4.
"""


class PdeidError(Exception):
    """Base class for all package errors."""


class ConfigError(PdeidError):
    """Invalid configuration, arguments, or input files."""


class FormatError(ConfigError):
    """Malformed data or library file; message carries line/offset."""


class NumericalError(PdeidError):
    """Non-finite values: solver blow-up, diverging loss or gradients."""


class EvalDomainError(NumericalError):
    """Graph evaluation hit a singular point (zero denominator)."""


class EmptyPDEError(PdeidError):
    """Pruning removed every candidate term; no equation to report."""
