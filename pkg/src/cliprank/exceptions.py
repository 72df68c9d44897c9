"""Error taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericsError -> 4.  Library code raises the most specific class that fits;
plain ValueError/TypeError remain for programming-contract violations.
"""


class CliprankError(Exception):
    """Base class for expected, user-reportable failures."""


class ConfigError(CliprankError):
    """Invalid or inconsistent configuration."""


class DataError(CliprankError):
    """Missing, malformed, or unusable input data."""


class NumericsError(CliprankError):
    """Numerical failure: NaN/Inf where finite values are required."""
