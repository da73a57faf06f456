"""Exception taxonomy shared across the package.

Three failure classes cover every contract in the library: a value outside
an operation's mathematical domain, an inconsistent or incomplete
configuration, and a diagnostic requested at a boundary point where the
underlying inequalities do not apply.
"""


class FedsurvError(Exception):
    """Base class for all package-specific errors."""


class DomainError(FedsurvError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(FedsurvError, ValueError):
    """Inputs are structurally inconsistent (lengths, missing fields, schema)."""


class BoundsNotApplicableError(DomainError):
    """Tail bounds requested at a boundary count (c == 0 or c == n)."""
