"""Exception hierarchy shared by all corvid modules.

Two bases matter for the CLI: ``InputError`` maps to exit code 2 (bad or
malformed input files) and ``DomainError`` maps to exit code 3 (inputs that
parse fine but violate a domain invariant).
"""


class CorvidError(Exception):
    """Base class for all errors raised by this package."""


class InputError(CorvidError):
    """Malformed or missing input data (CLI exit code 2)."""


class DomainError(CorvidError):
    """Structurally valid input that breaks a domain invariant (CLI exit code 3)."""


# --- combination / color table parsing ---

class UnknownColorCode(InputError):
    pass


class InvalidLength(InputError):
    pass


class ZeroOrMultipleAluminium(InputError):
    pass


class TooFewRings(InputError):
    """A combination with more than one empty position (birds carry 3-4 rings)."""


class SchemaError(InputError):
    """A file does not conform to its documented schema."""


class MissingClass(InputError):
    """A training manifest has no samples for some color class."""


# --- roster invariants ---

class DuplicateBirdId(DomainError):
    pass


class DuplicateCombination(DomainError):
    pass


class NestingViolation(DomainError):
    """Territory/neighbour/population rosters must nest."""


class EmptyRoster(DomainError):
    pass


# --- tracks and evaluation ---

class OverlapError(DomainError):
    """Two tracklets overlap in time and cannot be joined."""


class IdentityMismatch(DomainError):
    pass


class TrueIdNotInRoster(DomainError):
    pass
