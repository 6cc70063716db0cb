"""Color-ring bird identification and its behavioral benchmark.

The package splits into identity primitives (`corvid.identity`), the crop
classifier (`corvid.classifier`), clip identification (`corvid.matcher`),
track utilities (`corvid.tracks`), benchmark metrics (`corvid.metrics`),
synthetic data (`corvid.synth`), figures (`corvid.figures`), and the CLI
(`corvid.cli`).
"""
from .errors import (
    CorvidError,
    DomainError,
    InputError,
)
from .identity import (
    ABSENT,
    ALUMINIUM_CODE,
    ColorTable,
    RingCombination,
    Roster,
    RosterMember,
    Scope,
    parse_combination,
)

__version__ = "0.1.0"

__all__ = [
    "ABSENT",
    "ALUMINIUM_CODE",
    "ColorTable",
    "CorvidError",
    "DomainError",
    "InputError",
    "RingCombination",
    "Roster",
    "RosterMember",
    "Scope",
    "parse_combination",
    "__version__",
]
