"""Ring color alphabet, bird identity codes and candidate rosters.

A bird's identity is a 4-position ring combination read from the bird's
perspective: top-left, bottom-left, top-right, bottom-right.  Every bird
carries exactly one aluminium ring plus 2-3 colored plastic rings, so a
combination string has at most one empty position, written ``-``.

The color alphabet is configuration driven.  The shipped default table has
12 classes (aluminium + 11 plastic colors) with reference RGB values used
by the synthetic generator.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

from .errors import (
    DuplicateBirdId,
    DuplicateCombination,
    InvalidLength,
    NestingViolation,
    SchemaError,
    TooFewRings,
    UnknownColorCode,
    ZeroOrMultipleAluminium,
)

ABSENT = "-"
ALUMINIUM_CODE = "a"
POSITION_NAMES = ("top_left", "bottom_left", "top_right", "bottom_right")


@dataclass(frozen=True)
class ColorClass:
    code: str
    display_name: str
    rgb: tuple[int, int, int] | None = None


class ColorTable:
    """Ordered, immutable set of ring color classes keyed by one-char codes."""

    def __init__(self, classes: list[ColorClass]):
        if not classes:
            raise SchemaError("color table has no classes")
        codes = [c.code for c in classes]
        if len(set(codes)) != len(codes):
            raise SchemaError("duplicate color codes in table")
        for c in classes:
            if len(c.code) != 1 or c.code == ABSENT:
                raise SchemaError(f"invalid color code {c.code!r}")
        self.classes: tuple[ColorClass, ...] = tuple(classes)
        self.by_code = {c.code: c for c in self.classes}
        self.codes: tuple[str, ...] = tuple(codes)
        self.index = {code: i for i, code in enumerate(codes)}

    def __len__(self) -> int:
        return len(self.classes)

    def __contains__(self, code: str) -> bool:
        return code in self.by_code

    @property
    def aluminium(self) -> ColorClass | None:
        return self.by_code.get(ALUMINIUM_CODE)

    @property
    def plastic_codes(self) -> tuple[str, ...]:
        return tuple(c for c in self.codes if c != ALUMINIUM_CODE)

    def require_rgb(self) -> None:
        missing = [c.code for c in self.classes if c.rgb is None]
        if missing:
            raise SchemaError(f"color table misses reference RGB for {missing}")

    def sha256(self) -> str:
        payload = json.dumps(
            [[c.code, c.display_name, list(c.rgb) if c.rgb else None] for c in self.classes]
        )
        return hashlib.sha256(payload.encode()).hexdigest()

    @classmethod
    def from_csv(cls, path: str | Path) -> "ColorTable":
        """Load a table from CSV with header ``code,display_name[,r,g,b]``."""
        path = Path(path)
        try:
            with open(path, newline="", encoding="utf-8") as fh:
                reader = csv.reader(fh)
                header = next(reader, None)
                if header is None or [h.strip() for h in header[:2]] != ["code", "display_name"]:
                    raise SchemaError(f"{path}: expected header 'code,display_name[,r,g,b]'")
                has_rgb = len(header) >= 5
                classes = []
                for row in reader:
                    if not row:
                        continue
                    if len(row) < 2 or (has_rgb and len(row) < 5):
                        raise SchemaError(f"{path}: short row {row}")
                    rgb = None
                    if has_rgb:
                        try:
                            rgb = tuple(int(v) for v in row[2:5])
                        except ValueError as exc:
                            raise SchemaError(f"{path}: non-integer RGB in row {row}") from exc
                        if any(not 0 <= v <= 255 for v in rgb):
                            raise SchemaError(f"{path}: RGB out of range in row {row}")
                    classes.append(ColorClass(row[0].strip(), row[1].strip(), rgb))
        except OSError as exc:
            raise SchemaError(f"cannot read color table {path}: {exc}") from exc
        return cls(classes)

    @classmethod
    def default(cls) -> "ColorTable":
        with resources.as_file(resources.files("corvid.data") / "default_colors.csv") as p:
            return cls.from_csv(p)

    def save(self, path: str | Path) -> None:
        """Write the table back to CSV, with RGB columns when all classes have them."""
        has_rgb = all(c.rgb is not None for c in self.classes)
        lines = ["code,display_name" + (",r,g,b" if has_rgb else "")]
        for c in self.classes:
            row = f"{c.code},{c.display_name}"
            if has_rgb:
                row += ",{},{},{}".format(*c.rgb)
            lines.append(row)
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class RingCombination:
    """A bird's 4-position ring code; positions may be absent (``-``)."""

    codes: tuple[str, str, str, str]

    def __str__(self) -> str:
        return "".join(self.codes)

    @property
    def left_leg(self) -> tuple[str, str]:
        return (self.codes[0], self.codes[1])

    @property
    def right_leg(self) -> tuple[str, str]:
        return (self.codes[2], self.codes[3])

    def present_codes(self) -> tuple[str, ...]:
        return tuple(c for c in self.codes if c != ABSENT)


def format_combination(combination: RingCombination) -> str:
    return str(combination)


def parse_combination(
    code: str, table: ColorTable, *, require_aluminium: bool = True
) -> RingCombination:
    """Parse a 4-character combination string against a color table.

    Raises InvalidLength, UnknownColorCode, TooFewRings or
    ZeroOrMultipleAluminium on invalid input; the aluminium check can be
    relaxed for synthetic experiments.
    """
    if len(code) != 4:
        raise InvalidLength(f"combination {code!r} must have exactly 4 characters")
    for ch in code:
        if ch != ABSENT and ch not in table:
            raise UnknownColorCode(f"unknown color code {ch!r} in {code!r}")
    n_absent = code.count(ABSENT)
    if n_absent > 1:
        raise TooFewRings(f"combination {code!r} has fewer than 3 rings")
    if require_aluminium and code.count(ALUMINIUM_CODE) != 1:
        raise ZeroOrMultipleAluminium(
            f"combination {code!r} must contain the aluminium ring exactly once"
        )
    return RingCombination(tuple(code))  # type: ignore[arg-type]


def combination_space_size(num_colors: int) -> int:
    """Number of unique 3-ring color combinations over ``num_colors`` colors."""
    if num_colors < 1:
        raise ValueError("num_colors must be >= 1")
    return num_colors ** 3


def all_four_ring_combinations(table: ColorTable, alu_position: int = 0) -> list[RingCombination]:
    """Enumerate the full combination space with aluminium at one fixed position.

    With 11 plastic colors this is the 1331-combination space: aluminium at
    ``alu_position`` and every choice of plastic color in the other three
    slots, in lexicographic table order.
    """
    if table.aluminium is None:
        raise SchemaError("color table has no aluminium class ('a')")
    out = []
    for colors in itertools.product(table.plastic_codes, repeat=3):
        codes = list(colors)
        codes.insert(alu_position, ALUMINIUM_CODE)
        out.append(RingCombination(tuple(codes)))  # type: ignore[arg-type]
    return out


class Scope(Enum):
    WITHIN_TERRITORY = "within_territory"
    WITH_NEIGHBOURS = "with_neighbours"
    ALL = "all"

    @classmethod
    def parse(cls, value: str) -> "Scope":
        try:
            return cls(value)
        except ValueError as exc:
            valid = ", ".join(s.value for s in cls)
            raise SchemaError(f"unknown scope {value!r} (expected one of: {valid})") from exc


@dataclass(frozen=True)
class RosterMember:
    bird_id: str
    combination: RingCombination


@dataclass(frozen=True)
class Roster:
    """Candidate identities for one gallery scope; combinations ARE the ids."""

    scope: Scope
    members: tuple[RosterMember, ...]

    def __post_init__(self) -> None:
        ids = [m.bird_id for m in self.members]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DuplicateBirdId(f"duplicate bird ids in roster: {dupes}")
        combos = [str(m.combination) for m in self.members]
        if len(set(combos)) != len(combos):
            dupes = sorted({c for c in combos if combos.count(c) > 1})
            raise DuplicateCombination(f"duplicate combinations in roster: {dupes}")

    def __len__(self) -> int:
        return len(self.members)

    def bird_ids(self) -> tuple[str, ...]:
        return tuple(m.bird_id for m in self.members)

    def member_set(self) -> frozenset[tuple[str, str]]:
        return frozenset((m.bird_id, str(m.combination)) for m in self.members)


def load_roster(
    path: str | Path,
    table: ColorTable,
    scope: Scope | None = None,
    *,
    require_aluminium: bool = True,
) -> Roster:
    """Load and validate a roster JSON file.

    When ``scope`` is given the file's scope must match it.
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise SchemaError(f"cannot read roster {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from exc
    return roster_from_dict(doc, table, scope, require_aluminium=require_aluminium, source=str(path))


def roster_from_dict(
    doc: dict,
    table: ColorTable,
    scope: Scope | None = None,
    *,
    require_aluminium: bool = True,
    source: str = "<roster>",
) -> Roster:
    if not isinstance(doc, dict) or "scope" not in doc or "members" not in doc:
        raise SchemaError(f"{source}: roster must be an object with 'scope' and 'members'")
    file_scope = Scope.parse(doc["scope"])
    if scope is not None and file_scope is not scope:
        raise SchemaError(f"{source}: scope is {file_scope.value!r}, expected {scope.value!r}")
    if not isinstance(doc["members"], list):
        raise SchemaError(f"{source}: 'members' must be a list")
    members = []
    for entry in doc["members"]:
        if not isinstance(entry, dict) or "bird_id" not in entry or "combination" not in entry:
            raise SchemaError(f"{source}: member entries need 'bird_id' and 'combination'")
        combo = parse_combination(
            str(entry["combination"]), table, require_aluminium=require_aluminium
        )
        members.append(RosterMember(str(entry["bird_id"]), combo))
    return Roster(file_scope, tuple(members))


def roster_to_dict(roster: Roster) -> dict:
    return {
        "scope": roster.scope.value,
        "members": [
            {"bird_id": m.bird_id, "combination": str(m.combination)} for m in roster.members
        ],
    }


def save_roster(roster: Roster, path: str | Path) -> None:
    Path(path).write_text(json.dumps(roster_to_dict(roster), indent=2, sort_keys=True) + "\n")


def check_nesting(rosters: dict[Scope, Roster]) -> None:
    """Assert territory ⊆ territory+neighbours ⊆ population for one video."""
    chain = [Scope.WITHIN_TERRITORY, Scope.WITH_NEIGHBOURS, Scope.ALL]
    present = [s for s in chain if s in rosters]
    for inner, outer in zip(present, present[1:]):
        missing = rosters[inner].member_set() - rosters[outer].member_set()
        if missing:
            raise NestingViolation(
                f"{inner.value} members missing from {outer.value}: "
                f"{sorted(b for b, _ in missing)}"
            )
