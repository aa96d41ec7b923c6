"""Binary label similarity used in the stage quality score.

Two modes:

* ``strict``  -- labels are similar only when they normalize to the same string.
* ``grouped`` -- labels are also similar when they belong to the same group
  (e.g. "taxi" and "car").

Group membership is also used to fold classifier vocabulary onto detection
classes (:func:`canonical_class`) regardless of mode.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

from .errors import EmptyLabel, SchemaError

GROUPED = "grouped"
STRICT = "strict"
MODES = (GROUPED, STRICT)

_WS = re.compile(r"\s+")

# Head class -> synonyms, as listed in the appendix table of label groups.
# "truck" has no synonyms there but is one of the six DAWN classes.
DEFAULT_GROUPS: dict[str, tuple[str, ...]] = {
    "person": ("groom", "bridegroom", "baseball player", "scuba diver"),
    "car": ("cab", "taxi", "race car", "jeep", "minivan", "estate car", "station wagon"),
    "motorcycle": ("moped",),
    "bus": ("trolley bus", "mini bus", "school bus"),
    "bicycle": (
        "tandem bicycle",
        "tricycle",
        "unicycle",
        "mountain bike",
        "all terrain bike",
        "off-roader",
        "trike",
    ),
    "truck": (),
}

DAWN_CLASSES = ("car", "bus", "truck", "motorcycle", "person", "bicycle")


def normalize_label(raw: str) -> str:
    label = _WS.sub(" ", raw.replace("-", " ")).strip().lower()
    if not label:
        raise EmptyLabel(f"label {raw!r} is empty after normalization")
    return label


@dataclass(frozen=True)
class LabelGroup:
    head: str
    members: frozenset[str]


@dataclass(frozen=True)
class SimilarityTable:
    mode: str
    groups: tuple[LabelGroup, ...]
    _index: Mapping[str, str] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise SchemaError(f"mode must be one of {MODES}, got {self.mode!r}")
        index: dict[str, str] = {}
        for g in self.groups:
            if not g.members:
                raise SchemaError(f"group {g.head!r} is empty")
            if g.head not in g.members:
                raise SchemaError(f"head {g.head!r} is not a member of its group")
            for m in g.members:
                if m in index:
                    raise SchemaError(
                        f"label {m!r} appears in groups {index[m]!r} and {g.head!r}"
                    )
                index[m] = g.head
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_mapping(cls, groups: Mapping[str, Iterable[str]], mode: str = GROUPED) -> "SimilarityTable":
        built = []
        for head, members in groups.items():
            h = normalize_label(head)
            built.append(LabelGroup(h, frozenset({h, *(normalize_label(m) for m in members)})))
        return cls(mode, tuple(built))

    def with_mode(self, mode: str) -> "SimilarityTable":
        return SimilarityTable(mode, self.groups)

    @property
    def heads(self) -> tuple[str, ...]:
        return tuple(g.head for g in self.groups)

    def head_of(self, label: str) -> Optional[str]:
        return self._index.get(label)

    def to_json(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "groups": [
                {"head": g.head, "members": sorted(g.members - {g.head})} for g in self.groups
            ],
        }


def default_table(mode: str = GROUPED) -> SimilarityTable:
    return SimilarityTable.from_mapping(DEFAULT_GROUPS, mode)


def parse_table(text: str | bytes) -> SimilarityTable:
    """Load ``similarity.json``.

    Groups may carry an optional ``"similarity"`` field; only the value 1 is
    accepted, since similarity is binary.
    """
    try:
        doc = json.loads(text)
    except (ValueError, TypeError, RecursionError) as exc:
        raise SchemaError(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("similarity table must be a JSON object")
    mode = doc.get("mode", GROUPED)
    groups_raw = doc.get("groups")
    if not isinstance(groups_raw, list):
        raise SchemaError("'groups' must be a list")
    groups: dict[str, list[str]] = {}
    for i, g in enumerate(groups_raw):
        if not isinstance(g, dict) or not isinstance(g.get("head"), str):
            raise SchemaError(f"groups[{i}]: expected an object with a string 'head'")
        sim = g.get("similarity", 1)
        if isinstance(sim, bool) or sim != 1:
            raise SchemaError(f"groups[{i}]: similarity must be 1, got {sim!r}")
        members = g.get("members", [])
        if not isinstance(members, list) or not all(isinstance(m, str) for m in members):
            raise SchemaError(f"groups[{i}]: 'members' must be a list of strings")
        try:
            head = normalize_label(g["head"])
        except EmptyLabel as exc:
            raise SchemaError(f"groups[{i}]: {exc}") from None
        if head in groups:
            raise SchemaError(f"groups[{i}]: duplicate head {head!r}")
        groups[head] = members
    try:
        return SimilarityTable.from_mapping(groups, mode if isinstance(mode, str) else repr(mode))
    except EmptyLabel as exc:
        raise SchemaError(str(exc)) from None


def read_table_file(path: str | Path) -> SimilarityTable:
    return parse_table(Path(path).read_bytes())


def similarity(p: str, a: str, table: SimilarityTable) -> int:
    """Return 1 if predicted label ``p`` counts as actual label ``a``, else 0."""
    if p == a:
        return 1
    if table.mode == STRICT:
        return 0
    hp = table.head_of(p)
    return int(hp is not None and hp == table.head_of(a))


def canonical_class(label: str, table: SimilarityTable) -> Optional[str]:
    """Head class of the group containing ``label``; ``None`` when unknown."""
    return table.head_of(label)
