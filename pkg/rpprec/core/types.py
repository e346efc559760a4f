"""
rpprec Core Types
Shared vocabulary: items, users, candidate sets, prompt patterns and joint actions.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple, Union

from .exceptions import IngestionError, ValidationError

LINE_BREAKS = ('\n', '\r', '\u2028', '\u2029', '\x0b', '\x0c', '\x85')


class PatternKind(IntEnum):
    """The four prompt patterns, in prompt order."""

    ROLE_PLAYING = 1
    HISTORY_RECORDS = 2
    REASONING_GUIDANCE = 3
    OUTPUT_FORMAT = 4

    @property
    def key(self) -> str:
        return self.name.lower()

    @classmethod
    def from_key(cls, key: str) -> "PatternKind":
        normalized = str(key).strip().lower().replace('-', '_')
        for kind in cls:
            if kind.key == normalized or str(kind.value) == normalized:
                return kind
        raise ValidationError(f"unknown pattern {key!r}")

    @classmethod
    def sentence_patterns(cls) -> Tuple["PatternKind", ...]:
        return (cls.ROLE_PLAYING, cls.REASONING_GUIDANCE, cls.OUTPUT_FORMAT)


PATTERNS: Tuple[PatternKind, ...] = tuple(PatternKind)


@dataclass(frozen=True)
class ItemRef:
    id: int
    title: str

    def __post_init__(self):
        if self.id < 0:
            raise ValidationError(f"item id must be non-negative, got {self.id}")
        if not self.title:
            raise ValidationError("item title must be non-empty")
        if any(ch in self.title for ch in LINE_BREAKS):
            raise ValidationError(f"item title {self.title!r} contains a line break")


class ItemCatalog:
    """Bijective title <-> dense id interning, in ingestion order."""

    def __init__(self):
        self._items: List[ItemRef] = []
        self._index: Dict[str, int] = {}

    def intern(self, title: str, row: int = None) -> ItemRef:
        """Return the ItemRef for ``title``, assigning the next id if unseen."""
        if title is None or title == '':
            raise IngestionError("empty title", row=row)
        if any(ch in title for ch in LINE_BREAKS):
            raise IngestionError(f"title {title!r} contains a line break", row=row)
        existing = self._index.get(title)
        if existing is not None:
            return self._items[existing]
        item = ItemRef(len(self._items), title)
        self._items.append(item)
        self._index[title] = item.id
        return item

    def get(self, item_id: int) -> ItemRef:
        return self._items[item_id]

    def lookup(self, title: str) -> ItemRef:
        return self._items[self._index[title]]

    def __contains__(self, title: object) -> bool:
        return title in self._index

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    @property
    def titles(self) -> List[str]:
        return [item.title for item in self._items]


def intern_catalog(titles: Sequence[str]) -> Tuple[ItemCatalog, List[int]]:
    """Intern ``titles`` into a fresh catalog; returns the catalog and per-row ids."""
    if not titles:
        raise IngestionError("empty catalog")
    catalog = ItemCatalog()
    ids = [catalog.intern(title, row=row).id for row, title in enumerate(titles)]
    return catalog, ids


@dataclass(frozen=True)
class UserRecord:
    user_id: int
    history: Tuple[ItemRef, ...]
    holdout_item: ItemRef
    key: str = ''

    def __post_init__(self):
        if self.user_id < 0:
            raise ValidationError(f"user id must be non-negative, got {self.user_id}")
        if len(self.history) < 4:
            raise ValidationError(
                f"user {self.user_id} needs at least 4 history items, got {len(self.history)}"
            )
        if any(item.id == self.holdout_item.id for item in self.history):
            raise ValidationError(f"user {self.user_id}: holdout item appears in history")

    @property
    def item_ids(self) -> frozenset:
        return frozenset([item.id for item in self.history] + [self.holdout_item.id])


@dataclass(frozen=True)
class CandidateSet:
    items: Tuple[ItemRef, ...]
    ground_truth_pos: int

    def __post_init__(self):
        if not self.items:
            raise ValidationError("candidate set is empty")
        if not 0 <= self.ground_truth_pos < len(self.items):
            raise ValidationError(
                f"ground truth position {self.ground_truth_pos} outside [0, {len(self.items)})"
            )
        ids = [item.id for item in self.items]
        if len(set(ids)) != len(ids):
            raise ValidationError("candidate set contains duplicate items")

    @property
    def ground_truth(self) -> ItemRef:
        return self.items[self.ground_truth_pos]

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class JointAction:
    """One action index per pattern, stored in PatternKind order."""

    indices: Tuple[int, int, int, int] = field(default=(0, 0, 0, 0))

    def __post_init__(self):
        if len(self.indices) != len(PATTERNS):
            raise ValidationError(f"joint action needs {len(PATTERNS)} indices, got {len(self.indices)}")
        for kind, index in zip(PATTERNS, self.indices):
            if int(index) != index or index < 0:
                raise ValidationError(f"index must be a non-negative integer, got {index!r}", pattern=kind.key)

    @classmethod
    def from_mapping(cls, mapping: Mapping[Union[PatternKind, str, int], int]) -> "JointAction":
        normalized: Dict[PatternKind, int] = {}
        for key, value in mapping.items():
            kind = key if isinstance(key, PatternKind) else PatternKind.from_key(str(key))
            normalized[kind] = value
        for kind in PATTERNS:
            if kind not in normalized:
                raise ValidationError("missing action index", pattern=kind.key)
        return cls(tuple(int(normalized[kind]) for kind in PATTERNS))

    def __getitem__(self, kind: PatternKind) -> int:
        return self.indices[int(kind) - 1]

    def replace(self, kind: PatternKind, index: int) -> "JointAction":
        values = list(self.indices)
        values[int(kind) - 1] = index
        return JointAction(tuple(values))

    def as_dict(self) -> Dict[str, int]:
        return {kind.key: self[kind] for kind in PATTERNS}

    def serialize(self) -> str:
        """Compact text form, e.g. ``1:0,2:3,3:8,4:4``."""
        return ','.join(f"{int(kind)}:{self[kind]}" for kind in PATTERNS)

    @classmethod
    def parse(cls, text: str) -> "JointAction":
        mapping: Dict[PatternKind, int] = {}
        for part in str(text).split(','):
            try:
                key, value = part.split(':')
                mapping[PatternKind(int(key))] = int(value)
            except ValueError as exc:
                raise ValidationError(f"cannot parse joint action {text!r}") from exc
        return cls.from_mapping(mapping)


def validate_joint_action(
    action: Union[JointAction, Mapping[Union[PatternKind, str], int]],
    catalog_sizes: Mapping[PatternKind, int],
) -> JointAction:
    """Return ``action`` as a JointAction, or raise ValidationError naming the pattern."""
    joint = action if isinstance(action, JointAction) else JointAction.from_mapping(action)
    for kind in PATTERNS:
        size = catalog_sizes.get(kind)
        if size is None:
            raise ValidationError("catalog has no size for pattern", pattern=kind.key)
        if joint[kind] >= size:
            raise ValidationError(f"index {joint[kind]} out of range for {size} actions", pattern=kind.key)
    return joint


def iter_joint_actions(sizes: Mapping[PatternKind, int], fixed: Mapping[PatternKind, int] = None) -> Iterable[JointAction]:
    """Enumerate joint actions in lexicographic order; ``fixed`` pins patterns."""
    fixed = dict(fixed or {})
    ranges = [[fixed[kind]] if kind in fixed else range(sizes[kind]) for kind in PATTERNS]
    for values in itertools.product(*ranges):
        yield JointAction(values)
