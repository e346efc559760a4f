"""
rpprec Dataset
Interaction-log ingestion, 5-core filtering, leave-last-out splitting,
candidate sampling and optional pretrained embeddings.
"""

from __future__ import annotations

import logging
import os
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Set

import numpy as np

from .exceptions import IngestionError, ValidationError
from .types import CandidateSet, ItemCatalog, UserRecord
from .utils import dump_json

logger = logging.getLogger(__name__)

MIN_INTERACTIONS = 5


@dataclass(frozen=True)
class RawInteraction:
    user_id: str
    item_title: str
    timestamp: int


@dataclass
class InteractionLog:
    """Parsed rows in file order plus the number of malformed rows skipped."""

    rows: List[RawInteraction]
    malformed: int = 0
    path: str = ''

    def __iter__(self) -> Iterator[RawInteraction]:
        return iter(self.rows)

    def __len__(self) -> int:
        return len(self.rows)


def load_interactions(path, delimiter: str = '\t', malformed_threshold: float = 0.1) -> InteractionLog:
    """Parse ``user_id, item_title, timestamp[, ...]`` rows.

    Rows with fewer than three fields, an empty title or a non-integer
    timestamp are skipped and counted; more than ``malformed_threshold`` of
    them is a hard error.
    """
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IngestionError(f"cannot read interactions: {exc}", path=str(path)) from exc

    rows: List[RawInteraction] = []
    malformed = 0
    total = 0
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        total += 1
        fields = line.split(delimiter)
        if len(fields) < 3:
            malformed += 1
            logger.debug("Skipping row %d of %s: %d fields", lineno, path, len(fields))
            continue
        user, title, stamp = fields[0].strip(), fields[1].strip(), fields[2].strip()
        try:
            timestamp = int(stamp)
        except ValueError:
            malformed += 1
            logger.debug("Skipping row %d of %s: bad timestamp %r", lineno, path, stamp)
            continue
        if not user or not title or timestamp < 0:
            malformed += 1
            continue
        rows.append(RawInteraction(user, title, timestamp))

    if total == 0 or not rows:
        raise IngestionError("no interactions", path=str(path))
    if malformed:
        logger.warning("Skipped %d malformed rows out of %d in %s", malformed, total, path)
        if malformed / total > malformed_threshold:
            raise IngestionError(
                f"{malformed} of {total} rows malformed (threshold {malformed_threshold:.0%})",
                path=str(path),
            )
    return InteractionLog(rows=rows, malformed=malformed, path=str(path))


@dataclass
class SplitDataset:
    users: List[UserRecord]
    item_catalog: ItemCatalog
    train_user_ids: List[int]
    test_user_ids: List[int]
    _by_id: Dict[int, UserRecord] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._by_id = {user.user_id: user for user in self.users}
        overlap = set(self.train_user_ids) & set(self.test_user_ids)
        if overlap:
            raise ValidationError(f"train and test users overlap: {sorted(overlap)[:5]}")

    def user(self, user_id: int) -> UserRecord:
        return self._by_id[user_id]

    @property
    def train_users(self) -> List[UserRecord]:
        return [self._by_id[uid] for uid in self.train_user_ids]

    @property
    def test_users(self) -> List[UserRecord]:
        return [self._by_id[uid] for uid in self.test_user_ids]

    @property
    def user_index(self) -> Dict[str, int]:
        """External user key -> interned id."""
        return {user.key: user.user_id for user in self.users}

    def serialize(self) -> str:
        """Canonical JSON form (used to check seeded reproducibility)."""
        return dump_json({
            'items': self.item_catalog.titles,
            'users': [
                {
                    'id': user.user_id,
                    'key': user.key,
                    'history': [item.id for item in user.history],
                    'holdout': user.holdout_item.id,
                }
                for user in self.users
            ],
            'train': self.train_user_ids,
            'test': self.test_user_ids,
        })


def _k_core(rows: List[RawInteraction], k: int) -> List[RawInteraction]:
    """Drop users and items with fewer than ``k`` rows until nothing changes."""
    current = rows
    while True:
        user_counts = Counter(row.user_id for row in current)
        item_counts = Counter(row.item_title for row in current)
        kept = [
            row for row in current
            if user_counts[row.user_id] >= k and item_counts[row.item_title] >= k
        ]
        if len(kept) == len(current):
            return kept
        current = kept


def _short_after_dedup(rows: List[RawInteraction], k: int) -> Set[str]:
    """Users left with fewer than ``k - 1`` history rows once the holdout title is removed."""
    per_user: Dict[str, List[tuple]] = {}
    for order, row in enumerate(rows):
        per_user.setdefault(row.user_id, []).append((row.timestamp, order, row.item_title))
    short: Set[str] = set()
    for key, events in per_user.items():
        holdout = max(events)[2]
        if sum(1 for event in events if event[2] != holdout) < k - 1:
            short.add(key)
    return short


def build_split(
    raw: Iterable[RawInteraction],
    seed: int,
    n_train: int,
    n_test: int,
    min_interactions: int = MIN_INTERACTIONS,
) -> SplitDataset:
    """Filter, sort and split the interaction log into train/test users."""
    rows = list(raw)
    # dropping a user can push an item back under the threshold
    while True:
        rows = _k_core(rows, min_interactions)
        short = _short_after_dedup(rows, min_interactions)
        if not short:
            break
        logger.debug("Dropping %d users with too few history items after holdout dedup", len(short))
        rows = [row for row in rows if row.user_id not in short]

    catalog = ItemCatalog()
    per_user: "OrderedDict[str, List[tuple]]" = OrderedDict()
    for order, row in enumerate(rows):
        item = catalog.intern(row.item_title, row=order)
        per_user.setdefault(row.user_id, []).append((row.timestamp, order, item))

    users: List[UserRecord] = []
    for key, events in per_user.items():
        events.sort(key=lambda e: (e[0], e[1]))
        holdout = events[-1][2]
        history = tuple(item for _, _, item in events[:-1] if item.id != holdout.id)
        users.append(UserRecord(user_id=len(users), history=history, holdout_item=holdout, key=key))

    if n_train < 0 or n_test < 0:
        raise ValidationError("n_train and n_test must be non-negative")
    if n_train + n_test > len(users):
        raise ValidationError(
            f"insufficient eligible users: need {n_train + n_test}, have {len(users)}"
        )

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(users)).tolist()
    train_ids = sorted(order[:n_train])
    test_ids = sorted(order[n_train:n_train + n_test])
    logger.info(
        "Split %d eligible users (%d items): %d train, %d test",
        len(users), len(catalog), len(train_ids), len(test_ids),
    )
    return SplitDataset(users=users, item_catalog=catalog, train_user_ids=train_ids, test_user_ids=test_ids)


def sample_candidates(user: UserRecord, pool: ItemCatalog, seed: int, num_candidates: int = 10) -> CandidateSet:
    """Holdout plus ``num_candidates - 1`` distractors the user never touched."""
    if num_candidates < 1:
        raise ValidationError("num_candidates must be at least 1")
    if user.holdout_item.id >= len(pool) or pool.get(user.holdout_item.id) != user.holdout_item:
        raise ValidationError(f"user {user.user_id}: holdout item not in the pool")
    excluded = user.item_ids
    available = np.array([item.id for item in pool if item.id not in excluded], dtype=np.int64)
    if len(available) < num_candidates - 1:
        raise ValidationError(
            f"pool too small: {len(available)} distractors available, {num_candidates - 1} needed"
        )
    rng = np.random.default_rng(seed)
    distractors = rng.choice(available, size=num_candidates - 1, replace=False).tolist()
    position = int(rng.integers(0, num_candidates))
    items = [pool.get(int(i)) for i in distractors]
    items.insert(position, user.holdout_item)
    return CandidateSet(items=tuple(items), ground_truth_pos=position)


class EmbeddingKind(str, Enum):
    USER = 'user'
    ITEM = 'item'


@dataclass
class EmbeddingTable:
    dim: int
    vectors: Dict[int, np.ndarray]
    kind: EmbeddingKind
    fallback: bool = False

    def __post_init__(self):
        if self.dim < 1 and self.vectors:
            raise ValidationError("embedding dim must be positive")
        for key, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise ValidationError(f"{self.kind.value} embedding {key} has shape {vec.shape}, expected ({self.dim},)")

    def lookup(self, key: int) -> Optional[np.ndarray]:
        return self.vectors.get(key)

    def __len__(self) -> int:
        return len(self.vectors)

    @classmethod
    def empty(cls, kind: EmbeddingKind) -> "EmbeddingTable":
        return cls(dim=0, vectors={}, kind=kind, fallback=True)


def load_embeddings(
    path,
    kind: EmbeddingKind,
    index: Mapping[str, int],
    fallback: bool = True,
) -> EmbeddingTable:
    """Read a ``dim=<D>`` header followed by ``key,v1,...,vD`` rows.

    ``index`` maps file keys (user keys or item titles) to interned ids.
    Unknown keys are skipped with a warning. A missing file yields an empty
    table in fallback mode when ``fallback`` is set.
    """
    kind = EmbeddingKind(kind)
    if path is None or not os.path.exists(path):
        if fallback:
            logger.info("No %s embeddings at %s; using hash fallback mode", kind.value, path)
            return EmbeddingTable.empty(kind)
        raise IngestionError(f"{kind.value} embedding file not found", path=str(path))

    with open(path, 'r', encoding='utf-8') as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].strip().startswith('dim='):
        raise IngestionError("missing 'dim=<D>' header", path=str(path), row=1)
    try:
        dim = int(lines[0].strip()[4:])
    except ValueError as exc:
        raise IngestionError(f"bad header {lines[0]!r}", path=str(path), row=1) from exc
    if dim < 1:
        raise IngestionError(f"dim must be positive, got {dim}", path=str(path), row=1)

    vectors: Dict[int, np.ndarray] = {}
    unknown = 0
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        # Keys (item titles) may themselves contain commas.
        parts = line.rsplit(',', dim)
        if len(parts) != dim + 1:
            raise IngestionError(f"expected {dim} values, got {len(parts) - 1}", path=str(path), row=lineno)
        key = parts[0].strip()
        try:
            values = np.array([float(v) for v in parts[1:]], dtype=np.float64)
        except ValueError as exc:
            raise IngestionError(f"non-numeric value: {exc}", path=str(path), row=lineno) from exc
        if not np.all(np.isfinite(values)):
            raise IngestionError("non-finite value", path=str(path), row=lineno)
        interned = index.get(key)
        if interned is None:
            unknown += 1
            continue
        vectors[interned] = values
    if unknown:
        logger.warning("Skipped %d unknown %s keys in %s", unknown, kind.value, path)
    return EmbeddingTable(dim=dim, vectors=vectors, kind=kind, fallback=fallback)


def embeddings_from_arrays(kind: EmbeddingKind, vectors: Mapping[int, Sequence[float]]) -> EmbeddingTable:
    """Build an in-memory table (used for simulated populations)."""
    converted = {int(k): np.asarray(v, dtype=np.float64) for k, v in vectors.items()}
    dim = len(next(iter(converted.values()))) if converted else 0
    return EmbeddingTable(dim=dim, vectors=converted, kind=EmbeddingKind(kind), fallback=True)
