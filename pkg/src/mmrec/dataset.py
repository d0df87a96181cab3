"""Interaction logs, per-user sequences and the leave-one-out split.

Item ids are dense integers ``1..n_items``; ``0`` is padding and
``n_items + 1`` is the mask token used by the bidirectional model.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DuplicateError, ParseError, PoolExhaustedError

PAD = 0


@dataclass(frozen=True)
class Interaction:
    user: int
    item: int
    timestamp: int
    rating: float | None = None


@dataclass
class Catalog:
    users: list[str] = field(default_factory=list)
    items: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.user_index = {u: i + 1 for i, u in enumerate(self.users)}
        self.item_index = {v: i + 1 for i, v in enumerate(self.items)}

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def mask_id(self) -> int:
        return self.n_items + 1

    def add_user(self, raw: str) -> int:
        idx = self.user_index.get(raw)
        if idx is None:
            self.users.append(raw)
            idx = self.user_index[raw] = len(self.users)
        return idx

    def add_item(self, raw: str) -> int:
        idx = self.item_index.get(raw)
        if idx is None:
            self.items.append(raw)
            idx = self.item_index[raw] = len(self.items)
        return idx

    def item_name(self, idx: int) -> str:
        return self.items[idx - 1]

    def user_name(self, idx: int) -> str:
        return self.users[idx - 1]


@dataclass(frozen=True)
class UserSequence:
    user: int
    items: tuple[int, ...]
    timestamps: tuple[int, ...] = ()


@dataclass
class SplitDataset:
    catalog: Catalog
    train: dict[int, list[int]]
    valid: dict[int, int]
    test: dict[int, int]

    @property
    def users(self) -> list[int]:
        return sorted(self.train)

    def full_sequence(self, user: int) -> list[int]:
        seq = list(self.train[user])
        if user in self.valid:
            seq.append(self.valid[user])
        if user in self.test:
            seq.append(self.test[user])
        return seq

    def history(self, user: int, target: str = "test") -> list[int]:
        """Items visible when predicting ``target`` ("valid" or "test")."""
        if target == "valid":
            return list(self.train[user])
        if target == "test":
            return list(self.train[user]) + [self.valid[user]]
        raise ValueError(f"unknown target {target!r}")

    def targets(self, target: str = "test") -> dict[int, int]:
        if target == "valid":
            return self.valid
        if target == "test":
            return self.test
        raise ValueError(f"unknown target {target!r}")

    def seen(self, user: int) -> set[int]:
        return set(self.full_sequence(user))


def _lines(source) -> Iterable[str]:
    if isinstance(source, Path) or (isinstance(source, str) and source and "\n" not in source and "\t" not in source):
        with open(source, encoding="utf-8") as fh:
            yield from fh
    elif isinstance(source, str):
        yield from io.StringIO(source)
    else:
        yield from source


def ingest_interactions(source) -> tuple[Catalog, list[Interaction]]:
    """Parse ``user<TAB>item<TAB>timestamp[<TAB>rating]`` records.

    ``source`` may be a path, a string of TSV text or an iterable of lines.
    Dense ids are assigned in first-seen order.
    """
    catalog = Catalog()
    out: list[Interaction] = []
    seen: set[tuple[str, str, int]] = set()
    for lineno, raw in enumerate(_lines(source), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) not in (3, 4):
            raise ParseError(f"expected 3 or 4 tab-separated fields, got {len(fields)}", lineno)
        user, item, ts = fields[0], fields[1], fields[2]
        if not user or not item:
            raise ParseError("empty user or item id", lineno)
        try:
            timestamp = int(ts)
        except ValueError:
            raise ParseError(f"non-numeric timestamp {ts!r}", lineno) from None
        if timestamp < 0:
            raise ParseError(f"negative timestamp {timestamp}", lineno)
        rating = None
        if len(fields) == 4 and fields[3] != "":
            try:
                rating = float(fields[3])
            except ValueError:
                raise ParseError(f"non-numeric rating {fields[3]!r}", lineno) from None
            if not 1.0 <= rating <= 5.0:
                raise ParseError(f"rating {rating} outside [1, 5]", lineno)
        key = (user, item, timestamp)
        if key in seen:
            raise DuplicateError(f"line {lineno}: duplicate interaction {user}/{item}@{timestamp}")
        seen.add(key)
        out.append(Interaction(catalog.add_user(user), catalog.add_item(item), timestamp, rating))
    return catalog, out


def write_interactions(path, catalog: Catalog, interactions: Sequence[Interaction]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for it in interactions:
            row = [catalog.user_name(it.user), catalog.item_name(it.item), str(it.timestamp)]
            if it.rating is not None:
                row.append(repr(float(it.rating)))
            fh.write("\t".join(row) + "\n")


def build_sequences(interactions: Iterable[Interaction]) -> list[UserSequence]:
    by_user: dict[int, list[Interaction]] = {}
    for it in interactions:
        by_user.setdefault(it.user, []).append(it)
    out = []
    for user in sorted(by_user):
        rows = sorted(by_user[user], key=lambda r: (r.timestamp, r.item))
        out.append(UserSequence(user, tuple(r.item for r in rows), tuple(r.timestamp for r in rows)))
    return out


def leave_one_out_split(sequences: Iterable[UserSequence], catalog: Catalog | None = None) -> SplitDataset:
    train, valid, test = {}, {}, {}
    for s in sequences:
        items = list(s.items)
        if len(items) >= 3:
            train[s.user] = items[:-2]
            valid[s.user] = items[-2]
            test[s.user] = items[-1]
        else:
            train[s.user] = items
    return SplitDataset(catalog if catalog is not None else Catalog(), train, valid, test)


def load_split(path) -> SplitDataset:
    catalog, interactions = ingest_interactions(path)
    return leave_one_out_split(build_sequences(interactions), catalog)


def sample_negatives(split: SplitDataset, user: int, k: int, rng: np.random.Generator) -> list[int]:
    """``k`` distinct items outside the user's whole history, uniformly."""
    return sample_outside(split.seen(user), split.catalog.n_items, k, rng)


def sample_outside(excluded: set[int], n_items: int, k: int, rng: np.random.Generator) -> list[int]:
    pool = np.setdiff1d(np.arange(1, n_items + 1), np.fromiter(excluded, dtype=np.int64, count=len(excluded)))
    if pool.size < k:
        raise PoolExhaustedError(f"need {k} negatives but only {pool.size} candidate items remain")
    return [int(x) for x in rng.choice(pool, size=k, replace=False)]


def truncate_pad(sequence: Sequence[int], n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("max length must be >= 1")
    tail = list(sequence)[-n:]
    out = np.zeros(n, dtype=np.int64)
    if tail:
        out[n - len(tail) :] = tail
    return out
