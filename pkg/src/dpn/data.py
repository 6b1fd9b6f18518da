"""Interaction logs, vocabularies, labeled instances and batching."""
import csv
import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_COLUMNS = {"user": "user", "item": "item", "category": "category", "timestamp": "timestamp"}


@dataclass(frozen=True)
class InteractionRecord:
    user: int
    item: int
    category: int
    timestamp: int


@dataclass
class Vocabulary:
    """Dense ids in first-appearance order; id 0 is reserved for padding."""

    items: dict
    categories: dict

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    def decode_item(self, dense: int) -> int:
        return self._inverse("items")[dense]

    def decode_category(self, dense: int) -> int:
        return self._inverse("categories")[dense]

    def _inverse(self, which):
        attr = f"_inv_{which}"
        if not hasattr(self, attr):
            setattr(self, attr, {v: k for k, v in getattr(self, which).items()})
        return getattr(self, attr)


@dataclass
class BehaviorSequence:
    """Fixed-length, left-padded behavior history. Slot N-1 is the most recent."""

    items: np.ndarray
    categories: np.ndarray
    mask: np.ndarray
    length: int


@dataclass
class LabeledInstance:
    user: int
    sequence: BehaviorSequence
    target_item: int
    target_category: int
    label: int
    click_prob: Optional[float] = None


@dataclass
class Batch:
    """Column-stacked instances, the layout every model forward consumes."""

    items: np.ndarray
    categories: np.ndarray
    mask: np.ndarray
    target_item: np.ndarray
    target_category: np.ndarray
    label: np.ndarray
    user: np.ndarray
    click_prob: np.ndarray

    def __len__(self):
        return len(self.label)

    def take(self, idx) -> "Batch":
        return Batch(**{k: v[idx] for k, v in vars(self).items()})


def ingest_log(path, columns: Optional[dict] = None) -> tuple[list[InteractionRecord], int]:
    """Parse a CSV interaction log.

    Returns ``(records, skipped)``. Records are grouped by user (first
    appearance order) and sorted by timestamp within each user; rows with
    non-integer fields are skipped and counted.
    """
    columns = {**DEFAULT_COLUMNS, **(columns or {})}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty file")
        absent = [c for c in columns.values() if c not in reader.fieldnames]
        if absent:
            raise ValueError(f"{path}: missing column(s) {absent}")
        per_user = defaultdict(list)
        skipped = 0
        for row in reader:
            try:
                rec = InteractionRecord(*(int(row[columns[k]]) for k in ("user", "item", "category", "timestamp")))
            except (TypeError, ValueError):
                skipped += 1
                continue
            per_user[rec.user].append(rec)
    if not per_user and not skipped:
        raise ValueError(f"{path}: no data rows")
    if skipped:
        log.info("ingest_log: skipped %d malformed row(s) in %s", skipped, path)
    records = []
    for recs in per_user.values():
        records.extend(sorted(recs, key=lambda r: r.timestamp))
    return records, skipped


def write_log(path, records: Sequence[InteractionRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "item", "category", "timestamp"])
        for r in records:
            w.writerow([r.user, r.item, r.category, r.timestamp])


def build_vocab(records: Sequence[InteractionRecord]) -> Vocabulary:
    if not records:
        raise ValueError("build_vocab: no records")
    items, cats = {}, {}
    for r in records:
        items.setdefault(r.item, len(items) + 1)
        cats.setdefault(r.category, len(cats) + 1)
    return Vocabulary(items, cats)


def group_by_user(records) -> dict:
    users = defaultdict(list)
    for r in records:
        users[r.user].append(r)
    return users


def make_sequence(items, categories, n: int) -> BehaviorSequence:
    """Keep the most recent `n` behaviors and left-pad with id 0."""
    items = list(items)[-n:]
    categories = list(categories)[-n:]
    k = len(items)
    seq_items = np.zeros(n, dtype=np.int64)
    seq_cats = np.zeros(n, dtype=np.int64)
    mask = np.zeros(n, dtype=bool)
    if k:
        seq_items[n - k:] = items
        seq_cats[n - k:] = categories
        mask[n - k:] = True
    return BehaviorSequence(seq_items, seq_cats, mask, k)


def item_category_map(records, vocab: Vocabulary) -> np.ndarray:
    """Dense item id -> dense category id (last observed)."""
    out = np.zeros(vocab.n_items + 1, dtype=np.int64)
    for r in records:
        out[vocab.items[r.item]] = vocab.categories[r.category]
    return out


def make_instances(records, vocab: Vocabulary, n: int, neg_ratio: int = 1,
                   seed: int = 0) -> tuple[list[LabeledInstance], int]:
    """Leave-one-out labeling with uniform negative sampling.

    The last interaction of every user becomes the positive target, the
    preceding ones form the history. Returns ``(instances, skipped_users)``.
    """
    rng = np.random.default_rng(seed)
    cat_of = item_category_map(records, vocab)
    out, skipped = [], 0
    for user, recs in group_by_user(records).items():
        if len(recs) < 2:
            skipped += 1
            continue
        hist = recs[:-1]
        seq = make_sequence([vocab.items[r.item] for r in hist],
                            [vocab.categories[r.category] for r in hist], n)
        pos = vocab.items[recs[-1].item]
        out.append(LabeledInstance(user, seq, pos, vocab.categories[recs[-1].category], 1))
        for _ in range(neg_ratio):
            if vocab.n_items < 2:
                break
            neg = int(rng.integers(1, vocab.n_items))
            neg += neg >= pos
            out.append(LabeledInstance(user, seq, neg, int(cat_of[neg]), 0))
    return out, skipped


def stack(instances: Sequence[LabeledInstance]) -> Batch:
    return Batch(
        items=np.stack([x.sequence.items for x in instances]),
        categories=np.stack([x.sequence.categories for x in instances]),
        mask=np.stack([x.sequence.mask for x in instances]),
        target_item=np.array([x.target_item for x in instances], dtype=np.int64),
        target_category=np.array([x.target_category for x in instances], dtype=np.int64),
        label=np.array([x.label for x in instances], dtype=np.int64),
        user=np.array([x.user for x in instances], dtype=np.int64),
        click_prob=np.array([np.nan if x.click_prob is None else x.click_prob for x in instances]),
    )


def batch_iter(data, batch_size: int, seed: Optional[int] = None) -> Iterator[Batch]:
    """Yield batches of one epoch. A seed shuffles with a fresh permutation."""
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    data = data if isinstance(data, Batch) else stack(data)
    order = np.arange(len(data))
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(data))
    for start in range(0, len(data), batch_size):
        yield data.take(order[start:start + batch_size])


def split_by_user(instances: Sequence[LabeledInstance], test_fraction: float, seed: int = 0):
    users = sorted({x.user for x in instances})
    rng = np.random.default_rng(seed)
    test = set(rng.choice(users, size=int(round(len(users) * test_fraction)), replace=False).tolist())
    train = [x for x in instances if x.user not in test]
    held = [x for x in instances if x.user in test]
    return train, held


def load_instances_csv(path) -> list:
    """Rows of ``user,item,category,timestamp,label[,click_prob]`` impressions."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            cp = row.get("click_prob")
            out.append({"user": int(row["user"]), "item": int(row["item"]),
                        "category": int(row["category"]), "timestamp": int(row["timestamp"]),
                        "label": int(row["label"]), "click_prob": float(cp) if cp else None})
    return out


def impressions_to_instances(records, impressions, vocab: Vocabulary, n: int) -> list[LabeledInstance]:
    """Pair each impression with the user's behaviors strictly before it."""
    users = group_by_user(records)
    out = []
    for imp in impressions:
        hist = [r for r in users.get(imp["user"], ()) if r.timestamp < imp["timestamp"]]
        seq = make_sequence([vocab.items[r.item] for r in hist],
                            [vocab.categories[r.category] for r in hist], n)
        out.append(LabeledInstance(imp["user"], seq, vocab.items[imp["item"]],
                                   vocab.categories[imp["category"]], imp["label"], imp.get("click_prob")))
    return out


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
