"""Synthetic interaction logs with planted ordered-pattern -> click dependencies.

Each template ``(a, b, c)`` is emitted into a user's history as
``a [noise] b [noise] c`` with probability ``emission``; with probability
``decoy`` the order of ``a`` and ``b`` is swapped instead. An impression whose
target is the tail ``c`` is clicked with probability ``lift`` when ``a`` was
seen before ``b`` in the history, and with ``base_rate`` otherwise. The decoy
keeps the *set* of template items identical between the two branches, so only
an order-aware model can separate them.
"""
import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import InteractionRecord, ensure_dir, write_log


@dataclass(frozen=True)
class Template:
    items: tuple
    emission: float = 1 / 3
    lift: float = 0.9
    decoy: float = 1 / 3


@dataclass
class SyntheticSpec:
    n_users: int = 20000
    n_items: int = 1000
    n_categories: int = 50
    min_len: int = 10
    max_len: int = 30
    templates: list = field(default_factory=lambda: [Template((1, 2, 3))])
    base_rate: float = 0.1
    target_tail_prob: float = 0.5
    impressions_per_user: int = 2
    max_gap: int = 1

    def validate(self) -> None:
        probs = [self.base_rate, self.target_tail_prob]
        for t in self.templates:
            probs += [t.emission, t.lift, t.decoy]
            if t.emission + t.decoy > 1:
                raise ValueError(f"template {t.items}: emission + decoy exceeds 1")
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("probabilities must lie in [0, 1]")
        used = [i for t in self.templates for i in t.items]
        if len(used) != len(set(used)):
            raise ValueError("templates must use distinct items")
        if any(len(t.items) < 2 for t in self.templates):
            raise ValueError("templates need at least two items")
        if any(not 1 <= i <= self.n_items for i in used):
            raise ValueError(f"template items must lie in 1..{self.n_items}")
        if len(used) >= self.n_categories:
            raise ValueError("need more categories than template items")
        if self.min_len < 1 or self.max_len < self.min_len:
            raise ValueError("invalid sequence length range")
        longest = max((len(t.items) + (len(t.items) - 1) * self.max_gap for t in self.templates), default=0)
        if longest * len(self.templates) > self.max_len:
            raise ValueError("max_len too short to hold every template emission")


@dataclass
class SyntheticDataset:
    records: list
    impressions: list
    ground_truth: list
    spec: SyntheticSpec

    def write(self, out_dir) -> None:
        out = ensure_dir(out_dir)
        write_log(out / "interactions.csv", self.records)
        with open(out / "impressions.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["user", "item", "category", "timestamp", "label", "click_prob"])
            for imp in self.impressions:
                w.writerow([imp["user"], imp["item"], imp["category"], imp["timestamp"],
                            imp["label"], repr(imp["click_prob"])])
        with open(out / "ground_truth.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["template", "emission", "decoy", "lift", "base_rate"])
            for t in self.spec.templates:
                w.writerow([" ".join(map(str, t.items)), repr(t.emission), repr(t.decoy),
                            repr(t.lift), repr(self.spec.base_rate)])


def prefix_in_order(items, template) -> bool:
    """True when every prefix item of `template` occurs in order in `items`."""
    pos = 0
    prefix = template[:-1]
    for it in items:
        if it == prefix[pos]:
            pos += 1
            if pos == len(prefix):
                return True
    return False


def ground_truth_table(spec: SyntheticSpec) -> list:
    rows = []
    for t in spec.templates:
        rows.append({"template": t.items, "history_condition": "prefix_in_order",
                     "target": t.items[-1], "click_prob": t.lift})
        rows.append({"template": t.items, "history_condition": "otherwise",
                     "target": t.items[-1], "click_prob": spec.base_rate})
    return rows


def generate_synthetic(spec: SyntheticSpec, seed: int = 0) -> SyntheticDataset:
    spec.validate()
    rng = np.random.default_rng(seed)
    special = [i for t in spec.templates for i in t.items]
    noise_items = np.setdiff1d(np.arange(1, spec.n_items + 1), special)
    if noise_items.size == 0:
        raise ValueError("no template-free items left for noise")
    n_pool = spec.n_categories - len(special)
    category = np.zeros(spec.n_items + 1, dtype=np.int64)
    category[noise_items] = rng.integers(1, n_pool + 1, size=noise_items.size)
    for j, it in enumerate(special):
        category[it] = n_pool + 1 + j
    tails = [t.items[-1] for t in spec.templates]

    records, impressions = [], []
    for user in range(1, spec.n_users + 1):
        blocks = []
        for t in spec.templates:
            u = rng.random()
            if u < t.emission:
                order = list(t.items)
            elif u < t.emission + t.decoy:
                order = [t.items[1], t.items[0], *t.items[2:]]
            else:
                continue
            block = [order[0]]
            for it in order[1:]:
                block += list(rng.choice(noise_items, size=rng.integers(0, spec.max_gap + 1)))
                block.append(it)
            blocks.append(block)
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        length = max(length, sum(len(b) for b in blocks))
        seq = list(rng.choice(noise_items, size=length - sum(len(b) for b in blocks)))
        for block in blocks:
            at = int(rng.integers(0, len(seq) + 1))
            seq[at:at] = block
        t0 = 1_000_000 + user * 10_000
        for k, it in enumerate(seq):
            records.append(InteractionRecord(user, int(it), int(category[it]), t0 + 60 * k))
        for j in range(spec.impressions_per_user):
            if rng.random() < spec.target_tail_prob:
                ti = int(rng.integers(len(tails)))
                target = tails[ti]
                tpl = spec.templates[ti]
                p = tpl.lift if prefix_in_order(seq, tpl.items) else spec.base_rate
            else:
                target = int(rng.choice(noise_items))
                p = spec.base_rate
            label = int(rng.random() < p)
            impressions.append({"user": user, "item": target, "category": int(category[target]),
                                "timestamp": t0 + 60 * len(seq) + j, "label": label, "click_prob": float(p)})
    return SyntheticDataset(records, impressions, ground_truth_table(spec), spec)


def read_ground_truth(path) -> tuple[list, float]:
    """Read the sidecar back as ``(templates, base_rate)``."""
    templates, base = [], None
    with open(Path(path), newline="") as fh:
        for row in csv.DictReader(fh):
            templates.append(Template(tuple(int(x) for x in row["template"].split()),
                                      float(row["emission"]), float(row["lift"]), float(row["decoy"])))
            base = float(row["base_rate"])
    return templates, base
