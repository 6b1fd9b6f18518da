"""Glue shared by the command line and the benchmark: datasets, SPRM corpora, runs."""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .data import (Batch, InteractionRecord, Vocabulary, build_vocab, ingest_log, load_instances_csv,
                   make_instances, impressions_to_instances, split_by_user, stack)
from .model import TrainConfig
from .refinement import PretrainConfig, RefinementNetwork, pretrain, sliding_windows
from .synthetic import SyntheticDataset
from .training import train

log = logging.getLogger(__name__)


@dataclass
class Prepared:
    records: list
    vocab: Vocabulary
    train: Batch
    test: Batch
    skipped_rows: int = 0
    skipped_users: int = 0


def prepare(records, impressions: Optional[list], seq_len: int, test_fraction: float = 0.2,
            seed: int = 0, neg_ratio: int = 1, skipped_rows: int = 0) -> Prepared:
    """Label, split by user and stack.

    With explicit impressions each one becomes an instance over the behaviors
    before it; otherwise leave-one-out labeling with sampled negatives.
    """
    if impressions:
        pseudo = [InteractionRecord(i["user"], i["item"], i["category"], i["timestamp"]) for i in impressions]
        vocab = build_vocab(list(records) + pseudo)
        instances = impressions_to_instances(records, impressions, vocab, seq_len)
        skipped_users = 0
    else:
        vocab = build_vocab(records)
        instances, skipped_users = make_instances(records, vocab, seq_len, neg_ratio, seed)
    instances = [x for x in instances if x.sequence.length > 0]
    if not instances:
        raise ValueError("no usable instances (every user lacks a behavior history)")
    train_set, test_set = split_by_user(instances, test_fraction, seed)
    if not train_set or not test_set:
        raise ValueError("train/test split left one side empty; use more users")
    return Prepared(list(records), vocab, stack(train_set), stack(test_set), skipped_rows, skipped_users)


def prepare_synthetic(ds: SyntheticDataset, seq_len: int, test_fraction: float = 0.2, seed: int = 0) -> Prepared:
    return prepare(ds.records, ds.impressions, seq_len, test_fraction, seed)


def load_prepared(data_dir: str = "", interactions: str = "", impressions: str = "", columns=None,
                  seq_len: int = 100, test_fraction: float = 0.2, seed: int = 0, neg_ratio: int = 1) -> Prepared:
    inter = Path(interactions) if interactions else Path(data_dir) / "interactions.csv"
    if not inter.is_file():
        raise FileNotFoundError(f"interaction log not found: {inter}")
    records, skipped = ingest_log(inter, columns)
    imp_path = Path(impressions) if impressions else (Path(data_dir) / "impressions.csv" if data_dir else None)
    imps = load_instances_csv(imp_path) if imp_path is not None and imp_path.is_file() else None
    return prepare(records, imps, seq_len, test_fraction, seed, neg_ratio, skipped)


def pattern_corpus(prep: Prepared, s: int, max_patterns: int = 0, seed: int = 0):
    """Length-s consecutive windows of the training histories, optionally subsampled."""
    items, cats = sliding_windows(prep.train.items, prep.train.categories, prep.train.mask, s)
    if max_patterns and len(items) > max_patterns:
        pick = np.sort(np.random.default_rng(seed).permutation(len(items))[:max_patterns])
        items, cats = items[pick], cats[pick]
    return items, cats


def pretrain_on(prep: Prepared, config: PretrainConfig, max_patterns: int = 0):
    items, cats = pattern_corpus(prep, config.s, max_patterns, config.seed)
    if len(items) == 0:
        raise ValueError(f"no fully valid length-{config.s} windows to pretrain on")
    return pretrain(items, cats, prep.vocab.n_items, prep.vocab.n_categories, config)


def train_on(prep: Prepared, config: TrainConfig, sprm: Optional[RefinementNetwork] = None):
    return train(prep.train, prep.test, prep.vocab.n_items, prep.vocab.n_categories, config, sprm)


VARIANTS = {
    "full": {},
    "base_only": {"base_only": True},
    "no_tprm": {"no_tprm": True},
    "no_sprm": {"no_sprm": True},
    "no_tpa": {"no_tpa": True},
}
