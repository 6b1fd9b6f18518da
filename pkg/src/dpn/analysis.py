"""Pattern-level analyses on a trained model: frequencies, IntraPMI, conditional MI, dumps."""
import csv
from dataclasses import dataclass
from itertools import permutations
from pathlib import Path

import numpy as np

from .data import Batch, Vocabulary, batch_iter, group_by_user
from .metrics import (IntraPMIIndex, conditional_mi_matrix, empirical_cdf, matrix_similarity,
                      pattern_frequency)
from .model import DPN
from .refinement import RefinementNetwork, refine
from .retrieval import batch_extract, batch_top_k

# recorded in every conditional-MI output
CMI_CONVENTION = "I(P_H; Y | P_T = 1), instances with the target pattern only; scores binarized at the median"
NORMALIZATION = "total correlation / (sum_i H(B_i) - max_i H(B_i)), natural log"


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def fmt(x) -> str:
    """Shortest exact float text, so reruns are byte-identical."""
    return "nan" if x != x else repr(float(x))


# frequency of consecutive patterns


def frequency_tables(records, order: int, top: int):
    """Item- and category-level tables: ``{kind: PatternFrequency}``."""
    users = group_by_user(records)
    item_seqs = [[r.item for r in recs] for recs in users.values()]
    cat_seqs = [[r.category for r in recs] for recs in users.values()]
    return {"item": pattern_frequency(item_seqs, order, top),
            "category": pattern_frequency(cat_seqs, order, top)}


# history / target pattern indicators


@dataclass
class PatternSets:
    history_names: list
    target_names: list
    history: np.ndarray   # (n, H) bool
    target: np.ndarray    # (n, T) bool


def ordered_pair_occurs(items: np.ndarray, mask: np.ndarray, first: int, second: int) -> np.ndarray:
    """Per row: does `first` occur at some valid slot before some occurrence of `second`."""
    items = np.where(mask, items, 0)
    n = items.shape[-1]
    hit_a = items == first
    hit_b = items == second
    first_a = np.where(hit_a.any(-1), np.argmax(hit_a, axis=-1), n)
    last_b = np.where(hit_b.any(-1), n - 1 - np.argmax(hit_b[:, ::-1], axis=-1), -1)
    return first_a < last_b


def template_pattern_sets(batch: Batch, templates: list, vocab: Vocabulary) -> PatternSets:
    """Rows: ordered pairs of template items; columns: target is the tail, target is anything else."""
    names_h, cols_h = [], []
    tails = []
    for t in templates:
        dense = [vocab.items[i] for i in t.items if i in vocab.items]
        if len(dense) < len(t.items):
            continue
        for a, b in permutations(range(len(t.items)), 2):
            names_h.append(f"{t.items[a]}<{t.items[b]}")
            cols_h.append(ordered_pair_occurs(batch.items, batch.mask, dense[a], dense[b]))
        tails.append((t.items[-1], vocab.items[t.items[-1]]))
    if not cols_h:
        raise ValueError("no template item appears in the vocabulary")
    names_t, cols_t = [], []
    for raw, dense in tails:
        names_t.append(f"target={raw}")
        cols_t.append(batch.target_item == dense)
    names_t.append("target=other")
    cols_t.append(~np.any(np.stack(cols_t, axis=1), axis=1))
    return PatternSets(names_h, names_t, np.stack(cols_h, axis=1), np.stack(cols_t, axis=1))


def frequent_pattern_sets(batch: Batch, vocab: Vocabulary, n_history: int = 10, n_target: int = 5) -> PatternSets:
    """Without ground truth: most frequent adjacent item pairs vs the most frequent targets."""
    items = np.where(batch.mask, batch.items, 0)
    pairs = np.stack([items[:, :-1], items[:, 1:]], axis=-1).reshape(-1, 2)
    pairs = pairs[(pairs > 0).all(axis=1)]
    uniq, counts = np.unique(pairs, axis=0, return_counts=True)
    order = np.lexsort((uniq[:, 1], uniq[:, 0], -counts))[:n_history]
    names_h, cols_h = [], []
    for a, b in uniq[order]:
        names_h.append(f"{vocab.decode_item(int(a))}<{vocab.decode_item(int(b))}")
        cols_h.append(ordered_pair_occurs(batch.items, batch.mask, int(a), int(b)))
    t_uniq, t_counts = np.unique(batch.target_item, return_counts=True)
    t_order = np.lexsort((t_uniq, -t_counts))[:n_target]
    names_t = [f"target={vocab.decode_item(int(t))}" for t in t_uniq[t_order]]
    cols_t = [batch.target_item == t for t in t_uniq[t_order]]
    return PatternSets(names_h, names_t, np.stack(cols_h, axis=1), np.stack(cols_t, axis=1))


def cmi_matrices(sets: PatternSets, batch: Batch, scores=None, min_support: int = 50) -> dict:
    """Ground truth (click probabilities, when known), empirical labels and model scores."""
    out = {"labels": conditional_mi_matrix(sets.history, sets.target, batch.label, "labels", min_support)}
    if not np.isnan(batch.click_prob).any():
        out["truth"] = conditional_mi_matrix(sets.history, sets.target, batch.click_prob, "probs", min_support)
    if scores is not None:
        out["model"] = conditional_mi_matrix(sets.history, sets.target, scores, "scores", min_support)
    return out


def write_matrix(path, sets: PatternSets, matrix) -> None:
    rows = [[sets.history_names[i], sets.target_names[t], fmt(matrix[i, t])]
            for i in range(matrix.shape[0]) for t in range(matrix.shape[1])]
    with open(path, "w", newline="") as fh:
        fh.write(f"# {CMI_CONVENTION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["history_pattern", "target_pattern", "cmi"])
        w.writerows(rows)


def similarity_or_nan(m1, m2) -> float:
    try:
        return matrix_similarity(m1, m2)
    except ValueError:
        return float("nan")


# retrieved vs refined patterns


def retrieved_patterns(model: DPN, batch: Batch, sprm: RefinementNetwork, top_k: int, length: int, s: int,
                       batch_size: int = 512):
    """Raw length-l patterns at the model's top-K anchors and their refined length-s versions.

    Returns two lists of item-id tuples (pads dropped), one entry per valid anchor.
    """
    raw, refined = [], []
    for b in batch_iter(batch, batch_size):
        _, info = model.forward(b, trace=True)
        idx, valid = batch_top_k(info["attention"], b.mask, top_k)
        items, cats, mask = batch_extract(b.items, b.categories, b.mask, idx, length, valid)
        _, r_items, _, r_mask = refine(items, cats, mask, sprm, s)
        for row in range(items.shape[0]):
            for k in range(items.shape[1]):
                if valid[row, k]:
                    raw.append(tuple(items[row, k][mask[row, k]].tolist()))
                    refined.append(tuple(r_items[row, k][r_mask[row, k]].tolist()))
    return raw, refined


def intra_pmi_scores(patterns, user_items, n_items: int) -> np.ndarray:
    index = IntraPMIIndex(user_items, n_items)
    cache = {}
    out = np.empty(len(patterns))
    for j, p in enumerate(patterns):
        key = tuple(sorted(set(p)))
        if key not in cache:
            cache[key] = index(key)[1]
        out[j] = cache[key]
    return out


def user_item_sets(records, vocab: Vocabulary) -> list:
    """Per-user set of dense item ids over the whole interaction log."""
    return [{vocab.items[r.item] for r in recs} for recs in group_by_user(records).values()]


def write_cdf(path, values) -> None:
    x, f = empirical_cdf(values) if len(values) else (np.array([]), np.array([]))
    write_rows(path, ["x", "F"], [[fmt(a), fmt(b)] for a, b in zip(x, f)])


# per-instance dumps


def debug_dump(model: DPN, batch: Batch, vocab: Vocabulary, out_dir, n: int) -> None:
    """Attention weights per history slot and one row per retrieved pattern."""
    out = Path(out_dir)
    sub = batch.take(np.arange(min(n, len(batch))))
    probs, info = model.forward(sub, trace=True)
    dec = lambda i: vocab.decode_item(int(i)) if i else 0
    att_rows, pat_rows = [], []
    for r in range(len(sub)):
        for pos in np.flatnonzero(sub.mask[r]):
            att_rows.append([r, int(sub.user[r]), pos, dec(sub.items[r, pos]), fmt(info["attention"][r, pos])])
        if "anchors" not in info:
            continue
        for k in range(info["anchors"].shape[1]):
            if not info["anchor_valid"][r, k]:
                continue
            anchor = int(info["anchors"][r, k])
            raw = " ".join(str(dec(i)) for i, m in zip(info["raw_items"][r, k], info["raw_mask"][r, k]) if m)
            if "refined_slots" in info:
                slots = " ".join(str(int(x)) for x in info["refined_slots"][r, k])
                ref = " ".join(str(dec(i)) for i, m in zip(info["refined_items"][r, k], info["refined_mask"][r, k]) if m)
            else:
                slots, ref = "", ""
            tpa = fmt(info["tpa"][r, k]) if "tpa" in info else "nan"
            pat_rows.append([r, int(sub.user[r]), dec(sub.target_item[r]), int(sub.label[r]),
                             fmt(probs.data[r, 0]), k, anchor, dec(sub.items[r, anchor]), raw, slots, ref, tpa])
    write_rows(out / "dump_attention.csv", ["instance", "user", "position", "item", "weight"], att_rows)
    write_rows(out / "dump_patterns.csv",
               ["instance", "user", "target_item", "label", "score", "rank", "anchor_position", "anchor_item",
                "raw_pattern", "refined_slots", "refined_pattern", "tpa_weight"], pat_rows)
