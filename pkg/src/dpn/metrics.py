"""Evaluation metrics and plug-in information measures (natural log throughout)."""
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata


def auc(scores, labels) -> float:
    """ROC AUC via the Mann-Whitney rank statistic; tied scores count one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc: need both positive and negative labels")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def rela_impr(auc_new: float, auc_base: float) -> float:
    """Relative AUC improvement over a base model, in percent, measured above 0.5."""
    if auc_base == 0.5:
        raise ValueError("rela_impr: base AUC of 0.5 leaves nothing to improve on")
    return ((auc_new - 0.5) / (auc_base - 0.5) - 1.0) * 100.0


def entropy_from_counts(counts) -> float:
    counts = np.asarray(counts, dtype=float)
    counts = counts[counts > 0]
    if counts.size == 0:
        return 0.0
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def joint_entropy(columns: np.ndarray) -> float:
    """Plug-in entropy of the joint distribution of the rows of a binary matrix."""
    columns = np.asarray(columns, dtype=np.int64)
    if columns.ndim == 1:
        columns = columns[:, None]
    codes = columns @ (1 << np.arange(columns.shape[1], dtype=np.int64))
    return entropy_from_counts(np.bincount(codes))


def total_correlation(columns: np.ndarray) -> tuple[float, float]:
    """``sum_i H(B_i) - H(B_1..B_n)`` and its normalized value in [0, 1].

    The normalizer is ``sum_i H(B_i) - max_i H(B_i)``, the largest value the
    total correlation can take for these marginals.
    """
    columns = np.asarray(columns)
    marg = [joint_entropy(columns[:, i]) for i in range(columns.shape[1])]
    tc = max(sum(marg) - joint_entropy(columns), 0.0)
    bound = sum(marg) - max(marg) if marg else 0.0
    norm = min(max(tc / bound, 0.0), 1.0) if bound > 0 else 0.0
    return tc, norm


def occurrence_matrix(user_items: Sequence[set], pattern) -> np.ndarray:
    """Binary ``(users, distinct items)`` matrix: did the user interact with each item."""
    distinct = list(dict.fromkeys(int(i) for i in pattern if i != 0))
    return np.array([[it in items for it in distinct] for items in user_items], dtype=np.int64).reshape(
        len(user_items), len(distinct))


def intra_pmi(pattern, user_items: Sequence[set]) -> tuple[float, float]:
    """IntraPMI of a pattern over per-user item sets: ``(nats, normalized)``.

    Repeated items and pad ids (0) are dropped, so each distinct item
    contributes one occurrence variable.
    """
    mat = occurrence_matrix(user_items, pattern)
    if mat.shape[1] < 2:
        return 0.0, 0.0
    return total_correlation(mat)


class IntraPMIIndex:
    """Fast IntraPMI for many patterns via a sparse user x item occurrence matrix."""

    def __init__(self, user_items: Sequence[set], n_items: int):
        from scipy.sparse import csc_matrix

        rows, cols = [], []
        for u, items in enumerate(user_items):
            rows.extend([u] * len(items))
            cols.extend(items)
        data = np.ones(len(rows), dtype=np.int8)
        self.matrix = csc_matrix((data, (rows, cols)), shape=(len(user_items), n_items + 1))
        self.n_users = len(user_items)

    def __call__(self, pattern) -> tuple[float, float]:
        distinct = list(dict.fromkeys(int(i) for i in pattern if i != 0))
        if len(distinct) < 2:
            return 0.0, 0.0
        return total_correlation(self.matrix[:, distinct].toarray())


def plug_in_mi(x, y) -> float:
    """Mutual information of two discrete variables from paired samples."""
    x = np.unique(np.asarray(x), return_inverse=True)[1]
    y = np.unique(np.asarray(y), return_inverse=True)[1]
    joint = np.stack([x, y], axis=1)
    hx = entropy_from_counts(np.bincount(x))
    hy = entropy_from_counts(np.bincount(y))
    hxy = entropy_from_counts(np.unique(joint, axis=0, return_counts=True)[1])
    return max(hx + hy - hxy, 0.0)


def mi_from_joint(table) -> float:
    """Mutual information of a (possibly weighted) 2-D contingency table."""
    table = np.asarray(table, dtype=float)
    total = table.sum()
    if total <= 0:
        return 0.0
    p = table / total
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    nz = p > 0
    return float(max((p[nz] * np.log(p[nz] / (px @ py)[nz])).sum(), 0.0))


def binarize_median(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return (values > np.median(values)).astype(np.int64)


def conditional_mi_matrix(history: np.ndarray, target: np.ndarray, values, kind: str = "labels",
                          min_support: int = 50) -> np.ndarray:
    """Matrix of ``I(P_H^(i); Y | P_T^(t) = 1)``.

    `history` is an ``(n, H)`` boolean matrix of history-pattern occurrences,
    `target` an ``(n, T)`` boolean matrix of target-pattern indicators. Cell
    ``(i, t)`` is the plug-in MI between history pattern ``i`` and `values`
    over the instances whose target pattern is ``t``; cells with fewer than
    `min_support` instances are NaN.

    `kind` selects how `values` is read:
      * ``"labels"``: binary labels;
      * ``"scores"``: predicted scores, binarized at the per-condition median;
      * ``"probs"``: exact click probabilities, giving the expected joint table.
    """
    history = np.asarray(history, bool)
    target = np.asarray(target, bool)
    values = np.asarray(values, dtype=float)
    out = np.full((history.shape[1], target.shape[1]), np.nan)
    for t in range(target.shape[1]):
        sel = target[:, t]
        if sel.sum() < min_support:
            continue
        v = values[sel]
        if kind == "scores":
            v = binarize_median(v)
        for i in range(history.shape[1]):
            h = history[sel, i]
            if kind == "probs":
                table = np.array([[np.sum(1 - v[h == a]), np.sum(v[h == a])] for a in (False, True)])
                out[i, t] = mi_from_joint(table)
            else:
                table = np.array([[np.sum((h == a) & (v == b)) for b in (0, 1)] for a in (False, True)])
                out[i, t] = mi_from_joint(table)
    return out


def matrix_similarity(m1, m2) -> float:
    """Pearson correlation over cells that are present (non-NaN) in both matrices."""
    a, b = np.asarray(m1, float).ravel(), np.asarray(m2, float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"matrix_similarity: shapes differ {np.shape(m1)} vs {np.shape(m2)}")
    ok = ~(np.isnan(a) | np.isnan(b))
    if ok.sum() < 3:
        raise ValueError("matrix_similarity: fewer than 3 shared cells")
    a, b = a[ok], b[ok]
    da, db = a - a.mean(), b - b.mean()
    denom = np.sqrt((da * da).sum() * (db * db).sum())
    if denom == 0:
        raise ValueError("matrix_similarity: a matrix is constant over the shared cells")
    return float((da * db).sum() / denom)


@dataclass
class PatternFrequency:
    counts: Counter
    histogram: list
    top: list


def pattern_frequency(sequences: Sequence[Sequence[int]], order: int = 3, top: int = 5) -> PatternFrequency:
    """Counts of consecutive length-`order` sub-sequences across all sequences.

    `histogram` holds ``(frequency, number of patterns with that frequency)``
    pairs sorted by frequency; `top` the most frequent patterns.
    """
    if order < 2:
        raise ValueError("pattern order must be >= 2")
    counts = Counter()
    for seq in sequences:
        seq = list(seq)
        for i in range(len(seq) - order + 1):
            counts[tuple(seq[i:i + order])] += 1
    hist = sorted(Counter(counts.values()).items())
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top]
    return PatternFrequency(counts, hist, ranked)


def empirical_cdf(values) -> tuple[np.ndarray, np.ndarray]:
    """Points ``(x, F(x))`` of the empirical CDF at each distinct value."""
    x = np.sort(np.asarray(values, dtype=float))
    uniq, last = np.unique(x, return_index=False, return_counts=True)
    return uniq, np.cumsum(last) / x.size
