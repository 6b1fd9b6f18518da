"""Self-supervised pattern refinement.

A small transformer is pretrained to find which slots of a noise-augmented
pattern belong to the original pattern; at CTR time the frozen network keeps
the top-s slots of each retrieved raw pattern.
"""
import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .embedding import EmbeddingLayer
from .nn import MLP, Module, TransformerEncoder, uniform
from .optim import Adam

log = logging.getLogger(__name__)


@dataclass
class AugmentedPattern:
    items: np.ndarray
    categories: np.ndarray
    membership: np.ndarray
    s: int


def augment_batch(items, categories, noise_items, noise_categories, length: int, rng):
    """Mix ``length - s`` noise records into each row of an ``(P, s)`` pattern batch.

    Noise lands on uniformly chosen slots among the first ``length - 1``; the
    pattern keeps its order and its last record always occupies the final slot.
    Noise records are drawn uniformly from the given pool, which is
    frequency-weighted when the pool is the raw interaction list.
    """
    items, categories = np.atleast_2d(items), np.atleast_2d(categories)
    n_pat, s = items.shape
    if s > length:
        raise ValueError(f"pattern length {s} exceeds augmented length {length}")
    if s < 1:
        raise ValueError("empty pattern")
    n_noise = length - s
    membership = np.ones((n_pat, length), dtype=bool)
    if n_noise:
        if len(noise_items) == 0:
            raise ValueError("noise source is empty")
        keys = rng.random((n_pat, length - 1))
        noise_slots = np.argsort(keys, axis=1)[:, :n_noise]
        np.put_along_axis(membership, noise_slots, False, axis=1)
    src = np.cumsum(membership, axis=1) - 1
    src = np.clip(src, 0, s - 1)
    out_items = np.take_along_axis(items, src, axis=1)
    out_cats = np.take_along_axis(categories, src, axis=1)
    if n_noise:
        pick = rng.integers(0, len(noise_items), size=(n_pat, n_noise))
        out_items[~membership] = np.asarray(noise_items)[pick].reshape(-1)
        out_cats[~membership] = np.asarray(noise_categories)[pick].reshape(-1)
    return out_items, out_cats, membership


def augment_pattern(items, categories, noise_items, noise_categories, length: int, rng) -> AugmentedPattern:
    a_items, a_cats, member = augment_batch(np.asarray(items)[None], np.asarray(categories)[None],
                                            noise_items, noise_categories, length, rng)
    return AugmentedPattern(a_items[0], a_cats[0], member[0], len(items))


class RefinementNetwork(Module):
    def __init__(self, n_items: int, n_categories: int, dim: int, length: int, rng,
                 heads: int = 2, depth: int = 2, hidden: int = 64, dtype=np.float64):
        self.length = length
        self.embedding = EmbeddingLayer(n_items, n_categories, dim, rng, dtype)
        width = self.embedding.width
        self.positions = uniform(rng, (length, width), dtype)
        self.encoder = TransformerEncoder(width, depth, heads, rng, dtype=dtype)
        self.head = MLP([length * width, hidden, length], rng, dtype)
        self.frozen = False

    @classmethod
    def from_state(cls, state: dict, heads: int = 2, hidden: int = 64, dtype=np.float64):
        n_items = state["embedding.item.table"].shape[0] - 1
        n_cats = state["embedding.category.table"].shape[0] - 1
        length, width = state["positions"].shape
        depth = len({k.split(".")[2] for k in state if k.startswith("encoder.blocks.")})
        net = cls(n_items, n_cats, width // 2, length, np.random.default_rng(0), heads, depth, hidden, dtype)
        net.load_state_dict(state)
        return net

    def freeze(self):
        super().freeze()
        self.frozen = True

    def encode(self, items, categories, mask=None):
        """Transformer representation ``(P, length, 2d)`` of an augmented pattern batch."""
        x = ad.add_positional(self.embedding.embed_behavior(items, categories), self.positions)
        if mask is not None:
            mask = np.asarray(mask, bool)
            mask = mask | ~mask.any(axis=-1, keepdims=True)
        return self.encoder(x, mask)

    def refinement_logits(self, encoded):
        *lead, length, width = encoded.shape
        return self.head(ad.reshape(encoded, (*lead, length * width)))

    def __call__(self, items, categories, mask=None):
        return self.refinement_logits(self.encode(items, categories, mask))


def ssl_loss(logits, membership):
    """Mean over rows of ``-sum_{j in pattern} log softmax(o)_j``."""
    membership = np.asarray(membership, dtype=logits.data.dtype)
    rows = int(np.prod(logits.shape[:-1])) if logits.ndim > 1 else 1
    picked = ad.total(ad.mul(ad.log_softmax(logits), membership))
    return ad.scale(picked, -1.0 / rows)


def select_top_s(logits: np.ndarray, mask, s: int):
    """Top-s slot indices per row (ties to smaller index), returned in slot order."""
    key = np.where(np.asarray(mask, bool), logits, -np.inf)
    chosen = np.argsort(-key, axis=-1, kind="stable")[..., :s]
    return np.sort(chosen, axis=-1)


def refine(items, categories, mask, net: RefinementNetwork, s: int):
    """Keep the `s` highest-scoring valid slots of each raw pattern, in chronological order.

    Returns ``(slots, items, categories, mask)`` with trailing dim `s`. Rows
    with fewer than `s` valid slots keep all of them behind leading pads.
    """
    if not net.frozen:
        raise RuntimeError("refine: refinement network must be frozen")
    items, categories, mask = np.asarray(items), np.asarray(categories), np.asarray(mask, bool)
    lead = items.shape[:-1]
    length = items.shape[-1]
    flat = lambda a: a.reshape(-1, length)
    logits = net(flat(items), flat(categories), flat(mask)).data.reshape(*lead, length)
    slots = select_top_s(logits, mask, s)
    take = lambda a: np.take_along_axis(a, slots, axis=-1)
    keep = take(mask)
    return slots, np.where(keep, take(items), 0), np.where(keep, take(categories), 0), keep


def sliding_windows(items, categories, mask, s: int):
    """All fully valid length-s windows from a ``(B, N)`` batch of histories."""
    items, categories, mask = np.asarray(items), np.asarray(categories), np.asarray(mask, bool)
    n = items.shape[-1]
    if s > n:
        return np.zeros((0, s), np.int64), np.zeros((0, s), np.int64)
    starts = np.arange(n - s + 1)
    idx = starts[:, None] + np.arange(s)
    win_ok = mask[:, idx].all(axis=-1)
    return items[:, idx][win_ok], categories[:, idx][win_ok]


@dataclass
class PretrainConfig:
    length: int = 5
    s: int = 3
    dim: int = 16
    batch_size: int = 8196
    epochs: int = 10
    lr: float = 0.001
    holdout: float = 0.1
    heads: int = 2
    depth: int = 2
    hidden: int = 64
    seed: int = 0


def recovery_accuracy(net: RefinementNetwork, items, categories, membership, s: int, batch: int = 4096) -> float:
    """Mean fraction of true slots found among the top-s logits."""
    hits = 0.0
    for start in range(0, len(items), batch):
        sl = slice(start, start + batch)
        logits = net(items[sl], categories[sl]).data
        chosen = select_top_s(logits, np.ones_like(membership[sl]), s)
        hits += np.take_along_axis(membership[sl], chosen, axis=-1).sum()
    return float(hits / (len(items) * s))


def pretrain(items, categories, n_items: int, n_categories: int, config: PretrainConfig,
             noise_items=None, noise_categories=None, dtype=np.float64):
    """Pretrain a refinement network on ``(P, s)`` raw patterns.

    Noise defaults to the pattern records themselves (frequency-weighted).
    Returns ``(frozen_network, metrics)``; metrics has one dict per epoch with
    ``epoch``, ``loss`` and ``recovery`` (held-out recovery accuracy).
    """
    items, categories = np.asarray(items), np.asarray(categories)
    if len(items) == 0:
        raise ValueError("pretrain: empty corpus")
    if items.shape[1] != config.s:
        raise ValueError(f"pretrain: corpus patterns have length {items.shape[1]}, expected s={config.s}")
    if noise_items is None:
        noise_items, noise_categories = items.reshape(-1), categories.reshape(-1)
    rng = np.random.default_rng(config.seed)
    net = RefinementNetwork(n_items, n_categories, config.dim, config.length, rng,
                            config.heads, config.depth, config.hidden, dtype)
    order = rng.permutation(len(items))
    n_hold = int(round(len(items) * config.holdout))
    if n_hold == 0 or n_hold == len(items):
        n_hold = min(max(1, n_hold), len(items) - 1) if len(items) > 1 else 0
    hold, train = order[:n_hold], order[n_hold:]
    eval_rng = np.random.default_rng(config.seed + 1)
    h_items, h_cats, h_member = augment_batch(items[hold], categories[hold], noise_items,
                                              noise_categories, config.length, eval_rng)
    opt = Adam(net.parameters(), lr=config.lr)
    metrics = []
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(train)
        total_loss, seen = 0.0, 0
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start:start + config.batch_size]
            a_items, a_cats, member = augment_batch(items[idx], categories[idx], noise_items,
                                                    noise_categories, config.length, rng)
            with ad.Tape() as tape:
                loss = ssl_loss(net(a_items, a_cats), member)
            opt.step(tape.backward(loss))
            total_loss += float(loss.data) * len(idx)
            seen += len(idx)
        acc = recovery_accuracy(net, h_items, h_cats, h_member, config.s) if n_hold else float("nan")
        metrics.append({"epoch": epoch, "loss": total_loss / seen, "recovery": acc})
        log.info("pretrain epoch %d loss %.4f recovery %.4f", epoch, total_loss / seen, acc)
    net.freeze()
    return net, metrics
