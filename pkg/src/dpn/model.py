"""Deep Pattern Network: base attention, pattern retrieval/refinement and pattern attention."""
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .attention import AttentionUnit, interest_vector
from .data import Batch
from .embedding import EmbeddingLayer
from .nn import MLP, Module, TransformerEncoder, uniform
from .refinement import RefinementNetwork, refine
from .retrieval import all_anchors, batch_extract, batch_top_k

PROB_CLAMP = 1e-7


@dataclass
class TrainConfig:
    seq_len: int = 100
    dim: int = 16
    top_k: int = 5
    pattern_len: int = 5
    refined_len: int = 3
    batch_size: int = 256
    lr: float = 0.001
    epochs: int = 5
    no_tprm: bool = False
    no_sprm: bool = False
    no_tpa: bool = False
    base_only: bool = False
    attention_hidden: tuple = (64, 32)
    head_hidden: tuple = (200, 80)
    heads: int = 2
    depth: int = 2
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def masked_mean(x, mask):
    """Mean over the slot axis (-2) restricted to valid slots; empty rows give zeros."""
    mask = np.asarray(mask, dtype=x.data.dtype)
    count = np.maximum(mask.sum(axis=-1, keepdims=True), 1.0)
    summed = ad.total(ad.mul(x, mask[..., None]), axis=-2)
    return ad.mul(summed, 1.0 / count)


class PatternEncoder(Module):
    """Transformer over a pattern's embedded slots, mean-pooled to one vector.

    Positional embeddings are right-aligned so the final slot (the anchor or
    the target) always sees the same position vector regardless of length.
    """

    def __init__(self, width: int, max_len: int, rng, heads: int = 2, depth: int = 2, dtype=np.float64):
        self.max_len = max_len
        self.positions = uniform(rng, (max_len, width), dtype)
        self.encoder = TransformerEncoder(width, depth, heads, rng, dtype=dtype)

    def __call__(self, emb, mask):
        *lead, length, width = emb.shape
        flat = ad.reshape(emb, (-1, length, width))
        fmask = np.asarray(mask, bool).reshape(-1, length)
        if length > self.max_len:
            raise ad.ShapeError(f"pattern length {length} exceeds encoder capacity {self.max_len}")
        pos = self.positions if length == self.max_len else _tail_rows(self.positions, length)
        x = ad.add_positional(flat, pos)
        attn_mask = fmask | ~fmask.any(axis=-1, keepdims=True)
        pooled = masked_mean(self.encoder(x, attn_mask), fmask)
        return ad.reshape(pooled, (*lead, width))


def _tail_rows(table, n):
    """Last `n` rows of a parameter table, differentiably."""
    rows = table.shape[0]
    select = np.zeros((n, rows), dtype=table.data.dtype)
    select[np.arange(n), rows - n + np.arange(n)] = 1.0
    return ad.matmul(select, table)


def build_target_pattern(items, categories, mask, target_item, target_category, s: int):
    """The s-1 most recent behaviors followed by the target; shortfall stays padded."""
    items, categories, mask = np.asarray(items), np.asarray(categories), np.asarray(mask, bool)
    lead = items.shape[:-1]
    t_items = np.asarray(target_item).reshape(*lead, 1)
    t_cats = np.asarray(target_category).reshape(*lead, 1)
    keep = s - 1
    start = max(items.shape[-1] - keep, 0)
    h_mask = mask[..., start:] if keep else mask[..., :0]
    h_items = np.where(h_mask, items[..., start:], 0) if keep else items[..., :0]
    h_cats = np.where(h_mask, categories[..., start:], 0) if keep else categories[..., :0]
    if keep > items.shape[-1]:
        pad = keep - items.shape[-1]
        widths = [(0, 0)] * len(lead) + [(pad, 0)]
        h_items, h_cats, h_mask = (np.pad(a, widths) for a in (h_items, h_cats, h_mask))
    return (np.concatenate([h_items, t_items], axis=-1),
            np.concatenate([h_cats, t_cats], axis=-1),
            np.concatenate([h_mask, np.ones_like(t_items, dtype=bool)], axis=-1))


def tpa_aggregate(unit: AttentionUnit, target_repr, pattern_reprs, valid=None):
    """Pattern-level interest: attention of the target pattern over K pattern vectors."""
    if pattern_reprs.shape[-2] == 0:
        raise ValueError("tpa_aggregate: no patterns")
    if valid is None:
        valid = np.ones(pattern_reprs.shape[:-1], dtype=bool)
    return interest_vector(unit, target_repr, pattern_reprs, valid)


def click_probability(probs):
    """Column 0 of the two-way softmax output."""
    pick = np.array([[1.0], [0.0]], dtype=probs.data.dtype)
    out = ad.matmul(probs, pick)
    return ad.reshape(out, out.shape[:-1])


def ctr_loss(yhat, y):
    """Binary cross-entropy averaged over the batch, with clamped probabilities."""
    y = np.asarray(y, dtype=yhat.data.dtype)
    p = ad.clip(yhat, PROB_CLAMP, 1.0 - PROB_CLAMP)
    q = ad.clip(ad.sub(1.0, yhat), PROB_CLAMP, 1.0 - PROB_CLAMP)
    ll = ad.add(ad.mul(ad.log(p), y), ad.mul(ad.log(q), 1.0 - y))
    return ad.scale(ad.total(ll), -1.0 / len(y))


class DPN(Module):
    def __init__(self, n_items: int, n_categories: int, config: TrainConfig,
                 sprm: Optional[RefinementNetwork] = None, dtype=np.float64):
        if not (config.base_only or config.no_sprm) and sprm is None:
            raise ValueError("DPN needs a pretrained refinement network; run `pretrain` first "
                             "or disable refinement (no_sprm)")
        if sprm is not None and not sprm.frozen:
            raise ValueError("refinement network must be frozen before CTR training")
        rng = np.random.default_rng(config.seed)
        self.config = config
        self._sprm = sprm
        c = config
        self.embedding = EmbeddingLayer(n_items, n_categories, c.dim, rng, dtype)
        w = self.embedding.width
        self.base_attention = AttentionUnit(w, rng, c.attention_hidden, dtype)
        n_feats = 3
        if not c.base_only:
            max_len = max(c.refined_len, c.pattern_len) if c.no_sprm else c.refined_len
            self.pattern_encoder = PatternEncoder(w, max_len, rng, c.heads, c.depth, dtype)
            if not c.no_tpa:
                self.tpa = AttentionUnit(w, rng, c.attention_hidden, dtype)
            n_feats = 4
        self.head = MLP([n_feats * w, *c.head_hidden, 2], rng, dtype)

    @property
    def sprm(self):
        return self._sprm

    def retrieve(self, batch: Batch, weights: np.ndarray):
        """Raw patterns ``(B, K', l)`` ending at retrieved anchors."""
        c = self.config
        if c.no_tprm:
            idx, valid = all_anchors(batch.mask)
        else:
            idx, valid = batch_top_k(weights, batch.mask, c.top_k)
        items, cats, mask = batch_extract(batch.items, batch.categories, batch.mask, idx, c.pattern_len, valid)
        return idx, valid, items, cats, mask

    def forward(self, batch: Batch, trace: bool = False):
        """Two-way softmax output ``(B, 2)``; with `trace`, also a dict of intermediates."""
        c = self.config
        seq, mask = self.embedding.embed_sequence(batch.items, batch.categories, batch.mask)
        e_t = self.embedding.embed_behavior(batch.target_item, batch.target_category)
        v_t, weights = interest_vector(self.base_attention, e_t, seq, mask)
        hist_sum = ad.total(ad.mul(seq, mask[..., None].astype(seq.data.dtype)), axis=-2)
        info = {"attention": weights.data}
        feats = [e_t, hist_sum, v_t]
        if not c.base_only:
            idx, valid, p_items, p_cats, p_mask = self.retrieve(batch, weights.data)
            info.update(anchors=idx, anchor_valid=valid, raw_items=p_items, raw_mask=p_mask)
            if not c.no_sprm:
                slots, p_items, p_cats, p_mask = refine(p_items, p_cats, p_mask, self._sprm, c.refined_len)
                info.update(refined_slots=slots, refined_items=p_items, refined_mask=p_mask)
            valid = valid & p_mask.any(axis=-1)
            reprs = self.pattern_encoder(self.embedding.embed_behavior(p_items, p_cats), p_mask)
            t_items, t_cats, t_mask = build_target_pattern(batch.items, batch.categories, batch.mask,
                                                           batch.target_item, batch.target_category,
                                                           c.refined_len)
            t_repr = self.pattern_encoder(self.embedding.embed_behavior(t_items, t_cats), t_mask)
            if c.no_tpa:
                v_p = ad.total(ad.mul(reprs, valid[..., None].astype(reprs.data.dtype)), axis=-2)
            else:
                v_p, tpa_w = tpa_aggregate(self.tpa, t_repr, reprs, valid)
                info["tpa"] = tpa_w.data
            feats.append(ad.mul(v_p, t_repr))
        probs = ad.softmax(self.head(ad.concat(feats)))
        return (probs, info) if trace else probs

    def predict(self, batch: Batch) -> np.ndarray:
        """Click probabilities, no tape."""
        return self.forward(batch).data[:, 0]
