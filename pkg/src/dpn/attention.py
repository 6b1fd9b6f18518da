"""DIN-style target attention: ``a(q, k) = softmax(MLP([q; k; q - k; q * k]))``."""
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .nn import MLP, Module


class AttentionUnit(Module):
    def __init__(self, width: int, rng, hidden: Sequence[int] = (64, 32), dtype=np.float64):
        self.width = width
        self.mlp = MLP([4 * width, *hidden, 1], rng, dtype)

    def logits(self, query, keys):
        """Raw scores ``(..., N)`` for query ``(..., w)`` against keys ``(..., N, w)``."""
        if query.shape[-1] != keys.shape[-1] or query.shape[-1] != self.width:
            raise ad.ShapeError(f"attention: query width {query.shape} vs key width {keys.shape}"
                                f" (unit width {self.width})")
        q = ad.broadcast_to(ad.reshape(query, (*query.shape[:-1], 1, query.shape[-1])), keys.shape)
        feats = ad.concat([q, keys, ad.sub(q, keys), ad.mul(q, keys)])
        out = self.mlp(feats)
        return ad.reshape(out, out.shape[:-1])


def attention_logits(unit: AttentionUnit, query, keys, mask=None):
    """Per-position logits ``(..., N)``.

    Logits stay finite everywhere; `mask` is only checked here; the softmax
    that consumes the logits treats masked positions as ``-inf``.
    """
    if mask is not None and np.shape(mask) != keys.shape[:-1]:
        raise ad.ShapeError(f"attention: mask shape {np.shape(mask)} vs keys {keys.shape}")
    return unit.logits(query, keys)


def interest_vector(unit: AttentionUnit, query, keys, mask):
    """Weighted sum of keys under masked softmax attention.

    Returns ``(v, weights)`` with ``v`` of shape ``(..., w)`` and weights ``(..., N)``.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("interest_vector: every position of some row is masked")
    weights = ad.softmax(unit.logits(query, keys), mask)
    w3 = ad.reshape(weights, (*weights.shape, 1))
    return ad.total(ad.mul(w3, keys), axis=-2), weights
