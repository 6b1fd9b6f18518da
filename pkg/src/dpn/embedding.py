"""Item and category embedding tables; a behavior is the concat of both rows."""
import numpy as np

from . import autodiff as ad
from .nn import Embedding, Module


class EmbeddingLayer(Module):
    def __init__(self, n_items: int, n_categories: int, dim: int, rng, dtype=np.float64):
        # +1 for the padding row
        self.item = Embedding(n_items + 1, dim, rng, dtype)
        self.category = Embedding(n_categories + 1, dim, rng, dtype)
        self.dim = dim

    @property
    def width(self) -> int:
        return 2 * self.dim

    def embed_behavior(self, item_ids, category_ids):
        """``[E_item[i]; E_cat[c]]`` for any array of ids (broadcast over leading dims)."""
        item_ids, category_ids = np.asarray(item_ids), np.asarray(category_ids)
        for ids, table, what in ((item_ids, self.item, "item"), (category_ids, self.category, "category")):
            if ids.size and (ids.min() < 0 or ids.max() >= table.table.shape[0]):
                raise ValueError(f"{what} id out of range for table with {table.table.shape[0]} rows")
        return ad.concat([self.item(item_ids), self.category(category_ids)])

    def embed_sequence(self, items, categories, mask):
        """Embed a ``(..., N)`` history. Pad rows come out zero via the pinned row."""
        return self.embed_behavior(items, categories), np.asarray(mask, dtype=bool)
