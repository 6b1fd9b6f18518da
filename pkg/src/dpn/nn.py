"""Parameterized layers assembled from autodiff primitives."""
import math
from typing import Iterator, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

INIT_RANGE = 0.05
PRELU_INIT = 0.25


class Module:
    """Container that discovers parameters in attributes, lists and submodules."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        # underscore attributes hold borrowed modules (e.g. a frozen network)
        for key, value in vars(self).items():
            if not key.startswith("_"):
                yield from _walk(value, f"{prefix}{key}")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data = value.astype(p.data.dtype, copy=True)

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False
            p.node_id = None


def _walk(value, name):
    if isinstance(value, Tensor):
        if value.name == "param":
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{name}.{i}")


def parameter(data, dtype=np.float64) -> Tensor:
    t = Tensor(np.asarray(data, dtype=dtype), requires_grad=True)
    t.name = "param"
    return t


def uniform(rng: np.random.Generator, shape, dtype=np.float64) -> Tensor:
    return parameter(rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape), dtype)


class Embedding(Module):
    """Lookup table whose row 0 is the padding vector (zero, never updated)."""

    def __init__(self, num: int, dim: int, rng, dtype=np.float64):
        table = rng.uniform(-INIT_RANGE, INIT_RANGE, size=(num, dim))
        table[0] = 0.0
        self.table = parameter(table, dtype)

    def __call__(self, ids):
        return ad.gather(self.table, ids, padding_idx=0)


class Affine(Module):
    def __init__(self, n_in: int, n_out: int, rng, dtype=np.float64):
        self.weight = uniform(rng, (n_in, n_out), dtype)
        self.bias = parameter(np.zeros(n_out), dtype)

    def __call__(self, x):
        return ad.affine(x, self.weight, self.bias)


class PReLU(Module):
    def __init__(self, dtype=np.float64):
        self.slope = parameter([PRELU_INIT], dtype)

    def __call__(self, x):
        return ad.prelu(x, self.slope)


class MLP(Module):
    """Affine layers with PReLU between them; the last layer stays linear."""

    def __init__(self, widths: Sequence[int], rng, dtype=np.float64):
        self.layers = [Affine(a, b, rng, dtype) for a, b in zip(widths[:-1], widths[1:])]
        self.acts = [PReLU(dtype) for _ in self.layers[:-1]]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.acts):
                x = self.acts[i](x)
        return x


class LayerNorm(Module):
    def __init__(self, width: int, dtype=np.float64):
        self.scale = parameter(np.ones(width), dtype)
        self.shift = parameter(np.zeros(width), dtype)

    def __call__(self, x):
        return ad.layer_norm(x, self.scale, self.shift)


class SelfAttention(Module):
    """Multi-head scaled dot-product self-attention with key padding mask."""

    def __init__(self, width: int, heads: int, rng, dtype=np.float64):
        if width % heads:
            raise ValueError(f"width {width} not divisible by {heads} heads")
        self.heads = heads
        self.query = Affine(width, width, rng, dtype)
        self.key = Affine(width, width, rng, dtype)
        self.value = Affine(width, width, rng, dtype)
        self.out = Affine(width, width, rng, dtype)

    def _split(self, x):
        *lead, length, width = x.shape
        x = ad.reshape(x, (*lead, length, self.heads, width // self.heads))
        n = len(lead)
        return ad.transpose(x, (*range(n), n + 1, n, n + 2))

    def __call__(self, x, mask=None):
        *lead, length, width = x.shape
        q, k, v = self._split(self.query(x)), self._split(self.key(x)), self._split(self.value(x))
        n = len(lead)
        kt = ad.transpose(k, (*range(n + 1), n + 2, n + 1))
        scores = ad.scale(ad.matmul(q, kt), 1.0 / math.sqrt(width // self.heads))
        if mask is not None:
            mask = np.broadcast_to(np.asarray(mask, bool)[..., None, None, :], scores.shape)
        ctx = ad.matmul(ad.softmax(scores, mask), v)
        ctx = ad.transpose(ctx, (*range(n), n + 1, n, n + 2))
        return self.out(ad.reshape(ctx, (*lead, length, width)))


class TransformerBlock(Module):
    """Post-norm block: ``H = LN(X + SA(X))``, ``X' = LN(H + FFN(H))``."""

    def __init__(self, width: int, heads: int, ffn_width: int, rng, dtype=np.float64):
        self.attn = SelfAttention(width, heads, rng, dtype)
        self.norm1 = LayerNorm(width, dtype)
        self.ffn = MLP([width, ffn_width, width], rng, dtype)
        self.norm2 = LayerNorm(width, dtype)

    def __call__(self, x, mask=None):
        h = self.norm1(ad.add(x, self.attn(x, mask)))
        return self.norm2(ad.add(h, self.ffn(h)))


class TransformerEncoder(Module):
    def __init__(self, width: int, depth: int, heads: int, rng, ffn_width: Optional[int] = None,
                 dtype=np.float64):
        ffn_width = ffn_width or 4 * width
        self.blocks = [TransformerBlock(width, heads, ffn_width, rng, dtype) for _ in range(depth)]

    def __call__(self, x, mask=None):
        for block in self.blocks:
            x = block(x, mask)
        return x
