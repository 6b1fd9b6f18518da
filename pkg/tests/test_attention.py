import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpn import autodiff as ad
from dpn.attention import AttentionUnit, attention_logits, interest_vector
from dpn.autodiff import Tape, Tensor
from dpn.embedding import EmbeddingLayer

from oracles import numeric_grad, rel_err


def perturbed_unit(width, seed):
    rng = np.random.default_rng(seed)
    unit = AttentionUnit(width, rng)
    for p in unit.parameters():
        p.data = p.data + rng.normal(scale=0.2, size=p.shape)
    return unit, rng


# embedding


def test_embedding_width_and_padding():
    layer = EmbeddingLayer(10, 4, 16, np.random.default_rng(0))
    out = layer.embed_behavior(np.array([0, 3]), np.array([0, 2])).data
    assert out.shape == (2, 32)
    np.testing.assert_array_equal(out[0], 0.0)


def test_shared_category_gives_identical_second_half():
    layer = EmbeddingLayer(10, 4, 3, np.random.default_rng(0))
    out = layer.embed_behavior(np.array([1, 2]), np.array([4, 4])).data
    np.testing.assert_array_equal(out[0, 3:], out[1, 3:])


def test_embedding_rejects_out_of_range():
    layer = EmbeddingLayer(10, 4, 3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        layer.embed_behavior(np.array([11]), np.array([1]))


def test_all_pad_sequence_and_default_shape():
    layer = EmbeddingLayer(200, 20, 16, np.random.default_rng(0))
    items = np.zeros((1, 100), np.int64)
    seq, mask = layer.embed_sequence(items, items, items > 0)
    assert seq.shape == (1, 100, 32)
    assert not seq.data.any() and not mask.any()


def test_slot_gradient_touches_only_gathered_rows():
    layer = EmbeddingLayer(8, 3, 2, np.random.default_rng(0))
    items, cats = np.array([[1, 2, 3, 4, 5]]), np.array([[1, 1, 2, 2, 3]])
    w = np.zeros((1, 5, 4))
    w[0, 3] = np.random.default_rng(1).normal(size=4)
    with Tape() as tape:
        seq, _ = layer.embed_sequence(items, cats, items > 0)
        loss = ad.total(ad.mul(seq, w))
    g = tape.backward(loss)
    gi, gc = g[layer.item.table.node_id], g[layer.category.table.node_id]
    assert set(np.flatnonzero(np.abs(gi).sum(1))) == {4}
    assert set(np.flatnonzero(np.abs(gc).sum(1))) == {2}

    def f():
        return float(ad.total(ad.mul(layer.embed_sequence(items, cats, items > 0)[0], w)).data)

    assert rel_err(gi, numeric_grad(f, layer.item.table.data)) <= 1e-6


def test_repeated_item_gradient_is_summed():
    layer = EmbeddingLayer(5, 2, 2, np.random.default_rng(0))
    items = np.array([2, 2, 3])
    proj = np.random.default_rng(2).normal(size=(3, 4))

    def loss():
        return ad.total(ad.mul(layer.embed_behavior(items, np.array([1, 1, 2])), proj))

    with Tape() as tape:
        out = loss()
    g = tape.backward(out)[layer.item.table.node_id]
    np.testing.assert_allclose(g[2], proj[0, :2] + proj[1, :2])
    assert rel_err(g, numeric_grad(lambda: float(loss().data), layer.item.table.data)) <= 1e-8


# attention


def test_equal_query_and_keys_give_equal_logits():
    unit, rng = perturbed_unit(4, 0)
    q = rng.normal(size=(1, 4))
    keys = np.repeat(q[:, None, :], 6, axis=1)
    logits = attention_logits(unit, Tensor(q), Tensor(keys)).data
    np.testing.assert_allclose(logits, logits[0, 0], rtol=0, atol=0)


def test_width_mismatch_rejected():
    unit, _ = perturbed_unit(4, 0)
    with pytest.raises(ad.ShapeError):
        unit.logits(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 2, 4))))


def test_single_key_and_identical_keys():
    unit, rng = perturbed_unit(4, 1)
    q = Tensor(rng.normal(size=(2, 4)))
    keys = rng.normal(size=(2, 3, 4))
    mask = np.array([[0, 0, 1], [1, 1, 1]], bool)
    keys[1] = keys[1, 0]
    v, w = interest_vector(unit, q, Tensor(keys), mask)
    np.testing.assert_allclose(v.data[0], keys[0, 2], atol=1e-15)
    np.testing.assert_allclose(v.data[1], keys[1, 0], atol=1e-12)
    np.testing.assert_array_equal(w.data[0], [0, 0, 1])


def test_all_masked_rejected():
    unit, _ = perturbed_unit(4, 0)
    with pytest.raises(ValueError):
        interest_vector(unit, Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 2, 4))), np.zeros((1, 2), bool))


def mlp_logit_oracle(unit, q, k):
    """Scalar MLP evaluation written out with plain numpy."""
    x = np.concatenate([q, k, q - k, q * k])
    for i, layer in enumerate(unit.mlp.layers):
        x = x @ layer.weight.data + layer.bias.data
        if i < len(unit.mlp.acts):
            a = unit.mlp.acts[i].slope.data[0]
            x = np.where(x > 0, x, a * x)
    return float(x[0])


def test_interest_vector_matches_direct_summation():
    for seed in range(20):
        unit, rng = perturbed_unit(6, seed)
        q = rng.normal(size=6)
        keys = rng.normal(size=(7, 6))
        mask = rng.random(7) < 0.7
        mask[3] = True
        v, w = interest_vector(unit, Tensor(q[None]), Tensor(keys[None]), mask[None])
        logits = np.array([mlp_logit_oracle(unit, q, k) for k in keys])
        e = np.where(mask, np.exp(logits - logits[mask].max()), 0.0)
        want_w = e / e.sum()
        np.testing.assert_allclose(w.data[0], want_w, atol=1e-9)
        np.testing.assert_allclose(v.data[0], want_w @ keys, atol=1e-9)


def test_attention_gradient_matches_finite_differences():
    unit, rng = perturbed_unit(4, 3)
    q = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
    keys = Tensor(rng.normal(size=(2, 5, 4)), requires_grad=True)
    mask = np.array([[1, 1, 1, 0, 1], [0, 1, 1, 1, 1]], bool)
    proj = rng.normal(size=(2, 4))

    def loss():
        return ad.total(ad.mul(interest_vector(unit, q, keys, mask)[0], proj))

    with Tape() as tape:
        out = loss()
    grads = tape.backward(out)
    for p in [q, keys, *unit.parameters()]:
        assert rel_err(ad.grad_of(grads, p), numeric_grad(lambda: float(loss().data), p.data)) <= 1e-4


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10**6))
def test_weights_distribution_convex_hull_and_mask_invariance(n, seed):
    unit, rng = perturbed_unit(4, seed % 7)
    q = Tensor(rng.normal(size=(1, 4)))
    keys = rng.normal(size=(1, n, 4))
    mask = rng.random((1, n)) < 0.7
    mask[0, -1] = True
    v, w = interest_vector(unit, q, Tensor(keys), mask)
    assert np.all(w.data >= 0)
    assert abs(w.data.sum() - 1.0) <= 1e-9
    valid = keys[0][mask[0]]
    assert np.all(v.data[0] >= valid.min(0) - 1e-12) and np.all(v.data[0] <= valid.max(0) + 1e-12)
    # appending a masked position changes nothing
    extra = np.concatenate([keys, rng.normal(size=(1, 1, 4))], axis=1)
    v2, w2 = interest_vector(unit, q, Tensor(extra), np.concatenate([mask, [[False]]], axis=1))
    np.testing.assert_allclose(v2.data, v.data, atol=1e-15)
    np.testing.assert_allclose(w2.data[:, :n], w.data, atol=1e-15)
