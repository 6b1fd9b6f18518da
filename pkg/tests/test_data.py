import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpn.data import (InteractionRecord, batch_iter, build_vocab, impressions_to_instances, ingest_log,
                      make_instances, make_sequence, split_by_user, stack, write_log)
from dpn.synthetic import (SyntheticSpec, Template, generate_synthetic, prefix_in_order, read_ground_truth)


def rec(u, i, c, t):
    return InteractionRecord(u, i, c, t)


def test_ingest_skips_malformed_and_sorts(tmp_path):
    p = tmp_path / "log.csv"
    p.write_text("user,item,category,timestamp\n1,10,5,30\n1,x,5,20\n1,11,6,10\n")
    records, skipped = ingest_log(p)
    assert skipped == 1
    assert [r.item for r in records] == [11, 10]


def test_ingest_column_map_and_errors(tmp_path):
    p = tmp_path / "log.csv"
    p.write_text("ts,uid,iid,cid\n5,1,2,3\n")
    records, _ = ingest_log(p, {"user": "uid", "item": "iid", "category": "cid", "timestamp": "ts"})
    assert records == [rec(1, 2, 3, 5)]
    with pytest.raises(ValueError, match="missing column"):
        ingest_log(p)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(ValueError):
        ingest_log(empty)


def test_write_then_ingest_round_trip(tmp_path):
    rs = [rec(2, 9, 1, 100), rec(2, 8, 1, 200), rec(1, 9, 1, 50)]
    write_log(tmp_path / "l.csv", rs)
    back, skipped = ingest_log(tmp_path / "l.csv")
    assert skipped == 0 and back == rs


def test_vocab_first_appearance():
    v = build_vocab([rec(1, 5, 9, 0), rec(1, 7, 9, 1), rec(2, 5, 9, 2)])
    assert v.items == {5: 1, 7: 2} and v.n_items == 2
    assert v.categories == {9: 1}
    assert v.decode_item(2) == 7
    assert build_vocab([rec(1, 5, 9, 0), rec(1, 7, 9, 1)]).items == v.items
    with pytest.raises(ValueError):
        build_vocab([])


def test_make_sequence_left_pads():
    s = make_sequence([1, 2], [3, 4], 5)
    np.testing.assert_array_equal(s.items, [0, 0, 0, 1, 2])
    np.testing.assert_array_equal(s.mask, [0, 0, 0, 1, 1])
    t = make_sequence(range(1, 8), range(1, 8), 3)
    np.testing.assert_array_equal(t.items, [5, 6, 7])
    assert t.length == 3


def test_make_instances_leave_one_out():
    rs = [rec(1, 10, 1, 0), rec(1, 11, 2, 1), rec(1, 12, 1, 2), rec(2, 10, 1, 0)]
    v = build_vocab(rs)
    inst, skipped = make_instances(rs, v, 5, neg_ratio=1, seed=0)
    assert skipped == 1
    pos, neg = inst
    assert pos.label == 1 and pos.target_item == v.items[12]
    assert pos.sequence.mask.sum() == 2 and (pos.sequence.items[:3] == 0).all()
    assert neg.label == 0 and neg.target_item != pos.target_item
    again, _ = make_instances(rs, v, 5, neg_ratio=1, seed=0)
    assert [x.target_item for x in again] == [x.target_item for x in inst]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 6), st.integers(1, 30), st.integers(1, 4)), min_size=2, max_size=80),
       st.integers(1, 8), st.integers(0, 1000))
def test_instances_round_trip_and_mask(rows, n, seed):
    rs = [rec(u, i, c, t) for t, (u, i, c) in enumerate(rows)]
    v = build_vocab(rs)
    inst, _ = make_instances(rs, v, n, neg_ratio=1, seed=seed)
    per_user = {}
    for r in rs:
        per_user.setdefault(r.user, []).append(r)
    for x in inst:
        hist = per_user[x.user][:-1]
        assert x.sequence.mask.sum() == min(len(hist), n)
        valid = x.sequence.items[x.sequence.mask]
        assert [v.decode_item(int(i)) for i in valid] == [r.item for r in hist][-n:]
        assert (x.sequence.items[~x.sequence.mask] == 0).all()
        if x.label == 0:
            assert x.target_item != v.items[per_user[x.user][-1].item]


def test_batch_iter_sizes_and_seeding():
    rs = [rec(u, u + 1, 1, 0) for u in range(10)] + [rec(u, u + 2, 1, 1) for u in range(10)]
    v = build_vocab(rs)
    inst, _ = make_instances(rs, v, 3, neg_ratio=0)
    assert [len(b) for b in batch_iter(inst, 4)] == [4, 4, 2]
    a = np.concatenate([b.user for b in batch_iter(inst, 4, seed=1)])
    b = np.concatenate([b.user for b in batch_iter(inst, 4, seed=1)])
    c = np.concatenate([b.user for b in batch_iter(inst, 4, seed=2)])
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    with pytest.raises(ValueError):
        next(batch_iter(inst, 0))


def test_split_by_user_is_disjoint():
    rs = [rec(u, i, 1, i) for u in range(1, 41) for i in range(1, 4)]
    v = build_vocab(rs)
    inst, _ = make_instances(rs, v, 3)
    tr, te = split_by_user(inst, 0.25, seed=0)
    assert {x.user for x in tr}.isdisjoint({x.user for x in te})
    assert len({x.user for x in te}) == 10


def test_impressions_use_history_before_timestamp():
    rs = [rec(1, 5, 1, 10), rec(1, 6, 1, 20), rec(1, 7, 1, 30)]
    imps = [{"user": 1, "item": 9, "category": 1, "timestamp": 25, "label": 1, "click_prob": 0.5}]
    v = build_vocab(rs + [rec(1, 9, 1, 25)])
    (x,) = impressions_to_instances(rs, imps, v, 4)
    assert [v.decode_item(int(i)) for i in x.sequence.items[x.sequence.mask]] == [5, 6]
    assert x.click_prob == 0.5


# synthetic generator


def test_prefix_in_order():
    assert prefix_in_order([4, 1, 9, 2, 3], (1, 2, 3))
    assert not prefix_in_order([2, 1, 3], (1, 2, 3))


def test_synthetic_is_deterministic(tmp_path):
    spec = SyntheticSpec(n_users=200)
    generate_synthetic(spec, seed=3).write(tmp_path / "a")
    generate_synthetic(spec, seed=3).write(tmp_path / "b")
    for f in ("interactions.csv", "impressions.csv", "ground_truth.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    templates, base = read_ground_truth(tmp_path / "a" / "ground_truth.csv")
    assert templates == spec.templates and base == spec.base_rate


def test_synthetic_validation():
    with pytest.raises(ValueError):
        generate_synthetic(SyntheticSpec(n_users=5, templates=[Template((1, 2, 3), lift=1.5)]))
    with pytest.raises(ValueError):
        generate_synthetic(SyntheticSpec(n_users=5, n_items=10, templates=[Template((1, 2, 30))]))
    with pytest.raises(ValueError):
        generate_synthetic(SyntheticSpec(n_users=5, templates=[Template((1, 2, 3)), Template((3, 4, 5))]))


def test_synthetic_item_category_is_a_function():
    ds = generate_synthetic(SyntheticSpec(n_users=300), seed=0)
    seen = {}
    for r in ds.records:
        assert seen.setdefault(r.item, r.category) == r.category


def test_synthetic_calibration_at_20k_users():
    ds = generate_synthetic(SyntheticSpec(n_users=20000), seed=11)
    hist = {}
    for r in ds.records:
        hist.setdefault(r.user, []).append(r.item)
    on, off = [], []
    for imp in ds.impressions:
        if imp["item"] != 3:
            continue
        (on if prefix_in_order(hist[imp["user"]], (1, 2, 3)) else off).append(imp["label"])
    assert abs(np.mean(on) - 0.9) <= 0.02
    assert abs(np.mean(off) - 0.1) <= 0.02
    other = [imp["label"] for imp in ds.impressions if imp["item"] != 3]
    assert abs(np.mean(other) - 0.1) <= 0.02


def test_lift_equal_to_base_gives_independent_labels():
    ds = generate_synthetic(SyntheticSpec(n_users=500, templates=[Template((1, 2, 3), lift=0.1)]), seed=0)
    assert {imp["click_prob"] for imp in ds.impressions} == {0.1}


def test_stack_shapes():
    rs = [rec(1, 1, 1, 0), rec(1, 2, 1, 1), rec(2, 1, 1, 0), rec(2, 3, 2, 1)]
    v = build_vocab(rs)
    inst, _ = make_instances(rs, v, 4)
    b = stack(inst)
    assert b.items.shape == (4, 4) and b.mask.dtype == bool and len(b) == 4
