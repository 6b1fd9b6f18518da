"""
What the model looks at
=======================

Train a small DPN on a synthetic log for a few epochs, then follow a single
instance through the forward pass: base attention over the history, the
top-K anchors it picks, the raw windows ending at those anchors, the slots
the frozen refinement network keeps, and how the pattern attention weighs
the survivors.
"""
import logging

import numpy as np

from dpn.model import TrainConfig
from dpn.pipeline import prepare_synthetic, pretrain_on, train_on
from dpn.refinement import PretrainConfig
from dpn.synthetic import SyntheticSpec, generate_synthetic

logging.basicConfig(level=logging.INFO, format="%(message)s")
np.set_printoptions(precision=3, suppress=True)

# A small world: items 1, 2, 3 form the planted template; seeing 1 then 2
# in the history makes a click on 3 likely.
spec = SyntheticSpec(n_users=8000, n_items=200, n_categories=10)
ds = generate_synthetic(spec, seed=0)
prep = prepare_synthetic(ds, seq_len=30, seed=0)
print(f"{len(prep.train)} training and {len(prep.test)} test impressions")

# The refinement network is pretrained on windows of the training histories
# and frozen before CTR training.
sprm, curve = pretrain_on(prep, PretrainConfig(batch_size=512, epochs=5, seed=0), max_patterns=50_000)
print("pretraining recovery per epoch:", [round(m["recovery"], 3) for m in curve])

model, log = train_on(prep, TrainConfig(seq_len=30, epochs=4, seed=0), sprm)
print("test AUC per epoch:", [round(r["auc"], 4) for r in log if r["split"] == "test"])

# Two impressions of the template tail: one whose history holds the prefix in
# order (true click probability 0.9), one holding the swapped decoy (0.1).
v = prep.vocab
c = v.items[spec.templates[0].items[-1]]
tail = prep.test.target_item == c
decode = lambda ids: [v.decode_item(int(i)) for i in ids if i]


def show(row):
    one = prep.test.take([row])
    probs, info = model.forward(one, trace=True)
    valid = one.mask[0]
    print("\nhistory (raw ids):", decode(one.items[0][valid]))
    print("target:", v.decode_item(int(one.target_item[0])), " label:", int(one.label[0]),
          " true click prob:", one.click_prob[0], " predicted:", round(float(probs.data[0, 0]), 4))
    print("base attention over valid positions:")
    print(info["attention"][0][valid])
    print("anchor (position, item) -> raw window -> refined pattern, pattern-attention weight")
    for j, pos in enumerate(info["anchors"][0]):
        if info["anchor_valid"][0, j]:
            print(f"  ({pos:2d}, {v.decode_item(int(one.items[0, pos])):4d})",
                  decode(info["raw_items"][0, j]), "->", decode(info["refined_items"][0, j]),
                  f"w={info['tpa'][0, j]:.3f}")


for lift in (spec.templates[0].lift, spec.base_rate):
    rows = np.flatnonzero(tail & np.isclose(prep.test.click_prob, lift) & (prep.test.items == v.items[1]).any(1))
    if len(rows):
        show(int(rows[0]))
