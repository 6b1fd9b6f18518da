"""
Measuring pattern dependence with plug-in information
=====================================================

Two quantities, both in nats and both estimated from counts:

* IntraPMI (total correlation) of a pattern: how much more often its items
  are co-consumed by the same users than independence would predict,
  normalized to [0, 1].
* Conditional MI between a history pattern and the click, restricted to
  impressions of one target pattern.
"""
import numpy as np

from dpn import analysis
from dpn.metrics import intra_pmi, total_correlation
from dpn.pipeline import prepare_synthetic
from dpn.synthetic import SyntheticSpec, generate_synthetic

# Three binary variables: independent, then perfectly coupled.
rng = np.random.default_rng(0)
independent = rng.integers(0, 2, size=(10_000, 3))
coupled = np.repeat(rng.integers(0, 2, size=(10_000, 1)), 3, axis=1)
print("independent coins: TC = %.4f nats, normalized %.3f" % total_correlation(independent))
print("identical coins:   TC = %.4f nats, normalized %.3f (2 ln 2 = %.4f)"
      % (*total_correlation(coupled), 2 * np.log(2)))

spec = SyntheticSpec(n_users=8000)
ds = generate_synthetic(spec, seed=0)
users = {}
for r in ds.records:
    users.setdefault(r.user, set()).add(r.item)
sets = list(users.values())
print("\nIntraPMI of the planted template (1, 2, 3): %.4f nats, normalized %.3f" % intra_pmi((1, 2, 3), sets))
print("IntraPMI of three unrelated items (500, 600, 700): %.4f nats, normalized %.3f"
      % intra_pmi((500, 600, 700), sets))

# Conditional MI: rows are ordered item pairs, columns the target pattern.
prep = prepare_synthetic(ds, seq_len=30, seed=0)
pattern_sets = analysis.template_pattern_sets(prep.test, spec.templates, prep.vocab)
mats = analysis.cmi_matrices(pattern_sets, prep.test, min_support=50)
print("\nI(history pattern; click | target pattern), ground truth from the generator's click probabilities")
print(" " * 12 + "".join(f"{t:>16s}" for t in pattern_sets.target_names))
for name, row in zip(pattern_sets.history_names, mats["truth"]):
    print(f"{name:>12s}" + "".join(f"{x:16.5f}" for x in row))
print("\nsame matrix from observed labels, Pearson vs truth: %.3f"
      % analysis.similarity_or_nan(mats["labels"], mats["truth"]))
