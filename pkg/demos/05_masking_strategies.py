"""Compare masking strategies, including the degenerate full-mask regime.

Three named strategies differ in how many attention values are candidates
for masking and with what probability:

    stkim   10 instances at p = 0.6
    weno    95 instances at p = 1.0
    mhim    1% of instances at p = 0.5

On bags smaller than 95 instances the second strategy zeroes every
attention value; the op then discards the mask and returns the input
unchanged (a logged degenerate event), so training continues safely.
"""

import numpy as np

from acmil import Rng, StkimConfig, softmax, stkim_mask
from acmil.cli import MASK_PRESETS

attn = softmax(Rng(0).normal_array((50,)))
print("bag of 50 instances; pre-mask top-10 mass "
      f"{np.sort(attn)[::-1][:10].sum():.3f}\n")

for name, fields in MASK_PRESETS.items():
    cfg = StkimConfig(count=fields["count"], fraction=fields["fraction"], prob=fields["prob"])
    rng = Rng(42)
    masked_counts, top10_masses = [], []
    for _ in range(200):
        res = stkim_mask(attn, cfg, rng, training=True)
        masked_counts.append(int(res.zeroed.sum()))
        top10_masses.append(float(np.sort(res.attention)[::-1][:10].sum()))
    k_eff = cfg.resolve_k(len(attn))
    print(f"{name:6s} resolves to k={k_eff:3d}, p={cfg.prob}")
    print(f"        masked per draw: mean {np.mean(masked_counts):5.2f}  "
          f"max {max(masked_counts)}")
    print(f"        post-mask top-10 mass: mean {np.mean(top10_masses):.3f}")
    if max(masked_counts) == 0 and cfg.prob == 1.0:
        print("        (every draw hit the degenerate full-mask fallback)")
    print()
