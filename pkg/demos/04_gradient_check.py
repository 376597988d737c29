"""Verify the hand-written backward pass against central differences.

The whole training objective (bag loss + per-branch loss + heatmap
diversity, through the masking renormalisation and softmaxes) is
differentiated analytically in acmil.losses.  This replays the recorded
stochastic masks so the objective is deterministic, then perturbs every
parameter coordinate by +/- eps.
"""

from acmil import check_gradients
from acmil.model import ModelDims

print("tiny model, masking off:")
err = check_gradients(seed=0, mask_prob=0.0)
print(f"  max relative error {err:.3e}")

print("tiny model, masking on (frozen masks):")
err = check_gradients(seed=0, mask_prob=0.6)
print(f"  max relative error {err:.3e}")

print("larger model, four classes, five branches:")
dims = ModelDims(feature_dim=12, embed_dim=6, attn_dim=5, branches=5, classes=4)
err = check_gradients(seed=1, dims=dims, n_instances=15, mask_prob=0.6)
print(f"  max relative error {err:.3e}")

print("\ncentral differences lose accuracy when eps is too large or too small:")
for eps in (1e-2, 1e-4, 1e-6):
    err = check_gradients(seed=2, mask_prob=0.0, eps=eps)
    print(f"  eps={eps:.0e}  max relative error {err:.3e}")
