"""Tour of the tape-based autodiff core: build a small computation,
pull gradients back through it, and cross-check one entry against a
finite difference.
"""

import numpy as np

from mmea import autodiff as ad

rng = np.random.default_rng(0)

# Leaf tensors: float64 arrays plus a requires_grad mark.
w = ad.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
b = ad.Tensor(np.zeros(4), requires_grad=True)
x = ad.Tensor(rng.standard_normal((5, 3)))
target = ad.Tensor(rng.standard_normal((5, 4)))

def score_of():
    hidden = ad.tanh(ad.add_row(ad.matmul(x, w), b))
    normed = ad.l2_normalize_rows(hidden)
    # mean cosine between each produced row and its target row
    return ad.tensor_mean(ad.rowwise_dot(normed, ad.l2_normalize_rows(target)))

# Ops execute eagerly; a Tape only records what happens inside it.
with ad.Tape() as tape:
    score = score_of()
    tape.backward(score)

print("score:", score.item())
print("dscore/dw shape:", w.grad.shape, " dscore/db shape:", b.grad.shape)

# Check one weight entry against a central finite difference.
h = 1e-6
orig = w.data[1, 2]
results = []
for delta in (h, -h):
    w.data[1, 2] = orig + delta
    results.append(score_of().item())
w.data[1, 2] = orig
numeric = (results[0] - results[1]) / (2 * h)
print(f"analytic {w.grad[1, 2]:+.10f}  vs  numeric {numeric:+.10f}")
assert abs(numeric - w.grad[1, 2]) < 1e-7
print("gradient matches finite differences")
