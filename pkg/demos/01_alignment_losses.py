"""
Alignment losses on toy feature clouds
======================================

Two Gaussian clouds, the second pushed away from the first.  Every
discrepancy grows with the push, and all of them vanish when the
clouds coincide.
"""

import numpy as np
import torch

from tsda import losses as L

rng = np.random.default_rng(0)
zs = torch.tensor(rng.normal(size=(64, 4)))

print(f"{'shift':>6} {'mmd':>8} {'coral':>8} {'homm3':>8}")
for shift in (0.0, 0.5, 1.0, 2.0):
    zt = torch.tensor(rng.normal(size=(64, 4))) * (1 + shift) + shift
    print(f"{shift:6.1f} {L.mmd(zs, zt).item():8.4f} {L.coral(zs, zt).item():8.4f} "
          f"{L.homm(zs, zt).item():8.4f}")

# LMMD only compares matching classes.  Give the target soft labels that
# agree with the source labels and the loss stays small even though the
# two classes sit far apart.
ys = torch.tensor(rng.integers(0, 2, 64))
zs2 = zs + 4 * ys[:, None]
pt = torch.nn.functional.one_hot(ys, 2).double() * 0.9 + 0.05
print("lmmd, aligned classes :", round(L.lmmd(zs2, ys, zs2 + 0.1, pt).item(), 4))
print("lmmd, swapped classes :", round(L.lmmd(zs2, ys, zs2 + 0.1, pt.flip(1)).item(), 4))

# The gradient reversal layer is the identity going forward and flips the
# sign of the gradient going back.
x = torch.ones(3, requires_grad=True)
L.gradient_reversal(x, 0.5).sum().backward()
print("GRL gradient:", x.grad.tolist())
