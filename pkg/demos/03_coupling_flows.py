"""Coupling flows with a residual transformer block: exact inversion, exact
log-determinants, and the attention maps the blocks learn to use.

A coupling layer leaves half the channels alone and affinely transforms the
other half, so inversion is algebra, not optimization. The attention block in
front of the conv net lets the transform consult positions outside the conv
receptive field; zeroing its gain recovers the pure convolutional layer.
"""

import numpy as np

from alignflow.flows import CouplingLayer, FlowStack
from alignflow.numerics import Rng, Tensor

rng = Rng(2)

stack = FlowStack(channels=4, depth=3, hidden=8, rng=rng, head_init="small")
x = Tensor(rng.normal((4, 10)))

z, logdet = stack.forward(x)
back = stack.inverse(z)
print("round-trip max abs error:", f"{np.abs(back.data - x.data).max():.2e}")
print("total log-determinant:", round(logdet.item(), 5))

# The analytic logdet is just the sum of the log-scales; verify it against a
# dense numerical Jacobian on a small instance (2 channels x 3 frames).
layer = CouplingLayer(2, 5, Rng(3), key_dim=4, head_init="small")
x0 = Rng(4).normal((2, 3))
n = x0.size
J = np.zeros((n, n))
h = 1e-6
for col in range(n):
    e = np.zeros(n)
    e[col] = h
    yp, _ = layer.forward(Tensor((x0.reshape(-1) + e).reshape(2, 3)))
    ym, _ = layer.forward(Tensor((x0.reshape(-1) - e).reshape(2, 3)))
    J[:, col] = (yp.data - ym.data).reshape(-1) / (2 * h)
_, numeric = np.linalg.slogdet(J)
_, analytic = layer.forward(Tensor(x0))
print("dense-Jacobian logdet:", round(numeric, 8), " analytic:", round(analytic.item(), 8))

# Attention maps are row-stochastic; each row says where that time position
# looked while computing the transform.
amap = stack.layers[0].attention_map(x)
print("\nlayer-0 attention map rows sum to:", np.round(amap.sum(axis=1), 12)[:4], "...")
print("attention row for frame 0:", np.round(amap[0], 3))

# Ablation path: with the attention gain at zero the layer is purely
# convolutional, and the attention parameters are provably inert.
conv_only = CouplingLayer(4, 8, Rng(5), attn_gain=0.0, head_init="small")
xin = Tensor(Rng(6).normal((4, 6)))
y1, _ = conv_only.forward(xin)
for p in (conv_only.wq, conv_only.wk, conv_only.wv, conv_only.wo):
    p.data[:] = 1e3
y2, _ = conv_only.forward(xin)
print("\nattention-off outputs identical after scrambling attention params:",
      np.array_equal(y1.data, y2.data))
