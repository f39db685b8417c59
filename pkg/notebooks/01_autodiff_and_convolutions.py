"""
Autodiff and convolutions
=========================

The tensor engine records every op so that one call to ``backward`` fills
``.grad`` on the leaves. The convolutions are vectorized with im2col and are
checked against plain nested loops.
"""

import numpy as np

from tsfn import ConvSpec, Tensor, backward, conv1d_temporal, conv2d_spatial, grad_check
from tsfn import oracles
from tsfn.tensor import sigmoid, tsum

# A scalar function of two leaves: f = sum(sigmoid(a * b))
rng = np.random.default_rng(0)
a = Tensor(rng.normal(size=3), requires_grad=True)
b = Tensor(rng.normal(size=3), requires_grad=True)
backward(tsum(sigmoid(a * b)))
s = 1 / (1 + np.exp(-a.data * b.data))
print("df/da", a.grad, "by hand", s * (1 - s) * b.data)

# Causal temporal convolution: output at t only sees inputs at t, t-2, t-4
x = np.array([[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]])  # (C=1, T=7)
w = np.ones((1, 1, 3))
spec = ConvSpec(out_channels=1, in_channels=1, temporal_extent=3, spatial_extent=1,
                dilation=2, stride=1, padding="causal")
y = conv1d_temporal(Tensor(x), Tensor(w), Tensor(np.zeros(1)), spec)
print("causal dilated sums", y.data)
print("loop oracle        ", oracles.conv1d_loops(x, w, np.zeros(1), 2, 1, "causal"))

# Changing a future frame leaves earlier outputs alone
x2 = x.copy()
x2[0, -1] = 100.0
y2 = conv1d_temporal(Tensor(x2), Tensor(w), Tensor(np.zeros(1)), spec)
print("outputs before the last frame unchanged:", np.array_equal(y.data[..., :-1], y2.data[..., :-1]))

# Per-frame spatial convolution on a batch of (C, T, H, W) clips
clip = rng.normal(size=(1, 2, 3, 6, 6))
ws, bs = rng.normal(size=(4, 2, 3, 3)), rng.normal(size=4)
spec2 = ConvSpec(4, 2, 1, 3, 1, 1, "same")
got = conv2d_spatial(Tensor(clip), Tensor(ws), Tensor(bs), spec2).data
want = np.stack([oracles.conv2d_loops(clip[0, :, t], ws, bs, 1, "same") for t in range(3)], axis=1)
print("conv2d vs loops, max abs error", np.abs(got[0] - want).max())

# Central differences against the analytic gradient
xt = Tensor(clip, requires_grad=True)
wt = Tensor(ws, requires_grad=True)
err = grad_check(lambda: tsum(sigmoid(conv2d_spatial(xt, wt, Tensor(bs), spec2))), [xt, wt])
print("relative gradient error", err)
