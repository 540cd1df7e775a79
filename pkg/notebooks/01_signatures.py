"""
Signatures of short streams
===========================

A walk through the feature map the rest of the package is built on.
"""

import numpy as np

from sigflow import FeatureSpec, Stream, augment, signature, tensor_product

# a two-channel stream sampled at five irregular times
s = Stream([0.0, 0.3, 0.5, 1.2, 2.0], [[0.0, 1.0], [1.0, 0.5], [0.5, 0.0], [2.0, 1.0], [1.0, 2.0]])
sig = signature(s, depth=3)
print("level sizes:", [lvl.size for lvl in sig.levels])

# level 1 is the total increment
print("increment:", sig.levels[1], "=", s.values[-1] - s.values[0])

# the antisymmetric part of level 2 is the signed Levy area
L2 = sig.levels[2].reshape(2, 2)
print("levy area:", 0.5 * (L2[0, 1] - L2[1, 0]))

# Chen: the signature of a concatenation is the tensor product of the pieces
head = Stream(s.times[:3], s.values[:3])
tail = Stream(s.times[2:], s.values[2:])
chen = tensor_product(signature(head, 3), signature(tail, 3))
print("chen error:", max(np.abs(a - b).max() for a, b in zip(chen.levels, sig.levels)))

# reparametrizing time leaves the signature alone
slow = Stream(s.times ** 2, s.values)
print("time invariance:", np.abs(signature(slow, 3).levels[3] - sig.levels[3]).max())

# adding a time channel breaks that invariance, which is usually what we want
print("with time:", signature(augment(slow, time=True), 3).levels[1],
      "vs", signature(augment(s, time=True), 3).levels[1])

# features used by the generator and the loss: cumsum, time and basepoint, levels 1..depth
for depth in (4, 5):
    spec = FeatureSpec(depth)
    print(f"depth {depth}: {spec.dim(1)} features for a scalar stream")
print(FeatureSpec(4).transform(Stream(np.arange(6.0), np.sin(np.arange(6.0))[:, None]))[:5])
