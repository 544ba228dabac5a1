"""How the shift blocks mix information without real graph convolutions.

Run from the repo root:  python3 demos/02_shift_blocks.py
"""

import numpy as np

from simba import ShiftSGcnBlock, ShiftTcnBlock, Tensor, spatial_shift, temporal_shift
from simba.shift_gcn import temporal_offsets

print("=== spatial shift: channel c rotates the joint axis by c ===")
# one frame, 4 channels, 5 joints; values encode the joint index
x = np.zeros((1, 4, 1, 5))
x[0, :, 0, :] = np.arange(5)[None, :]
shifted = spatial_shift(Tensor(x)).data
for c in range(4):
    print(f"channel {c}: {x[0, c, 0].astype(int)} -> {shifted[0, c, 0].astype(int)}")
print("every row is a rotation; a following 1x1 conv therefore sees a")
print("different joint's feature in every channel - that is the whole trick.")

restored = spatial_shift(spatial_shift(Tensor(x)), inverse=True).data
print("inverse shift restores the input exactly:", np.array_equal(restored, x))

print("\n=== temporal shift: channels slide along the frame axis ===")
x = np.zeros((1, 3, 4, 1))
x[0, :, :, 0] = np.arange(1.0, 5.0)[None, :]
print("offsets for 3 channels at radius 1:", temporal_offsets(3, 1))
shifted = temporal_shift(Tensor(x), 1).data
for c in range(3):
    print(f"channel {c}: {x[0, c, :, 0]} -> {shifted[0, c, :, 0]}  (zeros enter at the edge)")

print("\n=== the two block types ===")
rng = np.random.default_rng(0)
sgcn = ShiftSGcnBlock(3, 8, rng)
tcn = ShiftTcnBlock(8, rng, radius=1)
x = Tensor(rng.normal(size=(2, 3, 6, 5)))
hidden = sgcn(x)
out = tcn(hidden)
print(f"spatial block: {x.shape} -> {hidden.shape} (shift, 1x1 conv, BN, ReLU)")
print(f"temporal block: {hidden.shape} -> {out.shape} (shift, 1x1 conv, BN; "
      "the ReLU waits for the residual sum)")
print("spatial block output is nonnegative:", bool(np.all(hidden.data >= 0)))
