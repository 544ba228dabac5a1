"""The U-shaped shift-GCN module with a selective-scan core, and the stack.

One module runs, per Algorithm-style composition:

    entry shift-GCN (Cin -> C)
    [optional partition gate]
    encoder: three shift-GCNs laddering C -> C/2 -> C/4 -> D
    flatten each frame's vertex features into one [V*D] embedding
    gated selective-scan block over time (identity when ablated)
    unflatten back to [N, D, T, V]
    decoder: three shift-GCNs D -> C/4 -> C/2 -> C, adding the encoder
    skips from the matching depths
    exit: ReLU(temporal shift block + unit-TCN residual of the module input)

Modules are stacked; a global average pool over (T, V) and a linear head
produce the class logits.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import Linear, Module, Parameter, PointwiseConv2d
from .shift_gcn import ShiftSGcnBlock, ShiftTcnBlock, UnitTcnResidual
from .ssm import IMambaBlock
from .tensor import Tensor


def flatten_vertices(x: Tensor) -> Tensor:
    """[N, D, T, V] -> [N, T, V*D] with out[n,t,v*D+d] = x[n,d,t,v]."""
    n, d, t, v = x.shape
    return T.reshape(T.permute(x, (0, 2, 3, 1)), (n, t, v * d))


def unflatten_vertices(x: Tensor, v: int) -> Tensor:
    """Exact inverse of ``flatten_vertices``."""
    n, t, vd = x.shape
    if vd % v != 0:
        raise ShapeError(f"embedding dim {vd} is not divisible by {v} vertices")
    return T.permute(T.reshape(x, (n, t, v, vd // v)), (0, 3, 1, 2))


class PartitionGate(Module):
    """Blend joint features with pooled features of their anatomical group.

    labels is the one-hot [V, K] membership matrix; pooling averages member
    joints, a pointwise conv mixes the pooled channels, and the result is
    scattered back to every member joint.  The learnable per-channel gate
    interpolates between joint-level and group-level features.
    """

    def __init__(self, channels: int, labels: np.ndarray, rng: np.random.Generator):
        super().__init__()
        labels = np.asarray(labels, dtype=T.get_default_dtype())
        if labels.ndim != 2:
            raise ConfigError(f"partition labels must be [V, K], got {labels.shape}")
        row_sums = labels.sum(axis=1)
        if not np.all((labels == 0) | (labels == 1)) or not np.all(row_sums == 1):
            raise ConfigError("every joint must belong to exactly one partition")
        if np.any(labels.sum(axis=0) == 0):
            raise ConfigError("every partition must contain at least one joint")
        self._labels = labels
        self._pool = labels / labels.sum(axis=0, keepdims=True)
        self.gate = Parameter(np.full((1, channels, 1, 1), 0.5, dtype=T.get_default_dtype()))
        self.proj = PointwiseConv2d(channels, channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        n, c, t, v = x.shape
        if v != self._labels.shape[0]:
            raise ShapeError(f"gate built for {self._labels.shape[0]} joints, got {v}")
        pool = Tensor(self._pool, dtype=x.dtype)
        scatter = Tensor(self._labels.T.copy(), dtype=x.dtype)
        z = x @ pool                      # [N, C, T, K] group means
        e = self.proj(z) @ scatter        # broadcast back: [N, C, T, V]
        # gate*x + (1-gate)*e, written so a closed gate (or e == x) passes
        # x through bit-exactly
        return x + (1.0 - self.gate) * (e - x)


class SimbaModule(Module):
    """One encoder/scan/decoder block; maps [N, Cin, T, V] to [N, C, T, V]."""

    def __init__(self, c_in: int, c: int, d: int, v: int, w: int,
                 rng: np.random.Generator, *, with_imamba: bool = True,
                 partition_labels: np.ndarray | None = None,
                 tcn_radius: int = 1, conv_kernel: int = 4,
                 norm_placement: str = "post", scan_chunk: int = 0):
        super().__init__()
        if c % 4 != 0:
            raise ConfigError(f"channel dimension must be divisible by 4, got {c}")
        self.c_in, self.c, self.d, self.v = c_in, c, d, v
        self.entry = ShiftSGcnBlock(c_in, c, rng)
        self.gate = PartitionGate(c, partition_labels, rng) if partition_labels is not None else None
        self.enc = [
            ShiftSGcnBlock(c, c // 2, rng),
            ShiftSGcnBlock(c // 2, c // 4, rng),
            ShiftSGcnBlock(c // 4, d, rng),
        ]
        self.imamba = IMambaBlock(v * d, w, rng, conv_kernel=conv_kernel,
                                  norm_placement=norm_placement,
                                  scan_chunk=scan_chunk) if with_imamba else None
        self.dec = [
            ShiftSGcnBlock(d, c // 4, rng),
            ShiftSGcnBlock(c // 4, c // 2, rng),
            ShiftSGcnBlock(c // 2, c, rng),
        ]
        self.tcn = ShiftTcnBlock(c, rng, radius=tcn_radius)
        self.residual = UnitTcnResidual(c_in, c, rng)

    def encode(self, x_l: Tensor):
        """Run the down ladder; returns the bottleneck and the skip stack."""
        x2 = self.enc[0](x_l)
        x3 = self.enc[1](x2)
        x4 = self.enc[2](x3)
        return x4, (x_l, x2, x3)

    def decode(self, xn: Tensor, skips) -> Tensor:
        x_l, x2, x3 = skips
        x5 = self.dec[0](xn) + x3
        x6 = self.dec[1](x5) + x2
        return self.dec[2](x6) + x_l

    def forward(self, x_in: Tensor) -> Tensor:
        x_l = self.entry(x_in)
        if self.gate is not None:
            x_l = self.gate(x_l)
        x4, skips = self.encode(x_l)
        if self.imamba is not None:
            flat = flatten_vertices(x4)
            x4 = unflatten_vertices(self.imamba(flat), self.v)
        x7 = self.decode(x4, skips)
        return T.relu(self.tcn(x7) + self.residual(x_in))

    def forward_trace(self, x_in: Tensor):
        """Forward pass that also reports each stage's output shape."""
        trace = {"input": x_in.shape}
        x_l = self.entry(x_in)
        trace["entry"] = x_l.shape
        if self.gate is not None:
            x_l = self.gate(x_l)
            trace["gate"] = x_l.shape
        x2 = self.enc[0](x_l)
        x3 = self.enc[1](x2)
        x4 = self.enc[2](x3)
        trace["enc1"], trace["enc2"], trace["enc3"] = x2.shape, x3.shape, x4.shape
        if self.imamba is not None:
            flat = flatten_vertices(x4)
            trace["flatten"] = flat.shape
            flat = self.imamba(flat)
            trace["imamba"] = flat.shape
            x4 = unflatten_vertices(flat, self.v)
            trace["unflatten"] = x4.shape
        x5 = self.dec[0](x4) + x3
        x6 = self.dec[1](x5) + x2
        x7 = self.dec[2](x6) + x_l
        trace["dec1"], trace["dec2"], trace["dec3"] = x5.shape, x6.shape, x7.shape
        out = T.relu(self.tcn(x7) + self.residual(x_in))
        trace["output"] = out.shape
        return out, trace


class SimbaModel(Module):
    """A stack of modules plus a pooled linear classification head."""

    def __init__(self, *, in_channels: int, channels: int, mamba_d: int,
                 vertices: int, ssm_w: int, depth: int, num_classes: int,
                 rng: np.random.Generator, with_imamba: bool = True,
                 partition_labels: np.ndarray | None = None,
                 tcn_radius: int = 1, conv_kernel: int = 4,
                 norm_placement: str = "post", scan_chunk: int = 0):
        super().__init__()
        if depth < 1:
            raise ConfigError(f"depth must be >= 1, got {depth}")
        self.modules_ = [
            SimbaModule(in_channels if i == 0 else channels, channels, mamba_d,
                        vertices, ssm_w, rng, with_imamba=with_imamba,
                        partition_labels=partition_labels, tcn_radius=tcn_radius,
                        conv_kernel=conv_kernel, norm_placement=norm_placement,
                        scan_chunk=scan_chunk)
            for i in range(depth)
        ]
        self.head = Linear(channels, num_classes, rng)
        self.in_channels = in_channels
        self.num_classes = num_classes

    def features(self, x: Tensor) -> Tensor:
        for module in self.modules_:
            x = module(x)
        return x.mean(axis=(2, 3))  # global average over frames and joints

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"model expects [N,{self.in_channels},T,V], got {x.shape}")
        return self.head(self.features(x))
