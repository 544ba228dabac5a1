"""Shift-based graph convolution blocks.

Graph convolutions are replaced by index shifts plus pointwise (1x1)
convolutions: the spatial shift rotates each channel's vertex features by
the channel index (a pure permutation within every frame), the temporal
shift slides channel groups along the frame axis with zero fill at the
boundaries.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .nn import BatchNorm2d, Module, PointwiseConv2d
from .tensor import Tensor


def _spatial_index(c: int, v: int, inverse: bool = False) -> np.ndarray:
    chans = np.arange(c)[:, None]
    verts = np.arange(v)[None, :]
    return (verts - chans) % v if inverse else (verts + chans) % v


@lru_cache(maxsize=64)
def _spatial_grids(c: int, t: int, v: int, inverse: bool):
    ci = np.arange(c)[:, None, None]
    ti = np.arange(t)[None, :, None]
    vmap = _spatial_index(c, v, inverse)[:, None, :]
    return ci, ti, vmap


def spatial_shift(x: Tensor, inverse: bool = False) -> Tensor:
    """out[n,c,t,v] = x[n,c,t,(v+c) mod V]; ``inverse`` undoes it exactly.

    A pure permutation within every (n, t) slice, so its adjoint is the
    inverse permutation (no scatter-add required).
    """
    if x.ndim != 4:
        raise ShapeError(f"spatial_shift expects [N,C,T,V], got {x.shape}")
    n, c, t, v = x.shape
    data = x.data[(slice(None),) + _spatial_grids(c, t, v, inverse)]

    def backward(g):
        if x.requires_grad:
            x._accumulate(g[(slice(None),) + _spatial_grids(c, t, v, not inverse)])

    return T._make(data, (x,), backward)


def temporal_offsets(c: int, radius: int) -> np.ndarray:
    """Per-channel frame offset: channel c moves by (c mod (2r+1)) - r."""
    return np.arange(c) % (2 * radius + 1) - radius


@lru_cache(maxsize=64)
def _temporal_grids(c: int, t: int, v: int, radius: int, negate: bool):
    offsets = temporal_offsets(c, radius)
    if negate:
        offsets = -offsets
    src = np.arange(t)[None, :] - offsets[:, None]  # [C, T]
    tmap = np.where((src >= 0) & (src < t), src, t)  # t indexes an appended zero frame
    return (np.arange(c)[:, None, None], tmap[:, :, None],
            np.arange(v)[None, None, :])


def _shift_frames(arr: np.ndarray, radius: int, negate: bool) -> np.ndarray:
    """arr[n,c,t-u(c),v] with zero fill for out-of-range frames."""
    n, c, t, v = arr.shape
    padded = np.concatenate([arr, np.zeros((n, c, 1, v), dtype=arr.dtype)], axis=2)
    return padded[(slice(None),) + _temporal_grids(c, t, v, radius, negate)]


def temporal_shift(x: Tensor, radius: int) -> Tensor:
    """Shift channel groups along the frame axis, zero-filled at the ends.

    out[n,c,t,v] = x[n,c,t-u(c),v] with u from ``temporal_offsets``; frames
    pulled from outside [0, T) read as zero.  Each input frame feeds at
    most one output frame, so the adjoint is the shift with negated
    offsets.
    """
    if x.ndim != 4:
        raise ShapeError(f"temporal_shift expects [N,C,T,V], got {x.shape}")
    if radius < 0:
        raise ShapeError(f"shift radius must be >= 0, got {radius}")
    if radius == 0:
        return x
    data = _shift_frames(x.data, radius, negate=False)

    def backward(g):
        if x.requires_grad:
            x._accumulate(_shift_frames(g, radius, negate=True))

    return T._make(data, (x,), backward)


class ShiftSGcnBlock(Module):
    """Spatial shift -> pointwise conv -> BN -> ReLU, mapping Cin to Cout."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, relu: bool = True):
        super().__init__()
        self.conv = PointwiseConv2d(c_in, c_out, rng)
        self.bn = BatchNorm2d(c_out)
        self.relu = relu

    def forward(self, x: Tensor) -> Tensor:
        out = self.bn(self.conv(spatial_shift(x)))
        return T.relu(out) if self.relu else out


class ShiftTcnBlock(Module):
    """Temporal shift -> pointwise conv -> BN; shape-preserving, no activation.

    The ReLU belongs to the caller: it is applied after the residual sum.
    """

    def __init__(self, channels: int, rng: np.random.Generator, radius: int = 1):
        super().__init__()
        self.conv = PointwiseConv2d(channels, channels, rng)
        self.bn = BatchNorm2d(channels)
        self.radius = radius

    def forward(self, x: Tensor) -> Tensor:
        return self.bn(self.conv(temporal_shift(x, self.radius)))


class UnitTcnResidual(Module):
    """Pointwise conv + BN used as the block residual, mapping Cin to Cout."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        super().__init__()
        self.conv = PointwiseConv2d(c_in, c_out, rng)
        self.bn = BatchNorm2d(c_out)

    def forward(self, x: Tensor) -> Tensor:
        return self.bn(self.conv(x))
