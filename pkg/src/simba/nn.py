"""Parameter containers and the handful of layers the blocks are built from."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


class Parameter(Tensor):
    """A leaf tensor updated by the optimizer.

    ``decay`` marks whether weight decay applies; only conv/linear weight
    matrices carry it, never biases or normalization gains.
    """

    __slots__ = ("decay",)

    def __init__(self, data, decay: bool = False):
        super().__init__(data, requires_grad=True)
        self.decay = decay


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Fan-in-scaled uniform init on [-sqrt(1/fan_in), sqrt(1/fan_in)]."""
    bound = float(np.sqrt(1.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(T.get_default_dtype())


class Module:
    """Minimal block base: parameter discovery, buffers, train/eval mode."""

    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield (prefix + name, value)
        for name, child in self._children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        """Non-trainable state that still belongs in a checkpoint (BN stats).

        Underscore-prefixed arrays are caches, not state, and are skipped.
        """
        for name, value in vars(self).items():
            if isinstance(value, np.ndarray) and not name.startswith("_"):
                yield (prefix + name, value)
        for name, child in self._children():
            yield from child.named_buffers(prefix + name + ".")

    def train(self, mode: bool = True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    """y = x @ w + b with w of shape [fan_in, fan_out]."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.w = Parameter(uniform_init(rng, (fan_in, fan_out), fan_in), decay=True)
        self.b = Parameter(np.zeros(fan_out, dtype=T.get_default_dtype())) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.w.shape[0]:
            raise ShapeError(f"linear expects last dim {self.w.shape[0]}, got {x.shape}")
        out = x @ self.w
        if self.b is not None:
            out = out + self.b
        return out


class PointwiseConv2d(Module):
    """1x1 conv over the channel axis of [N, C, T, V]."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        super().__init__()
        self.w = Parameter(uniform_init(rng, (c_out, c_in), c_in), decay=True)
        self.b = Parameter(np.zeros(c_out, dtype=T.get_default_dtype()))

    def forward(self, x: Tensor) -> Tensor:
        return T.pointwise_conv2d(x, self.w, self.b)


class CausalConv1d(Module):
    """Depthwise causal convolution along time for [N, T, D] sequences."""

    def __init__(self, channels: int, kernel: int, rng: np.random.Generator):
        super().__init__()
        self.w = Parameter(uniform_init(rng, (channels, kernel), kernel), decay=True)
        self.b = Parameter(np.zeros(channels, dtype=T.get_default_dtype()))

    def forward(self, x: Tensor) -> Tensor:
        return T.causal_conv1d_depthwise(x, self.w, self.b)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        dt = T.get_default_dtype()
        self.gamma = Parameter(np.ones(channels, dtype=dt))
        self.beta = Parameter(np.zeros(channels, dtype=dt))
        self.running_mean = np.zeros(channels, dtype=dt)
        self.running_var = np.ones(channels, dtype=dt)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm2d(x, self.gamma, self.beta, self.running_mean,
                              self.running_var, self.training, self.momentum, self.eps)


class RMSNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gain = Parameter(np.ones(dim, dtype=T.get_default_dtype()))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.rms_norm(x, self.gain, self.eps)
